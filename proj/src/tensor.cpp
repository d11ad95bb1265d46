// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/tensor.hpp"

#include <bit>
#include <cstring>

#include "cba/error.hpp"

namespace cba {

std::string_view dtype_name(DType dtype) {
    return dtype == DType::kFloat16 ? "float16" : "float32";
}

DType parse_dtype(std::string_view name) {
    if (name == "float32" || name == "F32" || name == "fp32") return DType::kFloat32;
    if (name == "float16" || name == "F16" || name == "fp16") return DType::kFloat16;
    throw FormatError("unsupported dtype '" + std::string(name) + "'");
}

std::string_view safetensors_dtype_tag(DType dtype) {
    return dtype == DType::kFloat16 ? "F16" : "F32";
}

std::size_t dtype_width(DType dtype) {
    return dtype == DType::kFloat16 ? 2 : 4;
}

std::uint16_t float_to_half(float value) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
    const std::uint32_t sign = (bits >> 16) & 0x8000u;
    const std::uint32_t exp = (bits >> 23) & 0xffu;
    std::uint32_t mant = bits & 0x7fffffu;

    if (exp == 0xffu) {  // inf / nan
        return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
    }
    const int e = static_cast<int>(exp) - 127 + 15;
    if (e >= 0x1f) {
        return static_cast<std::uint16_t>(sign | 0x7c00u);
    }
    if (e <= 0) {
        if (e < -10) {
            return static_cast<std::uint16_t>(sign);
        }
        mant |= 0x800000u;
        const int shift = 14 - e;
        std::uint32_t half_mant = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) {
            ++half_mant;
        }
        return static_cast<std::uint16_t>(sign | half_mant);
    }
    std::uint32_t half = sign | (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) {
        ++half;  // carry into the exponent is the correct rounding
    }
    return static_cast<std::uint16_t>(half);
}

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1fu;
    std::uint32_t mant = h & 0x3ffu;
    std::uint32_t bits = 0;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            int e = -1;
            do {
                ++e;
                mant <<= 1;
            } while ((mant & 0x400u) == 0);
            bits = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mant & 0x3ffu) << 13);
        }
    } else if (exp == 0x1fu) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

double round_to_dtype(double value, DType dtype) {
    const float f = static_cast<float>(value);
    if (dtype == DType::kFloat32) return f;
    return half_to_float(float_to_half(f));
}

void round_to_dtype(Matrix& m, DType dtype) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = round_to_dtype(m.data()[i], dtype);
    }
}

std::vector<std::uint8_t> encode_matrix(const Matrix& m, DType dtype) {
    const auto n = static_cast<std::size_t>(m.size());
    std::vector<std::uint8_t> out(n * dtype_width(dtype));
    for (std::size_t i = 0; i < n; ++i) {
        const float f = static_cast<float>(m.data()[i]);
        if (dtype == DType::kFloat32) {
            const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
            for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        } else {
            const std::uint16_t bits = float_to_half(f);
            out[2 * i] = static_cast<std::uint8_t>(bits);
            out[2 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
        }
    }
    return out;
}

Matrix decode_matrix(std::span<const std::uint8_t> bytes, DType dtype, std::int64_t rows, std::int64_t cols) {
    const auto n = static_cast<std::size_t>(rows * cols);
    if (bytes.size() != n * dtype_width(dtype)) {
        throw ShapeError("payload of " + std::to_string(bytes.size()) + " bytes does not hold " +
                         std::to_string(rows) + "x" + std::to_string(cols) + " " +
                         std::string(dtype_name(dtype)) + " values");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < n; ++i) {
        if (dtype == DType::kFloat32) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
            m.data()[i] = std::bit_cast<float>(bits);
        } else {
            const auto bits = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
            m.data()[i] = half_to_float(bits);
        }
    }
    return m;
}

}  // namespace cba
