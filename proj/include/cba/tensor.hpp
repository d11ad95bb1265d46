// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense matrix aliases and storage-dtype conversions.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cba {

/// Row-major so the raw buffer matches the on-disk safetensors layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class DType { kFloat32, kFloat16 };

std::string_view dtype_name(DType dtype);           // "float32" | "float16"
DType parse_dtype(std::string_view name);           // accepts config and safetensors spellings
std::string_view safetensors_dtype_tag(DType dtype);  // "F32" | "F16"
std::size_t dtype_width(DType dtype);

std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

/// Rounds every element to the nearest value representable in `dtype`.
void round_to_dtype(Matrix& m, DType dtype);
double round_to_dtype(double value, DType dtype);

/// Little-endian encode/decode of a row-major matrix payload.
std::vector<std::uint8_t> encode_matrix(const Matrix& m, DType dtype);
Matrix decode_matrix(std::span<const std::uint8_t> bytes, DType dtype, std::int64_t rows, std::int64_t cols);

}  // namespace cba
