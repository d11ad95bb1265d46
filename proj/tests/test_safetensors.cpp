// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cstring>

#include <gtest/gtest.h>

#include "cba/error.hpp"
#include "cba/safetensors.hpp"
#include "test_support.hpp"

namespace cba::safetensors {
namespace {

File sample_file() {
    File f;
    Matrix a(2, 3);
    a << 1, 2, 3, 4, 5, 6;
    Matrix b(1, 2);
    b << -1, 0.5;
    f.tensors.push_back({"x", DType::kFloat32, {2, 3}, encode_matrix(a, DType::kFloat32)});
    f.tensors.push_back({"y", DType::kFloat16, {1, 2}, encode_matrix(b, DType::kFloat16)});
    f.metadata["format"] = "pt";
    return f;
}

std::uint64_t header_len(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | bytes[i];
    return n;
}

std::vector<std::uint8_t> with_header(const std::string& header, std::size_t payload) {
    std::vector<std::uint8_t> out(8 + header.size() + payload, 0);
    std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(n >> (8 * i));
    std::memcpy(out.data() + 8, header.data(), header.size());
    return out;
}

TEST(Safetensors, RoundTrip) {
    const File f = sample_file();
    const File g = parse(serialize(f));
    ASSERT_EQ(g.tensors.size(), 2u);
    EXPECT_EQ(g.tensors[0].name, "x");
    EXPECT_EQ(g.tensors[1].dtype, DType::kFloat16);
    EXPECT_EQ(g.tensors[0].data, f.tensors[0].data);
    EXPECT_EQ(g.tensors[1].data, f.tensors[1].data);
    EXPECT_EQ(g.metadata["format"], "pt");
    ASSERT_NE(g.find("y"), nullptr);
    EXPECT_EQ(g.find("y")->element_count(), 2);
    EXPECT_EQ(g.find("z"), nullptr);
}

TEST(Safetensors, HeaderLayout) {
    const auto bytes = serialize(sample_file());
    const std::uint64_t n = header_len(bytes);
    EXPECT_EQ(n % 8, 0u);
    EXPECT_EQ(bytes.size(), 8 + n + 24 + 4);
    const auto header = nlohmann::json::parse(std::string(bytes.begin() + 8, bytes.begin() + 8 + n));
    EXPECT_EQ(header["x"]["dtype"], "F32");
    EXPECT_EQ(header["x"]["data_offsets"], nlohmann::json::array({0, 24}));
    EXPECT_EQ(header["y"]["data_offsets"], nlohmann::json::array({24, 28}));
}

TEST(Safetensors, SerializeIsDeterministic) {
    EXPECT_EQ(serialize(sample_file()), serialize(sample_file()));
}

TEST(Safetensors, RejectsShortFile) {
    std::vector<std::uint8_t> bytes{1, 2, 3};
    EXPECT_THROW(parse(bytes), FormatError);
}

TEST(Safetensors, RejectsHeaderLongerThanFile) {
    auto bytes = with_header("{}", 0);
    bytes[0] = 200;
    EXPECT_THROW(parse(bytes), FormatError);
}

TEST(Safetensors, RejectsMalformedJson) {
    EXPECT_THROW(parse(with_header("{not json", 0)), FormatError);
    EXPECT_THROW(parse(with_header("[1,2]", 0)), FormatError);
}

TEST(Safetensors, RejectsDuplicateNames) {
    const std::string h =
        R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})";
    EXPECT_THROW(parse(with_header(h, 8)), FormatError);
}

TEST(Safetensors, RejectsOutOfRangeOffsets) {
    const std::string h = R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
    EXPECT_THROW(parse(with_header(h, 4)), FormatError);
}

TEST(Safetensors, RejectsShapeSpanMismatch) {
    const std::string h = R"({"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})";
    EXPECT_THROW(parse(with_header(h, 8)), ShapeError);
}

TEST(Safetensors, RejectsOverlap) {
    const std::string h =
        R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})";
    EXPECT_THROW(parse(with_header(h, 12)), FormatError);
}

TEST(Safetensors, SerializeRejectsDuplicates) {
    File f = sample_file();
    f.tensors.push_back(f.tensors[0]);
    EXPECT_THROW(serialize(f), FormatError);
}

TEST(Safetensors, FileIo) {
    cba::testing::TempDir dir;
    write_file(dir / "t.safetensors", sample_file());
    EXPECT_EQ(read_bytes(dir / "t.safetensors"), serialize(sample_file()));
    EXPECT_EQ(read_file(dir / "t.safetensors").tensors.size(), 2u);
    EXPECT_THROW(read_file(dir / "missing.safetensors"), IoError);
}

}  // namespace
}  // namespace cba::safetensors
