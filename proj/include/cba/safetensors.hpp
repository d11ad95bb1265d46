// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal safetensors container: 8-byte little-endian header length, a JSON
// header mapping tensor name -> {dtype, shape, data_offsets}, then the payload.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cba/tensor.hpp"

namespace cba::safetensors {

struct TensorRecord {
    std::string name;
    DType dtype = DType::kFloat32;
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> data;

    std::int64_t element_count() const;
};

struct File {
    /// Payload order; the writer keeps it as given.
    std::vector<TensorRecord> tensors;
    /// String-to-string map stored under "__metadata__".
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

    const TensorRecord* find(std::string_view name) const;
};

std::vector<std::uint8_t> serialize(const File& file);
File parse(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, const File& file);
File read_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cba::safetensors
