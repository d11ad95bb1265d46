// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// LoRA adapter data model and its on-disk form (safetensors + JSON config).

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cba/tensor.hpp"

namespace cba::adapter {

inline constexpr const char* kWeightsFile = "adapter_model.safetensors";
inline constexpr const char* kConfigFile = "adapter_config.json";

struct LoraConfig {
    int rank = 8;
    double alpha = 16.0;
    std::vector<std::string> target_modules;
    int num_layers = 1;
    std::string base_model_id;
    DType dtype = DType::kFloat32;
    /// When false the effective delta is B^T A with no alpha/r factor.
    bool use_scaling = true;

    double scaling() const { return use_scaling ? alpha / static_cast<double>(rank) : 1.0; }
    int module_index(const std::string& name) const;  // -1 when absent
    void validate() const;
};

nlohmann::json to_json(const LoraConfig& config);
LoraConfig config_from_json(const nlohmann::json& j);

/// One attachment: A is r x m (input side), B is r x n (output side).
struct AdapterModule {
    int layer_index = 0;
    std::string module_name;
    Matrix A;
    Matrix B;
};

/// Identifies a single inline neuron: row `neuron` of a module's A and B.
struct NeuronId {
    int layer = 0;
    std::string module;
    int neuron = 0;

    auto operator<=>(const NeuronId&) const = default;
};

struct AdapterSet {
    LoraConfig config;
    /// Layer-major, then target_modules order.
    std::vector<AdapterModule> modules;
    std::string provenance = "clean";

    std::size_t inline_neuron_count() const;
    std::size_t parameter_count() const;

    const AdapterModule* find(int layer, const std::string& module_name) const;
    AdapterModule* find(int layer, const std::string& module_name);
    /// Position of (layer, module) in `modules`; throws when absent.
    std::size_t slot_of(int layer, const std::string& module_name) const;

    /// Every neuron, ordered like `modules` then by neuron index.
    std::vector<NeuronId> neurons() const;

    /// Checks the config invariants, shapes and completeness of `modules`.
    void validate() const;

    /// Rounds all parameters to config.dtype so save/load is an exact round trip.
    void round_to_storage();
};

/// Inline-neuron count r * |target_modules| * l.
std::size_t inline_neuron_count(const LoraConfig& config);

/// A zero-initialized set with A of width `in_dim` and B of width `out_dim`.
AdapterSet make_zero_adapter(const LoraConfig& config, int in_dim, int out_dim);

/// Effective weight delta (n x m): scaling * B^T A.
Matrix merged_delta(const AdapterModule& module, const LoraConfig& config);

/// On-disk tensor name: layers.{layer}.{module}.lora_{A|B}.weight
std::string tensor_name(int layer, const std::string& module_name, char which);

/// `path` is a directory holding kWeightsFile and kConfigFile, or the weights file itself.
AdapterSet load_adapter(const std::filesystem::path& path);
void save_adapter(const AdapterSet& set, const std::filesystem::path& dir);

/// In-memory form of what save_adapter writes for the weights file.
std::vector<std::uint8_t> serialize_weights(const AdapterSet& set);
AdapterSet parse_adapter(std::span<const std::uint8_t> weights, const nlohmann::json& config);

bool same_architecture(const AdapterSet& lhs, const AdapterSet& rhs);

}  // namespace cba::adapter
