// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small deterministic reference model with LoRA attachment slots.
//
// Tokens are mean-pooled through a frozen embedding, then every layer applies
// its slots in order. Each slot computes
//
//     z = W u + bias + s * B^T (A u),   s = alpha / r
//     out = act(z)            (or u + act(z) when residual)
//
// where A u is the slot's inline activation vector. A linear head maps the
// final state to class logits (classification) or vocabulary logits
// (generation, greedy decoding).

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cba/adapter_store.hpp"
#include "cba/tensor.hpp"

namespace cba::model {

enum class Activation { kTanh, kIdentity };
enum class HeadMode { kClassify, kGenerate };

using Tokens = std::vector<int>;

struct Topology {
    std::string model_id = "desk-base";
    int vocab_size = 32;
    int embed_dim = 16;
    int num_layers = 2;
    std::vector<std::string> slot_names{"q", "v"};
    Activation activation = Activation::kTanh;
    bool residual = true;
    HeadMode head_mode = HeadMode::kClassify;
    /// Number of classes, or vocab_size in generation mode.
    int num_outputs = 2;
    /// Optional display names for outputs (class labels).
    std::vector<std::string> output_labels;
    /// Optional word list for whitespace tokenization; index = token id.
    std::vector<std::string> vocab;

    void validate() const;
};

nlohmann::json to_json(const Topology& topology);
Topology topology_from_json(const nlohmann::json& j);

struct Affine {
    Matrix W;     // m x m
    Vector bias;  // m
};

struct BaseModel {
    Topology topology;
    Matrix embedding;                       // vocab_size x m
    std::vector<std::vector<Affine>> layers;  // [layer][slot]
    Matrix head;                            // num_outputs x m
    Vector head_bias;                       // num_outputs

    int slot_index(const std::string& name) const;  // -1 when absent
    void validate() const;
    bool operator==(const BaseModel& other) const;
};

struct InitScales {
    double embedding = 1.0;
    double weight = 1.0;  // multiplied by 1/sqrt(m)
    double bias = 0.1;
    double head = 1.0;    // multiplied by 1/sqrt(m)
};

BaseModel make_random_base(const Topology& topology, std::uint64_t seed, const InitScales& scales = {});

inline constexpr const char* kBaseWeightsFile = "base_model.safetensors";
inline constexpr const char* kTopologyFile = "topology.json";

void save_base(const BaseModel& base, const std::filesystem::path& dir);
BaseModel load_base(const std::filesystem::path& dir);

/// A base model with an optional attached adapter. Both are borrowed.
struct ModelView {
    const BaseModel* base = nullptr;
    const adapter::AdapterSet* adapters = nullptr;
};

/// Throws ShapeError when the adapter cannot attach to the base.
void check_compatible(const BaseModel& base, const adapter::AdapterSet& adapters);

struct TraceEntry {
    int layer = 0;
    std::string module;
    Vector activations;  // length r
};

/// Inline activations for one input, ordered by execution (layer, slot order).
struct InlineActivationTrace {
    std::vector<TraceEntry> entries;
};

/// Per-neuron multiplier applied to inline activations before the B projection.
class NeuronScalingMap {
 public:
    void set(const adapter::NeuronId& id, double factor);
    double get(const adapter::NeuronId& id) const;
    bool empty() const { return factors_.empty(); }
    const std::map<adapter::NeuronId, double>& factors() const { return factors_; }

 private:
    std::map<adapter::NeuronId, double> factors_;
};

Vector forward(const ModelView& view, const Tokens& tokens);

struct TracedOutput {
    Vector logits;
    InlineActivationTrace trace;
};
TracedOutput forward_traced(const ModelView& view, const Tokens& tokens);

Vector forward_scaled(const ModelView& view, const Tokens& tokens, const NeuronScalingMap& scaling);

/// Argmax with ties to the lower index.
int argmax(const Vector& logits);
Vector softmax(const Vector& logits);

/// Greedy continuation in generation mode; returns only the new tokens.
Tokens decode_greedy(const ModelView& view, const Tokens& prompt, int max_new_tokens);

/// W <- W + scaling * B^T A for every attached module.
BaseModel merge_into_base(const BaseModel& base, const adapter::AdapterSet& adapters);

Tokens tokenize(const Topology& topology, const std::string& text);
std::string detokenize(const Topology& topology, const Tokens& tokens);

// Training support -----------------------------------------------------------

struct SlotCache {
    Vector input;       // u
    Vector inline_act;  // A u (before scaling); empty when no adapter on slot
    Vector pre_act;     // z
    const adapter::AdapterModule* module = nullptr;
    std::size_t adapter_slot = 0;
};

struct ForwardCache {
    std::vector<SlotCache> steps;
    Vector final_state;
    Vector logits;
};

Vector forward_cached(const ModelView& view, const Tokens& tokens, ForwardCache& cache);

/// Gradients with the same layout as AdapterSet::modules.
struct AdapterGradient {
    std::vector<Matrix> dA;
    std::vector<Matrix> dB;

    static AdapterGradient zeros_like(const adapter::AdapterSet& set);
    void add(const AdapterGradient& other, double weight = 1.0);
    void scale(double factor);
};

/// Accumulates d(loss)/d(adapter params) into `grad` given d(loss)/d(logits).
void backward(const ModelView& view, const ForwardCache& cache, const Vector& grad_logits,
              AdapterGradient& grad);

}  // namespace cba::model
