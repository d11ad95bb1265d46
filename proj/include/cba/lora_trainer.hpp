// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch gradient descent over adapter parameters with the base frozen.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "cba/adapter_store.hpp"
#include "cba/model_engine.hpp"

namespace cba::train {

struct LabeledSample {
    model::Tokens tokens;
    int label = 0;
};

struct TrainConfig {
    double learning_rate = 0.1;
    int epochs = 10;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double momentum = 0.0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainReport {
    /// Mean loss of the initial adapter over the corpus, before any update.
    double initial_loss = 0.0;
    /// Mean running loss per epoch; size == epochs.
    std::vector<double> epoch_losses;
    double final_accuracy = 0.0;
    std::optional<double> grad_check_max_rel_error;
};

nlohmann::json to_json(const TrainReport& report);

struct TrainResult {
    adapter::AdapterSet adapter;
    TrainReport report;
};

/// Fresh LoRA init: A ~ U(-1/sqrt(m), 1/sqrt(m)) seeded, B = 0.
adapter::AdapterSet fresh_adapter(const adapter::LoraConfig& config, int embed_dim, std::uint64_t seed);

double sample_loss(const model::ModelView& view, const LabeledSample& sample);
double mean_loss(const model::ModelView& view, std::span<const LabeledSample> corpus);
double accuracy(const model::ModelView& view, std::span<const LabeledSample> corpus);

/// Trains `init` on `corpus`; `base` is never modified. Throws DivergenceError on a non-finite loss.
TrainResult train(const model::BaseModel& base, const adapter::AdapterSet& init,
                  std::span<const LabeledSample> corpus, const TrainConfig& cfg);

/// Starting point of the adaptively trained adapter. Both start with B = 0.
/// kTargetA copies the target's A so neuron i keeps the same input projection
/// in both adapters; kRandom draws A as in fresh_adapter.
enum class AdaptiveInit { kTargetA, kRandom };

std::string adaptive_init_name(AdaptiveInit init);
AdaptiveInit parse_adaptive_init(const std::string& name);

/// Trains a new adapter on top of base merged with `target`. Output provenance is "poisoned".
TrainResult adaptive_train(const model::BaseModel& base, const adapter::AdapterSet& target,
                           std::span<const LabeledSample> poison_corpus, const TrainConfig& cfg,
                           AdaptiveInit init = AdaptiveInit::kTargetA);

model::AdapterGradient analytic_gradient(const model::ModelView& view, const LabeledSample& sample);
model::AdapterGradient numeric_gradient(const model::BaseModel& base, const adapter::AdapterSet& adapters,
                                        const LabeledSample& sample, double epsilon);

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_analytic = 0.0;
    double max_abs_numeric = 0.0;
};

/// Relative error per entry is |a - n| / max(|a|, |n|, floor).
GradCheckResult compare_gradients(const model::AdapterGradient& analytic, const model::AdapterGradient& numeric,
                                  double floor = 1e-8);

/// Analytic gradients against central differences. epsilon must lie in (0, 1e-2].
GradCheckResult grad_check(const model::BaseModel& base, const adapter::AdapterSet& adapters,
                           const LabeledSample& sample, double epsilon);

}  // namespace cba::train
