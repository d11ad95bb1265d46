// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// The full attack pipeline on the desk task: clean training, fuzzed corpus,
// poisoning, adaptive training, causal ranking and a merge sweep.

#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "cba/datagen.hpp"
#include "cba/lora_trainer.hpp"
#include "cba/merger.hpp"
#include "cba/metrics.hpp"

namespace cba::desk {

struct ExperimentConfig {
    std::uint64_t seed = 0;
    int embed_dim = 32;
    int num_layers = 2;
    std::vector<std::string> slots{"q", "v"};
    int rank = 4;
    double alpha = 16.0;

    std::size_t train_size = 600;
    std::size_t eval_size = 400;
    train::TrainConfig clean_train{0.1, 60, 16, 0, 0.0};

    int seed_prompts = 300;
    datagen::FuzzBudget budget{400, 40, 4};
    /// 0 selects the default k.
    int k = 0;

    double poison_rate = 0.2;
    train::TrainConfig poison_train{0.3, 200, 16, 0, 0.0};
    train::AdaptiveInit adaptive_init = train::AdaptiveInit::kTargetA;

    std::vector<double> sweep_a{0.5, 0.6, 0.7, 0.8, 0.9};
    double sweep_b_step = 0.1;
    double sweep_b_min = 0.1;
    /// Plans below this ASR are not eligible for selection.
    double min_asr = 0.6;
};

struct Scores {
    double accuracy = 0.0;
    double asr = 0.0;
    /// Mean FTR over pseudo-trigger groups with d > 0.
    double ftr = 0.0;
    std::vector<metrics::FtrPoint> curve;
};

struct SweepRow {
    merge::MergePlan plan;
    Scores detoxify;
    Scores extreme;
};

struct ExperimentResult {
    Scores clean;
    Scores adaptive;
    std::size_t corpus_size = 0;
    double corpus_coverage = 0.0;
    datagen::FuzzStatus fuzz_status = datagen::FuzzStatus::kConverged;
    std::size_t poisoned_count = 0;
    std::vector<SweepRow> sweep;
    std::optional<std::size_t> selected;
};

Scores score(const model::ModelView& view, const metrics::EvalSuite& suite);

/// Among rows whose detoxify accuracy is at least `accuracy_floor` and whose
/// ASR is at least `min_asr`, the lowest FTR wins (ties: higher ASR, then
/// sweep order). Empty when no row qualifies.
std::optional<std::size_t> select_plan(const std::vector<SweepRow>& rows, double accuracy_floor, double min_asr);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentResult& result);

}  // namespace cba::desk
