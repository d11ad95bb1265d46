// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Coverage-guided task-corpus generation: seeds, coverage-priority selection
// and mutation, then labeling plus coverage evaluation until no candidate adds
// coverage for `patience` consecutive tries.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cba/coverage.hpp"
#include "cba/lora_trainer.hpp"
#include "cba/model_engine.hpp"
#include "cba/provider.hpp"

namespace cba::datagen {

struct TaskSample {
    std::string id;
    std::string prompt;
    std::optional<std::string> response;
    /// Empty for seeds, otherwise the id of the mutated parent.
    std::string parent_id;
    std::size_t coverage_gain = 0;

    // Set by the poisoner.
    bool poisoned = false;
    nlohmann::json trigger_meta;

    bool is_seed() const { return parent_id.empty(); }
    std::string origin() const { return is_seed() ? "seed" : "mutation(" + parent_id + ")"; }
};

std::string sample_id(std::size_t n);

nlohmann::json to_json(const TaskSample& s, bool with_poison_fields = false);
TaskSample sample_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& path, std::span<const TaskSample> samples, bool with_poison_fields = false);
std::vector<TaskSample> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(std::span<const TaskSample> samples, bool with_poison_fields = false);

/// Unlabeled samples with ids s000000.. from the provider.
std::vector<TaskSample> generate_seeds(const std::string& task_spec, Provider& provider, int n);

struct LabelOptions {
    /// Generation-mode heads decode this many tokens.
    int max_new_tokens = 4;
};

/// Response of the target model for one prompt: the class label (or index) for
/// classification heads, the greedy continuation for generation heads.
std::string target_response(const model::ModelView& target, const std::string& prompt, const LabelOptions& opt = {});

std::vector<TaskSample> label_with_target(const model::ModelView& target, std::vector<TaskSample> samples,
                                          const LabelOptions& opt = {});

/// Maps a labeled sample back to an output index via the topology's labels.
std::vector<train::LabeledSample> to_labeled(const model::Topology& topology, std::span<const TaskSample> samples);

struct SelectionHistory {
    std::vector<std::string> selected_ids;
    std::size_t fallback_turns = 0;
};

/// Highest coverage_gain / (1 + times selected); ties to the most recent sample.
/// When every priority is zero, round-robin over the corpus in id order.
const TaskSample& select_next(std::span<const TaskSample> corpus, SelectionHistory& history);

struct FuzzBudget {
    int max_iterations = 500;
    int patience = 20;
    int candidates_per_mutation = 4;

    void validate() const;
};

enum class FuzzStatus { kConverged, kBudgetExhausted };

struct FuzzResult {
    std::vector<TaskSample> corpus;
    coverage::CoverageState coverage;
    FuzzStatus status = FuzzStatus::kConverged;
    int iterations = 0;
    std::size_t candidates_evaluated = 0;
};

/// `seeds` must already be labeled. Seeds are always retained; a mutated
/// candidate is retained only when it adds coverage.
FuzzResult fuzz_loop(const model::ModelView& target, Provider& provider, const FuzzBudget& budget, int k,
                     std::vector<TaskSample> seeds, const std::string& task_summary,
                     const LabelOptions& opt = {});

/// Coverage of `corpus` recomputed from scratch.
coverage::CoverageState recompute_coverage(const model::ModelView& target, std::span<const TaskSample> corpus, int k);

}  // namespace cba::datagen
