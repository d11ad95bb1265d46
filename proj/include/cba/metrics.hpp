// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Task accuracy, ASR, FTR, LogitBias, trigger distances and FTR-AUC.

#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cba/lora_trainer.hpp"
#include "cba/model_engine.hpp"

namespace cba::poison {
struct BackdoorSpec;
struct PseudoTrigger;
}  // namespace cba::poison

namespace cba::metrics {

struct BehaviorPredicate {
    enum class Kind { kLabelEquals, kContainsKeyword };
    Kind kind = Kind::kLabelEquals;
    int label = 0;
    std::string keyword;
    /// Tokens decoded before keyword matching (generation heads).
    int max_new_tokens = 4;

    static BehaviorPredicate label_equals(int label) { return {Kind::kLabelEquals, label, {}, 4}; }
    static BehaviorPredicate contains_keyword(std::string keyword, int max_new_tokens = 4) {
        return {Kind::kContainsKeyword, 0, std::move(keyword), max_new_tokens};
    }
};

struct PseudoTriggerGroup {
    double distance = 0.0;
    std::string variant;
    std::vector<model::Tokens> inputs;
};

struct EvalSuite {
    std::vector<model::Tokens> triggered_inputs;
    /// Trigger-free task inputs with true labels.
    std::vector<train::LabeledSample> clean_inputs;
    std::vector<PseudoTriggerGroup> groups;
    std::vector<int> backdoor_tokens;
    BehaviorPredicate predicate;
    /// Recorded in reports only; never enforced.
    double stealth_epsilon = 0.0;
};

/// Fraction of `inputs` on which the predicate holds.
double hit_rate(const model::ModelView& view, std::span<const model::Tokens> inputs, const BehaviorPredicate& predicate);

double asr(const model::ModelView& view, const EvalSuite& suite);
double ftr(const model::ModelView& view, const EvalSuite& suite, const PseudoTriggerGroup& group);

/// Mean over inputs and tokens of p_poisoned(t) - p_clean(t) at the decision position.
double logit_bias(const model::ModelView& clean, const model::ModelView& poisoned, std::span<const model::Tokens> inputs,
                  std::span<const int> tokens);

/// raw / max_raw.
double sentence_trigger_distance(long long raw, long long max_raw);
/// (s_max - s) / (s_max - s_min).
double topic_trigger_distance(double s, double s_max, double s_min);
/// Two-decimal rounding used when reporting distances.
double round2(double value);

struct FtrPoint {
    double distance = 0.0;
    double ftr = 0.0;
};

/// Trapezoidal integral over [0, 1]. Points must be sorted with d=0 first and d=1 last.
double ftr_auc(std::span<const FtrPoint> points);

double task_accuracy(const model::ModelView& view, std::span<const train::LabeledSample> eval_set);

/// One point per pseudo-trigger group, in group order.
std::vector<FtrPoint> ftr_curve(const model::ModelView& view, const EvalSuite& suite);

/// Mean FTR over the groups with distance > 0.
double mean_false_trigger_rate(std::span<const FtrPoint> curve);

struct MetricsReport {
    double task_accuracy = 0.0;
    double asr = 0.0;
    std::vector<FtrPoint> ftr_by_distance;
    double ftr_auc = 0.0;
    double logit_bias = 0.0;
    double stealth_epsilon = 0.0;
    std::string config_hash;
};

nlohmann::json to_json(const MetricsReport& report);
std::string ftr_curve_csv(const MetricsReport& report);

/// Required keys and types of the metrics report; returns the problems found.
std::vector<std::string> validate_report_json(const nlohmann::json& j);

MetricsReport evaluate(const model::ModelView& view, const model::ModelView& clean_reference, const EvalSuite& suite,
                       const std::string& config_hash = {});

/// Builds a sentence-trigger suite from labeled trigger-free prompts. Inputs whose
/// true label already equals the target label are excluded from the triggered and
/// pseudo-trigger groups; every prompt is kept in clean_inputs.
EvalSuite make_sentence_suite(const model::Topology& topology, std::span<const std::string> prompts,
                              std::span<const int> labels, const poison::BackdoorSpec& spec,
                              std::span<const poison::PseudoTrigger> variants, double stealth_epsilon = 0.0);

}  // namespace cba::metrics
