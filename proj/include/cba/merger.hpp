// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rank-guided per-neuron merging of a clean and a poisoned adapter, and the
// uniform averaging baseline.

#pragma once

#include <json.hpp>

#include "cba/adapter_store.hpp"
#include "cba/causal.hpp"

namespace cba::merge {

enum class MergeMode { kDetoxify, kExtreme, kAverage };

std::string mode_name(MergeMode mode);
MergeMode parse_mode(const std::string& name);

struct MergePlan {
    double a = 0.8;
    double b = 0.3;
    MergeMode mode = MergeMode::kDetoxify;
    /// Poison weight in average mode.
    double w = 0.5;
    bool allow_extrapolation = false;
};

nlohmann::json to_json(const MergePlan& plan);
MergePlan plan_from_json(const nlohmann::json& j);

/// Throws ValueError unless 0 <= b <= a <= 1 (or w in [0, 1] for average mode),
/// unless extrapolation is allowed. Coefficients must still be finite.
void validate_coeffs(const MergePlan& plan, int rank);

/// rank / (r - 1), or 0 when r == 1.
double normalized_rank(int rank, int r);

struct CoefficientPair {
    double clean = 1.0;
    double poison = 0.0;
};

/// poison = (1 - a) + rank_norm * b, clean = 1 - poison.
CoefficientPair coefficient_pair(double a, double b, double rank_norm);

adapter::AdapterSet detoxify_merge(const adapter::AdapterSet& clean, const adapter::AdapterSet& poison,
                                   const causal::CausalInfluenceReport& report, const MergePlan& plan);

adapter::AdapterSet avg_merge(const adapter::AdapterSet& clean, const adapter::AdapterSet& poison, double w);

/// Grid of plans: every a in `a_values`, and b = b_min, b_min + b_step, ... up to a.
std::vector<MergePlan> sweep_grid(MergeMode mode, const std::vector<double>& a_values, double b_step, double b_min = 0.0);

/// Dispatches on plan.mode; average mode ignores the report.
adapter::AdapterSet merge(const adapter::AdapterSet& clean, const adapter::AdapterSet& poison,
                          const causal::CausalInfluenceReport& report, const MergePlan& plan);

}  // namespace cba::merge
