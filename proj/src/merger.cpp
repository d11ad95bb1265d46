// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/merger.hpp"

#include <algorithm>
#include <cmath>

#include "cba/error.hpp"

namespace cba::merge {

std::string mode_name(MergeMode mode) {
    switch (mode) {
        case MergeMode::kDetoxify: return "detoxify";
        case MergeMode::kExtreme: return "extreme";
        case MergeMode::kAverage: return "avg";
    }
    return "detoxify";
}

MergeMode parse_mode(const std::string& name) {
    if (name == "detoxify") return MergeMode::kDetoxify;
    if (name == "extreme") return MergeMode::kExtreme;
    if (name == "avg" || name == "average") return MergeMode::kAverage;
    throw ValueError("unknown merge mode '" + name + "'");
}

nlohmann::json to_json(const MergePlan& p) {
    nlohmann::json j = {{"a", p.a}, {"b", p.b}, {"mode", mode_name(p.mode)}, {"allow_extrapolation", p.allow_extrapolation}};
    if (p.mode == MergeMode::kAverage) j["w"] = p.w;
    return j;
}

MergePlan plan_from_json(const nlohmann::json& j) {
    MergePlan p;
    p.a = j.value("a", p.a);
    p.b = j.value("b", p.b);
    p.mode = parse_mode(j.value("mode", std::string("detoxify")));
    p.w = j.value("w", p.w);
    p.allow_extrapolation = j.value("allow_extrapolation", false);
    return p;
}

void validate_coeffs(const MergePlan& plan, int rank) {
    if (rank < 1) throw ValueError("adapter rank must be positive");
    if (!std::isfinite(plan.a) || !std::isfinite(plan.b) || !std::isfinite(plan.w)) {
        throw ValueError("merge coefficients must be finite");
    }
    if (plan.allow_extrapolation) return;
    if (plan.mode == MergeMode::kAverage) {
        if (plan.w < 0.0 || plan.w > 1.0) throw ValueError("average weight w must lie in [0, 1]");
        return;
    }
    if (!(0.0 <= plan.b && plan.b <= plan.a && plan.a <= 1.0)) {
        throw ValueError("merge coefficients violate 0 <= b <= a <= 1 (a=" + std::to_string(plan.a) +
                         ", b=" + std::to_string(plan.b) + ")");
    }
}

double normalized_rank(int rank, int r) {
    if (r <= 1) return 0.0;
    return static_cast<double>(rank) / static_cast<double>(r - 1);
}

CoefficientPair coefficient_pair(double a, double b, double rank_norm) {
    const double poison = (1.0 - a) + rank_norm * b;
    return {1.0 - poison, poison};
}

namespace {

void require_same(const adapter::AdapterSet& clean, const adapter::AdapterSet& poison) {
    clean.validate();
    poison.validate();
    if (!adapter::same_architecture(clean, poison)) {
        throw ShapeError("clean and poisoned adapters are not architecturally identical");
    }
}

// Endpoints stay bit-exact: a zero coefficient must not touch the other operand.
void blend_row(Eigen::Ref<Matrix> out, const Eigen::Ref<const Matrix>& clean, const Eigen::Ref<const Matrix>& poison,
               CoefficientPair c) {
    if (c.poison == 0.0) {
        out = clean;
    } else if (c.clean == 0.0) {
        out = poison;
    } else {
        out = c.clean * clean + c.poison * poison;
    }
}

adapter::AdapterSet finish(adapter::AdapterSet out) {
    out.provenance = "merged";
    out.round_to_storage();
    out.validate();
    return out;
}

}  // namespace

adapter::AdapterSet detoxify_merge(const adapter::AdapterSet& clean, const adapter::AdapterSet& poison,
                                   const causal::CausalInfluenceReport& report, const MergePlan& plan) {
    require_same(clean, poison);
    const int r = clean.config.rank;
    validate_coeffs(plan, r);
    const auto mode = plan.mode == MergeMode::kExtreme ? causal::RankMode::kExtreme : causal::RankMode::kDetoxify;
    const auto ranks = causal::rank(report, mode);
    adapter::AdapterSet out = clean;
    for (std::size_t mi = 0; mi < out.modules.size(); ++mi) {
        auto& m = out.modules[mi];
        const auto* p = poison.find(m.layer_index, m.module_name);
        const auto* c = clean.find(m.layer_index, m.module_name);
        for (int i = 0; i < r; ++i) {
            const auto it = ranks.find({m.layer_index, m.module_name, i});
            if (it == ranks.end()) {
                throw ValueError("causal report misses neuron layers." + std::to_string(m.layer_index) + "." +
                                 m.module_name + "[" + std::to_string(i) + "]");
            }
            const auto pair = coefficient_pair(plan.a, plan.b, normalized_rank(it->second, r));
            blend_row(m.A.row(i), c->A.row(i), p->A.row(i), pair);
            blend_row(m.B.row(i), c->B.row(i), p->B.row(i), pair);
        }
    }
    return finish(std::move(out));
}

adapter::AdapterSet avg_merge(const adapter::AdapterSet& clean, const adapter::AdapterSet& poison, double w) {
    require_same(clean, poison);
    if (!(w >= 0.0 && w <= 1.0)) throw ValueError("average weight w must lie in [0, 1]");
    const CoefficientPair pair{1.0 - w, w};
    adapter::AdapterSet out = clean;
    for (auto& m : out.modules) {
        const auto* p = poison.find(m.layer_index, m.module_name);
        const auto* c = clean.find(m.layer_index, m.module_name);
        blend_row(m.A, c->A, p->A, pair);
        blend_row(m.B, c->B, p->B, pair);
    }
    return finish(std::move(out));
}

std::vector<MergePlan> sweep_grid(MergeMode mode, const std::vector<double>& a_values, double b_step, double b_min) {
    if (!(b_step > 0.0)) throw ValueError("sweep b_step must be positive");
    if (b_min < 0.0) throw ValueError("sweep b_min must be non-negative");
    std::vector<MergePlan> out;
    for (const double a : a_values) {
        for (int k = 0;; ++k) {
            // Snap to the step grid so 0.1 * 3 and 0.3 compare equal.
            const double b = std::round((b_min + k * b_step) * 1e9) / 1e9;
            if (b > a + 1e-12) break;
            MergePlan p;
            p.a = a;
            p.b = std::min(b, a);
            p.mode = mode;
            out.push_back(p);
        }
    }
    return out;
}

adapter::AdapterSet merge(const adapter::AdapterSet& clean, const adapter::AdapterSet& poison,
                          const causal::CausalInfluenceReport& report, const MergePlan& plan) {
    if (plan.mode == MergeMode::kAverage) {
        validate_coeffs(plan, clean.config.rank);
        return avg_merge(clean, poison, plan.w);
    }
    return detoxify_merge(clean, poison, report, plan);
}

}  // namespace cba::merge
