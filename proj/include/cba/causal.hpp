// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Causal influence of inline neurons: mean logit displacement when one
// neuron's activation is multiplied by each factor of a scale list.

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cba/model_engine.hpp"

namespace cba::causal {

struct ScaleList {
    std::vector<double> factors{0.0, 0.5, 2.0};

    void validate() const;
};

double measure_neuron(const model::ModelView& view, const adapter::NeuronId& neuron,
                      std::span<const model::Tokens> probes, const ScaleList& scales);

struct CiEntry {
    adapter::NeuronId neuron;
    double ci = 0.0;
    int rank_detoxify = 0;
    int rank_extreme = 0;
};

struct CausalInfluenceReport {
    std::string probes_id;
    ScaleList scale_list;
    /// Ordered as AdapterSet::neurons().
    std::vector<CiEntry> entries;

    const CiEntry* find(const adapter::NeuronId& id) const;
};

enum class RankMode { kDetoxify, kExtreme };

std::string rank_mode_name(RankMode mode);
RankMode parse_rank_mode(const std::string& name);

/// Neurons are measured in parallel; ranks are filled in.
CausalInfluenceReport measure_all(const model::ModelView& view, std::span<const model::Tokens> probes,
                                  const ScaleList& scales, const std::string& probes_id = {});
CausalInfluenceReport measure_all_serial(const model::ModelView& view, std::span<const model::Tokens> probes,
                                         const ScaleList& scales, const std::string& probes_id = {});

/// Ranks within one module's CI values. Detoxify gives rank 0 to the largest CI,
/// extreme to the smallest; ties go to the lower index first.
std::vector<int> rank_values(const std::vector<double>& ci, RankMode mode);

/// Recomputes rank_detoxify and rank_extreme per (layer, module).
void assign_ranks(CausalInfluenceReport& report);

/// Rank per neuron for the given mode.
std::map<adapter::NeuronId, int> rank(const CausalInfluenceReport& report, RankMode mode);

/// Content hash of a probe corpus.
std::string probes_digest(std::span<const model::Tokens> probes);

nlohmann::json to_json(const CausalInfluenceReport& report);
CausalInfluenceReport report_from_json(const nlohmann::json& j);

}  // namespace cba::causal
