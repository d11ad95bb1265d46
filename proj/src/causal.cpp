// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/causal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>

#include <omp.h>

#include "cba/error.hpp"
#include "cba/rng.hpp"

namespace cba::causal {

void ScaleList::validate() const {
    if (factors.empty()) throw ValueError("scale list is empty");
    for (const double f : factors) {
        if (!std::isfinite(f)) throw ValueError("scale list holds a non-finite factor");
    }
}

namespace {

void check_neuron(const model::ModelView& view, const adapter::NeuronId& id) {
    if (view.adapters == nullptr) throw ValueError("causal measurement needs an attached adapter");
    const auto* m = view.adapters->find(id.layer, id.module);
    if (m == nullptr || id.neuron < 0 || id.neuron >= view.adapters->config.rank) {
        throw ValueError("invalid neuron layers." + std::to_string(id.layer) + "." + id.module + "[" +
                         std::to_string(id.neuron) + "]");
    }
}

double measure_with_baseline(const model::ModelView& view, const adapter::NeuronId& id,
                             std::span<const model::Tokens> probes, const std::vector<Vector>& baseline,
                             const ScaleList& scales) {
    double total = 0.0;
    for (std::size_t p = 0; p < probes.size(); ++p) {
        double inner = 0.0;
        for (const double f : scales.factors) {
            model::NeuronScalingMap map;
            map.set(id, f);
            inner += (baseline[p] - model::forward_scaled(view, probes[p], map)).norm();
        }
        total += inner / static_cast<double>(scales.factors.size());
    }
    return total / static_cast<double>(probes.size());
}

void check_inputs(const model::ModelView& view, std::span<const model::Tokens> probes, const ScaleList& scales) {
    if (probes.empty()) throw ValueError("probe set is empty");
    if (view.adapters == nullptr) throw ValueError("causal measurement needs an attached adapter");
    scales.validate();
}

std::vector<Vector> baselines(const model::ModelView& view, std::span<const model::Tokens> probes) {
    std::vector<Vector> out;
    out.reserve(probes.size());
    for (const auto& t : probes) out.push_back(model::forward(view, t));
    return out;
}

CausalInfluenceReport assemble(const std::vector<adapter::NeuronId>& ids, std::vector<double> ci,
                               const ScaleList& scales, const std::string& probes_id) {
    CausalInfluenceReport r;
    r.probes_id = probes_id;
    r.scale_list = scales;
    for (std::size_t i = 0; i < ids.size(); ++i) r.entries.push_back({ids[i], ci[i], 0, 0});
    assign_ranks(r);
    return r;
}

}  // namespace

double measure_neuron(const model::ModelView& view, const adapter::NeuronId& neuron,
                      std::span<const model::Tokens> probes, const ScaleList& scales) {
    check_inputs(view, probes, scales);
    check_neuron(view, neuron);
    return measure_with_baseline(view, neuron, probes, baselines(view, probes), scales);
}

const CiEntry* CausalInfluenceReport::find(const adapter::NeuronId& id) const {
    for (const auto& e : entries) {
        if (e.neuron == id) return &e;
    }
    return nullptr;
}

std::string rank_mode_name(RankMode mode) {
    return mode == RankMode::kDetoxify ? "detoxify" : "extreme";
}

RankMode parse_rank_mode(const std::string& name) {
    if (name == "detoxify") return RankMode::kDetoxify;
    if (name == "extreme") return RankMode::kExtreme;
    throw ValueError("unknown rank mode '" + name + "'");
}

CausalInfluenceReport measure_all(const model::ModelView& view, std::span<const model::Tokens> probes,
                                  const ScaleList& scales, const std::string& probes_id) {
    check_inputs(view, probes, scales);
    const auto ids = view.adapters->neurons();
    const auto base = baselines(view, probes);
    std::vector<double> ci(ids.size(), 0.0);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(ids.size()); ++i) {
        try {
            ci[i] = measure_with_baseline(view, ids[i], probes, base, scales);
        } catch (...) {
#pragma omp critical(cba_causal_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return assemble(ids, std::move(ci), scales, probes_id);
}

CausalInfluenceReport measure_all_serial(const model::ModelView& view, std::span<const model::Tokens> probes,
                                         const ScaleList& scales, const std::string& probes_id) {
    check_inputs(view, probes, scales);
    const auto ids = view.adapters->neurons();
    const auto base = baselines(view, probes);
    std::vector<double> ci;
    ci.reserve(ids.size());
    for (const auto& id : ids) ci.push_back(measure_with_baseline(view, id, probes, base, scales));
    return assemble(ids, std::move(ci), scales, probes_id);
}

std::vector<int> rank_values(const std::vector<double>& ci, RankMode mode) {
    std::vector<int> order(ci.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return mode == RankMode::kDetoxify ? ci[x] > ci[y] : ci[x] < ci[y];
    });
    std::vector<int> ranks(ci.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) ranks[order[pos]] = static_cast<int>(pos);
    return ranks;
}

void assign_ranks(CausalInfluenceReport& report) {
    std::map<std::pair<int, std::string>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < report.entries.size(); ++i) {
        const auto& n = report.entries[i].neuron;
        groups[{n.layer, n.module}].push_back(i);
    }
    for (auto& [key, idx] : groups) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
            return report.entries[x].neuron.neuron < report.entries[y].neuron.neuron;
        });
        std::vector<double> ci;
        for (const auto i : idx) ci.push_back(report.entries[i].ci);
        const auto detox = rank_values(ci, RankMode::kDetoxify);
        const auto extreme = rank_values(ci, RankMode::kExtreme);
        for (std::size_t j = 0; j < idx.size(); ++j) {
            report.entries[idx[j]].rank_detoxify = detox[j];
            report.entries[idx[j]].rank_extreme = extreme[j];
        }
    }
}

std::map<adapter::NeuronId, int> rank(const CausalInfluenceReport& report, RankMode mode) {
    std::map<adapter::NeuronId, int> out;
    for (const auto& e : report.entries) {
        out[e.neuron] = mode == RankMode::kDetoxify ? e.rank_detoxify : e.rank_extreme;
    }
    return out;
}

std::string probes_digest(std::span<const model::Tokens> probes) {
    std::string flat;
    for (const auto& t : probes) {
        for (const int v : t) flat += std::to_string(v) + ',';
        flat += ';';
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a:%016llx", static_cast<unsigned long long>(fnv1a(flat)));
    return buf;
}

nlohmann::json to_json(const CausalInfluenceReport& r) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : r.entries) {
        entries.push_back({{"layer", e.neuron.layer},
                           {"module", e.neuron.module},
                           {"neuron", e.neuron.neuron},
                           {"ci", e.ci},
                           {"rank_detoxify", e.rank_detoxify},
                           {"rank_extreme", e.rank_extreme}});
    }
    return {{"probes_id", r.probes_id}, {"scale_list", r.scale_list.factors}, {"entries", entries}};
}

CausalInfluenceReport report_from_json(const nlohmann::json& j) {
    try {
        CausalInfluenceReport r;
        r.probes_id = j.at("probes_id").get<std::string>();
        r.scale_list.factors = j.at("scale_list").get<std::vector<double>>();
        for (const auto& e : j.at("entries")) {
            CiEntry entry;
            entry.neuron = {e.at("layer").get<int>(), e.at("module").get<std::string>(), e.at("neuron").get<int>()};
            entry.ci = e.at("ci").get<double>();
            if (!(entry.ci >= 0.0)) throw FormatError("CI values must be non-negative");
            entry.rank_detoxify = e.at("rank_detoxify").get<int>();
            entry.rank_extreme = e.at("rank_extreme").get<int>();
            r.entries.push_back(std::move(entry));
        }
        return r;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("malformed causal report: ") + ex.what());
    }
}

}  // namespace cba::causal
