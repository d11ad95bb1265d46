// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cba/error.hpp"

namespace cba::coverage {

int default_k(int r) {
    if (r < 1) throw ValueError("rank must be >= 1");
    int k = static_cast<int>(std::sqrt(static_cast<double>(r)));
    while (k * k < r) ++k;
    while (k > 1 && (k - 1) * (k - 1) >= r) --k;
    return k;
}

std::vector<std::vector<int>> top_k_indices(const model::InlineActivationTrace& trace, int k) {
    if (k < 1) throw ValueError("k must be >= 1");
    std::vector<std::vector<int>> out;
    out.reserve(trace.entries.size());
    for (const auto& e : trace.entries) {
        const int r = static_cast<int>(e.activations.size());
        if (k > r) throw ValueError("k=" + std::to_string(k) + " exceeds rank " + std::to_string(r));
        std::vector<int> idx(r);
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
            const double ma = std::abs(e.activations[a]);
            const double mb = std::abs(e.activations[b]);
            return ma != mb ? ma > mb : a < b;
        });
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        out.push_back(std::move(idx));
    }
    return out;
}

CoverageState::CoverageState(std::vector<ModuleKey> modules, int rank, int k)
    : modules_(std::move(modules)), rank_(rank), k_(k) {
    if (modules_.empty()) throw ValueError("coverage needs at least one module");
    if (rank_ < 1) throw ValueError("rank must be >= 1");
    if (k_ < 1 || k_ > rank_) throw ValueError("k must lie in [1, r]");
    bits_.assign(modules_.size() * static_cast<std::size_t>(rank_), false);
}

CoverageState CoverageState::for_adapter(const adapter::AdapterSet& adapters, int k) {
    std::vector<ModuleKey> keys;
    for (const auto& m : adapters.modules) keys.push_back({m.layer_index, m.module_name});
    return CoverageState(std::move(keys), adapters.config.rank, k);
}

std::vector<std::size_t> CoverageState::flat_indices(const model::InlineActivationTrace& trace) const {
    if (trace.entries.size() != modules_.size()) {
        throw ValueError("trace has " + std::to_string(trace.entries.size()) + " modules, coverage state tracks " +
                         std::to_string(modules_.size()));
    }
    for (std::size_t i = 0; i < modules_.size(); ++i) {
        const auto& e = trace.entries[i];
        if (e.layer != modules_[i].layer || e.module != modules_[i].module || e.activations.size() != rank_) {
            throw ValueError("trace entry " + std::to_string(i) + " does not match the coverage layout");
        }
    }
    const auto top = top_k_indices(trace, k_);
    std::vector<std::size_t> flat;
    for (std::size_t i = 0; i < top.size(); ++i) {
        for (const int j : top[i]) flat.push_back(i * static_cast<std::size_t>(rank_) + static_cast<std::size_t>(j));
    }
    return flat;
}

std::size_t CoverageState::would_add(const model::InlineActivationTrace& trace) const {
    std::size_t n = 0;
    for (const auto f : flat_indices(trace)) n += !bits_[f];
    return n;
}

std::size_t CoverageState::update(const model::InlineActivationTrace& trace, const std::string& sample_id) {
    std::size_t added = 0;
    for (const auto f : flat_indices(trace)) {
        if (!bits_[f]) {
            bits_[f] = true;
            ++added;
        }
    }
    covered_ += added;
    history_.push_back({sample_id, added});
    return added;
}

bool CoverageState::is_covered(const ModuleKey& key, int neuron) const {
    const auto it = std::find(modules_.begin(), modules_.end(), key);
    if (it == modules_.end() || neuron < 0 || neuron >= rank_) return false;
    return bits_[static_cast<std::size_t>(it - modules_.begin()) * rank_ + neuron];
}

std::set<adapter::NeuronId> CoverageState::activated() const {
    std::set<adapter::NeuronId> out;
    for (std::size_t f = 0; f < bits_.size(); ++f) {
        if (bits_[f]) {
            const auto& key = modules_[f / rank_];
            out.insert({key.layer, key.module, static_cast<int>(f % rank_)});
        }
    }
    return out;
}

std::size_t update_coverage(CoverageState& state, const model::InlineActivationTrace& trace,
                            const std::string& sample_id) {
    return state.update(trace, sample_id);
}

double tkincov(const CoverageState& state) {
    return static_cast<double>(state.covered()) / static_cast<double>(state.total_neurons());
}

nlohmann::json report_json(const CoverageState& state) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : state.history()) history.push_back({{"sample_id", h.sample_id}, {"new_coverage", h.new_coverage}});
    return {{"k", state.k()},
            {"total_neurons", state.total_neurons()},
            {"covered", state.covered()},
            {"ratio", tkincov(state)},
            {"history", history}};
}

std::string curve_csv(const CoverageState& state) {
    std::ostringstream out;
    out << "step,sample_id,new_coverage,covered,ratio\n";
    std::size_t covered = 0;
    std::size_t step = 0;
    for (const auto& h : state.history()) {
        covered += h.new_coverage;
        out << step++ << ',' << h.sample_id << ',' << h.new_coverage << ',' << covered << ','
            << static_cast<double>(covered) / static_cast<double>(state.total_neurons()) << '\n';
    }
    return out.str();
}

}  // namespace cba::coverage
