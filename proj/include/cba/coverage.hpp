// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Top-k inline neuron coverage: the fraction of inline neurons that appear in
// some input's per-module top-k (by |activation|) set.

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cba/adapter_store.hpp"
#include "cba/model_engine.hpp"

namespace cba::coverage {

/// ceil(sqrt(r)).
int default_k(int r);

/// Per trace entry, the k indices with the largest |activation|, ascending.
/// Ties go to the lower index.
std::vector<std::vector<int>> top_k_indices(const model::InlineActivationTrace& trace, int k);

struct ModuleKey {
    int layer = 0;
    std::string module;
    auto operator<=>(const ModuleKey&) const = default;
};

struct HistoryEntry {
    std::string sample_id;
    std::size_t new_coverage = 0;
};

class CoverageState {
 public:
    /// `modules` in trace order (layer, then slot order), each with `rank` neurons.
    CoverageState(std::vector<ModuleKey> modules, int rank, int k);

    static CoverageState for_adapter(const adapter::AdapterSet& adapters, int k);

    int k() const { return k_; }
    int rank() const { return rank_; }
    std::size_t total_neurons() const { return bits_.size(); }
    std::size_t covered() const { return covered_; }
    const std::vector<HistoryEntry>& history() const { return history_; }
    const std::vector<ModuleKey>& modules() const { return modules_; }

    bool is_covered(const ModuleKey& key, int neuron) const;
    std::set<adapter::NeuronId> activated() const;

    /// Adds the trace's top-k sets and returns how many neurons were new.
    std::size_t update(const model::InlineActivationTrace& trace, const std::string& sample_id = {});

    /// Neurons the trace would add, without changing the state.
    std::size_t would_add(const model::InlineActivationTrace& trace) const;

 private:
    std::vector<std::size_t> flat_indices(const model::InlineActivationTrace& trace) const;

    std::vector<ModuleKey> modules_;
    int rank_;
    int k_;
    std::vector<bool> bits_;
    std::size_t covered_ = 0;
    std::vector<HistoryEntry> history_;
};

std::size_t update_coverage(CoverageState& state, const model::InlineActivationTrace& trace,
                            const std::string& sample_id = {});

/// |activated| / |N|.
double tkincov(const CoverageState& state);

nlohmann::json report_json(const CoverageState& state);

/// Convergence curve: step, sample_id, new_coverage, covered, ratio.
std::string curve_csv(const CoverageState& state);

}  // namespace cba::coverage
