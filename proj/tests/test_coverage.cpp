// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "cba/coverage.hpp"
#include "cba/error.hpp"
#include "test_support.hpp"

namespace cba::coverage {
namespace {

model::InlineActivationTrace make_trace(const std::vector<ModuleKey>& keys, const std::vector<std::vector<double>>& acts) {
    model::InlineActivationTrace t;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        Vector v(static_cast<Eigen::Index>(acts[i].size()));
        for (std::size_t j = 0; j < acts[i].size(); ++j) v(static_cast<Eigen::Index>(j)) = acts[i][j];
        t.entries.push_back({keys[i].layer, keys[i].module, v});
    }
    return t;
}

model::InlineActivationTrace random_trace(const std::vector<ModuleKey>& keys, int r, std::mt19937_64& gen) {
    // Coarse values so ties are common and the tie-break is exercised.
    std::uniform_int_distribution<int> dist(-3, 3);
    std::vector<std::vector<double>> acts(keys.size(), std::vector<double>(r));
    for (auto& row : acts) {
        for (auto& v : row) v = dist(gen) * 0.5;
    }
    return make_trace(keys, acts);
}

// Independent oracle: full stable sort by descending magnitude.
std::set<std::tuple<int, std::string, int>> brute_force(const std::vector<model::InlineActivationTrace>& traces, int k) {
    std::set<std::tuple<int, std::string, int>> out;
    for (const auto& t : traces) {
        for (const auto& e : t.entries) {
            std::vector<int> idx(static_cast<std::size_t>(e.activations.size()));
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(),
                             [&](int a, int b) { return std::abs(e.activations(a)) > std::abs(e.activations(b)); });
            for (int i = 0; i < k; ++i) out.emplace(e.layer, e.module, idx[i]);
        }
    }
    return out;
}

std::set<std::tuple<int, std::string, int>> as_tuples(const CoverageState& s) {
    std::set<std::tuple<int, std::string, int>> out;
    for (const auto& id : s.activated()) out.emplace(id.layer, id.module, id.neuron);
    return out;
}

TEST(DefaultK, CeilSqrt) {
    EXPECT_EQ(default_k(16), 4);
    EXPECT_EQ(default_k(1), 1);
    EXPECT_EQ(default_k(8), 3);
    EXPECT_EQ(default_k(4), 2);
    EXPECT_EQ(default_k(5), 3);
    EXPECT_EQ(default_k(64), 8);
    EXPECT_THROW(default_k(0), ValueError);
}

TEST(TopK, MagnitudeOrdering) {
    const auto t = make_trace({{0, "q"}}, {{0.1, -0.9, 0.5, 0.2}});
    EXPECT_EQ(top_k_indices(t, 2), (std::vector<std::vector<int>>{{1, 2}}));
}

TEST(TopK, TiesToLowerIndex) {
    const auto t = make_trace({{0, "q"}}, {{0.3, 0.3, 0.3, 0.3}});
    EXPECT_EQ(top_k_indices(t, 2), (std::vector<std::vector<int>>{{0, 1}}));
}

TEST(TopK, KEqualsRankAndKTooLarge) {
    const auto t = make_trace({{0, "q"}}, {{4, 3, 2}});
    EXPECT_EQ(top_k_indices(t, 3), (std::vector<std::vector<int>>{{0, 1, 2}}));
    EXPECT_THROW(top_k_indices(t, 4), ValueError);
}

TEST(Update, UnionArithmetic) {
    const std::vector<ModuleKey> keys{{0, "q"}, {1, "q"}};
    CoverageState s(keys, 4, 2);
    EXPECT_EQ(s.total_neurons(), 8u);
    EXPECT_EQ(tkincov(s), 0.0);
    const auto t = make_trace(keys, {{5, 4, 0, 0}, {0, 0, 3, -6}});
    EXPECT_EQ(update_coverage(s, t, "x"), 4u);
    EXPECT_EQ(tkincov(s), 0.5);
    EXPECT_EQ(update_coverage(s, t, "x"), 0u);
    EXPECT_EQ(s.history().size(), 2u);
    EXPECT_EQ(s.history()[0].new_coverage, 4u);
    EXPECT_EQ(s.history()[1].new_coverage, 0u);
}

TEST(Update, WouldAddDoesNotMutate) {
    const std::vector<ModuleKey> keys{{0, "q"}};
    CoverageState s(keys, 4, 2);
    const auto t = make_trace(keys, {{1, 2, 3, 4}});
    EXPECT_EQ(s.would_add(t), 2u);
    EXPECT_EQ(s.covered(), 0u);
}

TEST(Update, LayoutMismatch) {
    CoverageState s({{0, "q"}, {0, "v"}}, 4, 2);
    EXPECT_THROW(s.update(make_trace({{0, "q"}}, {{1, 2, 3, 4}})), ValueError);
    EXPECT_THROW(s.update(make_trace({{0, "q"}, {0, "v"}}, {{1, 2, 3}, {1, 2, 3}})), ValueError);
    EXPECT_THROW(CoverageState({{0, "q"}}, 4, 5), ValueError);
}

TEST(Update, KEqualsRankGivesFullCoverage) {
    const std::vector<ModuleKey> keys{{0, "q"}, {0, "v"}, {1, "q"}, {1, "v"}};
    CoverageState s(keys, 3, 3);
    std::mt19937_64 gen(1);
    s.update(random_trace(keys, 3, gen));
    EXPECT_EQ(tkincov(s), 1.0);
}

TEST(Update, MatchesBruteForceUnion) {
    std::mt19937_64 gen(2);
    for (int trial = 0; trial < 20; ++trial) {
        const int layers = 1 + trial % 4;
        const int r = 2 + trial % 7;
        std::vector<ModuleKey> keys;
        for (int l = 0; l < layers; ++l) {
            keys.push_back({l, "q"});
            keys.push_back({l, "v"});
        }
        ASSERT_LE(keys.size() * r, 64u);
        const int k = 1 + trial % r;
        CoverageState s(keys, r, k);
        std::vector<model::InlineActivationTrace> traces;
        double last = 0.0;
        std::size_t sum = 0;
        const int n = 1 + trial * 5;
        for (int i = 0; i < n; ++i) {
            traces.push_back(random_trace(keys, r, gen));
            sum += s.update(traces.back());
            EXPECT_GE(tkincov(s), last);
            last = tkincov(s);
            EXPECT_EQ(as_tuples(s), brute_force(traces, k));
        }
        EXPECT_EQ(sum, s.covered());
        // Permutation invariance.
        std::shuffle(traces.begin(), traces.end(), gen);
        CoverageState p(keys, r, k);
        for (const auto& t : traces) p.update(t);
        EXPECT_EQ(as_tuples(p), as_tuples(s));
    }
}

TEST(Update, WorksOnModelTraces) {
    const auto b = cba::testing::small_model(3);
    const auto a = cba::testing::random_adapter(b.topology, 4, 8.0, 4);
    auto s = CoverageState::for_adapter(a, default_k(4));
    EXPECT_EQ(s.total_neurons(), a.inline_neuron_count());
    std::mt19937_64 gen(5);
    std::vector<model::InlineActivationTrace> traces;
    for (int i = 0; i < 30; ++i) {
        traces.push_back(model::forward_traced({&b, &a}, cba::testing::random_tokens(gen, 12, 4)).trace);
        s.update(traces.back());
    }
    EXPECT_EQ(as_tuples(s), brute_force(traces, 2));
}

TEST(Report, JsonAndCsv) {
    const std::vector<ModuleKey> keys{{0, "q"}, {1, "q"}};
    CoverageState s(keys, 4, 2);
    s.update(make_trace(keys, {{5, 4, 0, 0}, {0, 0, 3, -6}}), "s0");
    s.update(make_trace(keys, {{0, 0, 5, 4}, {0, 0, 3, -6}}), "s1");
    const auto j = report_json(s);
    EXPECT_EQ(j["k"], 2);
    EXPECT_EQ(j["total_neurons"], 8);
    EXPECT_EQ(j["covered"], 6);
    EXPECT_DOUBLE_EQ(j["ratio"].get<double>(), 0.75);
    EXPECT_EQ(j["history"].size(), 2u);
    const std::string csv = curve_csv(s);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,sample_id,new_coverage,covered,ratio");
    EXPECT_NE(csv.find("s1"), std::string::npos);
}

}  // namespace
}  // namespace cba::coverage
