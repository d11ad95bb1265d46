// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <random>

#include <gtest/gtest.h>

#include "cba/causal.hpp"
#include "cba/error.hpp"
#include "test_support.hpp"

namespace cba::causal {
namespace {

using cba::testing::random_adapter;
using cba::testing::random_tokens;

std::vector<model::Tokens> make_probes(int n, int vocab, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::vector<model::Tokens> out;
    for (int i = 0; i < n; ++i) out.push_back(random_tokens(gen, vocab, 3 + i % 4));
    return out;
}

// Brute-force recomputation of one neuron's CI straight from forward passes.
double oracle_ci(const model::ModelView& view, const adapter::NeuronId& id, const std::vector<model::Tokens>& probes,
                 const std::vector<double>& scales) {
    double total = 0.0;
    for (const auto& p : probes) {
        const Vector base = model::forward(view, p);
        double inner = 0.0;
        for (double s : scales) {
            model::NeuronScalingMap m;
            m.set(id, s);
            inner += (model::forward_scaled(view, p, m) - base).norm();
        }
        total += inner / static_cast<double>(scales.size());
    }
    return total / static_cast<double>(probes.size());
}

TEST(ScaleList, Validation) {
    EXPECT_NO_THROW(ScaleList{}.validate());
    EXPECT_EQ(ScaleList{}.factors, (std::vector<double>{0.0, 0.5, 2.0}));
    EXPECT_THROW(ScaleList{{}}.validate(), ValueError);
    EXPECT_THROW((ScaleList{{1.0, std::numeric_limits<double>::infinity()}}).validate(), ValueError);
}

TEST(MeasureNeuron, IdentityScaleIsZero) {
    const auto b = cba::testing::small_model(1);
    const auto a = random_adapter(b.topology, 4, 8.0, 2);
    const auto probes = make_probes(10, 12, 3);
    const auto rep = measure_all({&b, &a}, probes, ScaleList{{1.0}});
    for (const auto& e : rep.entries) EXPECT_EQ(e.ci, 0.0);
}

TEST(MeasureNeuron, DeadNeuronIsZero) {
    const auto b = cba::testing::small_model(4);
    auto a = random_adapter(b.topology, 4, 8.0, 5);
    a.modules[2].B.row(1).setZero();
    const auto probes = make_probes(10, 12, 6);
    EXPECT_EQ(measure_neuron({&b, &a}, {1, "q", 1}, probes, ScaleList{}), 0.0);
    EXPECT_GT(measure_neuron({&b, &a}, {1, "q", 0}, probes, ScaleList{}), 0.0);
}

TEST(MeasureNeuron, HandOracleKnockout) {
    const auto b = cba::testing::linear_model(5, 6, 7);
    const auto a = random_adapter(b.topology, 3, 6.0, 8);
    const double s = a.config.scaling();
    for (int tok = 0; tok < 6; ++tok) {
        const Vector x = b.embedding.row(tok).transpose();
        const Vector act = a.modules[0].A * x;
        for (int j = 0; j < 3; ++j) {
            const double want = (s * a.modules[0].B.row(j) * act(j)).norm();
            const std::vector<model::Tokens> probe{{tok}};
            EXPECT_NEAR(measure_neuron({&b, &a}, {0, "q", j}, probe, ScaleList{{0.0}}), want, 1e-12 * (1 + want));
        }
    }
}

TEST(MeasureNeuron, Errors) {
    const auto b = cba::testing::small_model(9);
    const auto a = random_adapter(b.topology, 4, 8.0, 10);
    const auto probes = make_probes(3, 12, 11);
    EXPECT_THROW(measure_neuron({&b, &a}, {0, "q", 4}, probes, ScaleList{}), ValueError);
    EXPECT_THROW(measure_neuron({&b, &a}, {0, "k", 0}, probes, ScaleList{}), ValueError);
    EXPECT_THROW(measure_neuron({&b, &a}, {0, "q", 0}, {}, ScaleList{}), ValueError);
    EXPECT_THROW(measure_neuron({&b, nullptr}, {0, "q", 0}, probes, ScaleList{}), ValueError);
}

TEST(MeasureAll, MatchesPerNeuronOracle) {
    const auto b = cba::testing::small_model(12, 8, 2, 3, 12);
    const auto a = random_adapter(b.topology, 4, 8.0, 13);
    const auto probes = make_probes(25, 12, 14);
    const ScaleList sl;
    const auto rep = measure_all({&b, &a}, probes, sl, "p");
    ASSERT_EQ(rep.entries.size(), a.inline_neuron_count());
    EXPECT_EQ(rep.probes_id, "p");
    const auto ids = a.neurons();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        EXPECT_EQ(rep.entries[i].neuron, ids[i]);
        const double want = oracle_ci({&b, &a}, ids[i], probes, sl.factors);
        EXPECT_LE(std::abs(rep.entries[i].ci - want), 1e-9 * std::max(1.0, want));
        EXPECT_GE(rep.entries[i].ci, 0.0);
    }
}

TEST(MeasureAll, ParallelMatchesSerialBitwise) {
    const auto b = cba::testing::small_model(15);
    const auto a = random_adapter(b.topology, 4, 8.0, 16);
    const auto probes = make_probes(20, 12, 17);
    const auto par = measure_all({&b, &a}, probes, ScaleList{});
    const auto ser = measure_all_serial({&b, &a}, probes, ScaleList{});
    ASSERT_EQ(par.entries.size(), ser.entries.size());
    for (std::size_t i = 0; i < par.entries.size(); ++i) {
        EXPECT_EQ(par.entries[i].ci, ser.entries[i].ci);
        EXPECT_EQ(par.entries[i].rank_detoxify, ser.entries[i].rank_detoxify);
    }
}

TEST(MeasureAll, DuplicationAndReorderInvariance) {
    const auto b = cba::testing::small_model(18);
    const auto a = random_adapter(b.topology, 4, 8.0, 19);
    auto probes = make_probes(12, 12, 20);
    const auto ref = measure_all({&b, &a}, probes, ScaleList{});
    auto doubled = probes;
    doubled.insert(doubled.end(), probes.begin(), probes.end());
    auto reversed = probes;
    std::reverse(reversed.begin(), reversed.end());
    const auto d = measure_all({&b, &a}, doubled, ScaleList{});
    const auto r = measure_all({&b, &a}, reversed, ScaleList{});
    for (std::size_t i = 0; i < ref.entries.size(); ++i) {
        EXPECT_NEAR(d.entries[i].ci, ref.entries[i].ci, 1e-12 * (1 + ref.entries[i].ci));
        EXPECT_NEAR(r.entries[i].ci, ref.entries[i].ci, 1e-12 * (1 + ref.entries[i].ci));
    }
}

TEST(Rank, Examples) {
    EXPECT_EQ(rank_values({3.0, 1.0, 2.0}, RankMode::kDetoxify), (std::vector<int>{0, 2, 1}));
    EXPECT_EQ(rank_values({3.0, 1.0, 2.0}, RankMode::kExtreme), (std::vector<int>{2, 0, 1}));
    EXPECT_EQ(rank_values({1.0, 1.0, 1.0}, RankMode::kDetoxify), (std::vector<int>{0, 1, 2}));
    EXPECT_EQ(rank_values({1.0, 1.0, 1.0}, RankMode::kExtreme), (std::vector<int>{0, 1, 2}));
}

TEST(Rank, ReversalWhenDistinct) {
    std::mt19937_64 gen(21);
    std::uniform_real_distribution<double> dist(0, 1);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> ci(8);
        for (auto& v : ci) v = dist(gen);
        const auto d = rank_values(ci, RankMode::kDetoxify);
        const auto e = rank_values(ci, RankMode::kExtreme);
        std::vector<int> seen(8, 0);
        for (std::size_t i = 0; i < 8; ++i) {
            EXPECT_EQ(d[i] + e[i], 7);
            ++seen[static_cast<std::size_t>(d[i])];
        }
        for (int c : seen) EXPECT_EQ(c, 1);
    }
}

TEST(Rank, PerModuleRanksArePermutations) {
    const auto b = cba::testing::small_model(22);
    const auto a = random_adapter(b.topology, 4, 8.0, 23);
    const auto rep = measure_all({&b, &a}, make_probes(8, 12, 24), ScaleList{});
    std::map<std::pair<int, std::string>, std::set<int>> ranks;
    for (const auto& e : rep.entries) ranks[{e.neuron.layer, e.neuron.module}].insert(e.rank_detoxify);
    EXPECT_EQ(ranks.size(), 4u);
    for (const auto& [key, set] : ranks) EXPECT_EQ(set, (std::set<int>{0, 1, 2, 3}));
    const auto m = rank(rep, RankMode::kExtreme);
    EXPECT_EQ(m.size(), rep.entries.size());
    EXPECT_EQ(m.at(rep.entries[0].neuron), rep.entries[0].rank_extreme);
}

TEST(Report, JsonRoundTrip) {
    const auto b = cba::testing::small_model(25);
    const auto a = random_adapter(b.topology, 4, 8.0, 26);
    const auto probes = make_probes(5, 12, 27);
    const auto rep = measure_all({&b, &a}, probes, ScaleList{}, probes_digest(probes));
    const auto j = to_json(rep);
    EXPECT_TRUE(j.contains("probes_id"));
    EXPECT_TRUE(j.contains("scale_list"));
    ASSERT_EQ(j["entries"].size(), rep.entries.size());
    for (const char* key : {"layer", "module", "neuron", "ci", "rank_detoxify", "rank_extreme"}) {
        EXPECT_TRUE(j["entries"][0].contains(key)) << key;
    }
    const auto back = report_from_json(j);
    EXPECT_EQ(back.probes_id, rep.probes_id);
    for (std::size_t i = 0; i < rep.entries.size(); ++i) EXPECT_EQ(back.entries[i].ci, rep.entries[i].ci);
    auto bad = j;
    bad["entries"][0]["ci"] = -1.0;
    EXPECT_THROW(report_from_json(bad), FormatError);
}

TEST(Report, DigestIsContentSensitive) {
    const auto p = make_probes(5, 12, 28);
    auto q = p;
    EXPECT_EQ(probes_digest(p), probes_digest(q));
    q[0][0] = (q[0][0] + 1) % 12;
    EXPECT_NE(probes_digest(p), probes_digest(q));
}

}  // namespace
}  // namespace cba::causal
