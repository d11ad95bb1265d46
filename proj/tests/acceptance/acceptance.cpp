// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, then a summary line.
// Exit status is 0 when every criterion ran; --strict also requires every criterion to pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cba/causal.hpp"
#include "cba/coverage.hpp"
#include "cba/datagen.hpp"
#include "cba/desk_experiment.hpp"
#include "cba/desk_task.hpp"
#include "cba/lora_trainer.hpp"
#include "cba/merger.hpp"
#include "cba/metrics.hpp"
#include "cba/provider.hpp"
#include "test_support.hpp"

namespace {

using namespace cba;

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Notes {
 public:
    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass_ = false;
            failed_.push_back(what);
        }
    }
    void note(const std::string& text) { notes_.push_back(text); }
    Outcome outcome() const {
        std::string d;
        for (const auto& f : failed_) d += (d.empty() ? "" : "; ") + std::string("failed: ") + f;
        for (const auto& n : notes_) d += (d.empty() ? "" : "; ") + n;
        return {pass_, d};
    }

 private:
    bool pass_ = true;
    std::vector<std::string> failed_;
    std::vector<std::string> notes_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

bool bit_equal(const adapter::AdapterSet& x, const adapter::AdapterSet& y) {
    if (x.modules.size() != y.modules.size()) return false;
    for (std::size_t i = 0; i < x.modules.size(); ++i) {
        if (!(x.modules[i].A == y.modules[i].A) || !(x.modules[i].B == y.modules[i].B)) return false;
    }
    return true;
}

// ---------------------------------------------------------------- merge algebra

Outcome merge_algebra() {
    Notes n;
    int cases = 0;
    for (const int r : {1, 2, 4, 7}) {
        const auto base = testing::small_model(100 + r, 6, 2);
        const auto clean = testing::random_adapter(base.topology, r, 2.0 * r, 200 + r);
        const auto poison = testing::random_adapter(base.topology, r, 2.0 * r, 300 + r);
        causal::CausalInfluenceReport report;
        std::mt19937_64 gen(400 + r);
        std::uniform_real_distribution<double> u(0, 1);
        for (const auto& id : clean.neurons()) report.entries.push_back({id, u(gen), 0, 0});
        causal::assign_ranks(report);

        for (const auto mode : {merge::MergeMode::kDetoxify, merge::MergeMode::kExtreme}) {
            merge::MergePlan p;
            p.mode = mode;
            p.a = 1.0;
            p.b = 0.0;
            n.check(bit_equal(merge::detoxify_merge(clean, poison, report, p), clean), "(1,0) equals clean");
            p.a = 0.0;
            n.check(bit_equal(merge::detoxify_merge(clean, poison, report, p), poison), "(0,0) equals poison");
            for (int ai = 0; ai <= 20; ++ai) {
                p.a = ai / 20.0;
                p.b = 0.0;
                n.check(bit_equal(merge::detoxify_merge(clean, poison, report, p), merge::avg_merge(clean, poison, 1.0 - p.a)),
                        "b=0 collapse to avg_merge(1-a)");
                ++cases;
            }
        }
        for (int ai = 0; ai <= 100; ++ai) {
            for (int bi = 0; bi <= ai; ++bi) {
                for (int k = 0; k < r; ++k) {
                    const auto c = merge::coefficient_pair(ai / 100.0, bi / 100.0, merge::normalized_rank(k, r));
                    const double sum = c.clean + c.poison;
                    if (std::abs(sum - 1.0) > std::numeric_limits<double>::epsilon()) {
                        n.check(false, "coefficients sum to 1 within 1 ulp");
                    }
                    ++cases;
                }
            }
        }
    }
    n.note(std::to_string(cases) + " cases");
    return n.outcome();
}

// ---------------------------------------------------------------- coverage oracle

using NeuronSet = std::set<std::tuple<int, std::string, int>>;

NeuronSet brute_force(const std::vector<model::InlineActivationTrace>& traces, int k) {
    NeuronSet out;
    for (const auto& t : traces) {
        for (const auto& e : t.entries) {
            std::vector<int> idx(static_cast<std::size_t>(e.activations.size()));
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(),
                             [&](int a, int b) { return std::abs(e.activations(a)) > std::abs(e.activations(b)); });
            for (int i = 0; i < k; ++i) out.emplace(e.layer, e.module, idx[static_cast<std::size_t>(i)]);
        }
    }
    return out;
}

NeuronSet as_set(const coverage::CoverageState& s) {
    NeuronSet out;
    for (const auto& id : s.activated()) out.emplace(id.layer, id.module, id.neuron);
    return out;
}

Outcome coverage_oracle() {
    Notes n;
    std::mt19937_64 gen(17);
    std::normal_distribution<double> g(0, 1);
    const int layers = 4;
    const int r = 8;
    std::vector<coverage::ModuleKey> keys;
    for (int l = 0; l < layers; ++l) {
        keys.push_back({l, "q"});
        keys.push_back({l, "v"});
    }
    n.check(keys.size() * r <= 64, "|N| <= 64");
    for (const int k : {1, 2, 3, 8}) {
        std::vector<model::InlineActivationTrace> traces;
        coverage::CoverageState s(keys, r, k);
        double last = 0.0;
        for (int i = 0; i < 200; ++i) {
            model::InlineActivationTrace t;
            for (const auto& key : keys) {
                Vector act(r);
                for (int j = 0; j < r; ++j) act(j) = g(gen);
                t.entries.push_back({key.layer, key.module, act});
            }
            traces.push_back(t);
            s.update(t);
            const double now = coverage::tkincov(s);
            n.check(now >= last, "monotone");
            last = now;
            if (as_set(s) != brute_force(traces, k)) n.check(false, "incremental equals brute-force union (k=" + std::to_string(k) + ")");
        }
        for (int shuffle = 0; shuffle < 5; ++shuffle) {
            std::shuffle(traces.begin(), traces.end(), gen);
            coverage::CoverageState p(keys, r, k);
            for (const auto& t : traces) p.update(t);
            n.check(as_set(p) == as_set(s) && coverage::tkincov(p) == coverage::tkincov(s), "permutation invariance");
        }
        if (k == r) {
            coverage::CoverageState one(keys, r, k);
            one.update(traces.front());
            n.check(coverage::tkincov(one) == 1.0, "k=r covers everything after one sample");
        }
    }
    n.note("200 traces x k in {1,2,3,8}, |N|=64");
    return n.outcome();
}

// ---------------------------------------------------------------- causal oracle

// Scaling inline neuron i by s is the same map as scaling row i of A by s.
double row_scaled_ci(const model::BaseModel& base, const adapter::AdapterSet& a, const adapter::NeuronId& id,
                     const std::vector<model::Tokens>& probes, const std::vector<double>& scales) {
    double total = 0.0;
    for (const auto& p : probes) {
        const Vector ref = model::forward({&base, &a}, p);
        double inner = 0.0;
        for (const double s : scales) {
            auto copy = a;
            copy.find(id.layer, id.module)->A.row(id.neuron) *= s;
            inner += (model::forward({&base, &copy}, p) - ref).norm();
        }
        total += inner / static_cast<double>(scales.size());
    }
    return total / static_cast<double>(probes.size());
}

Outcome causal_oracle() {
    Notes n;
    const auto base = testing::small_model(51, 8, 2, 3, 12);
    auto a = testing::random_adapter(base.topology, 4, 8.0, 52);
    std::mt19937_64 gen(53);
    std::vector<model::Tokens> probes;
    for (int i = 0; i < 40; ++i) probes.push_back(testing::random_tokens(gen, 12, 1 + i % 6));

    const auto flat = causal::measure_all({&base, &a}, probes, causal::ScaleList{{1.0}});
    for (const auto& e : flat.entries) n.check(e.ci == 0.0, "SL={1} gives zero CI");

    auto dead = a;
    dead.modules[1].A.row(2).setZero();
    dead.modules[3].B.row(0).setZero();
    const auto with_dead = causal::measure_all({&base, &dead}, probes, causal::ScaleList{});
    n.check(with_dead.find({0, "v", 2})->ci == 0.0, "zero A row gives CI 0");
    n.check(with_dead.find({1, "v", 0})->ci == 0.0, "zero B row gives CI 0");

    const causal::ScaleList scales{{0.0, 0.5, 2.0}};
    const auto report = causal::measure_all({&base, &a}, probes, scales);
    double worst = 0.0;
    for (const auto& e : report.entries) {
        const double want = row_scaled_ci(base, a, e.neuron, probes, scales.factors);
        const double rel = std::abs(e.ci - want) / std::max(std::abs(want), 1e-300);
        worst = std::max(worst, rel);
    }
    n.check(worst <= 1e-9, "batch equals per-neuron recomputation");
    n.note(std::to_string(report.entries.size()) + " neurons, max rel err " + fmt("%.2e", worst));
    return n.outcome();
}

// ---------------------------------------------------------------- gradient check

Outcome gradient_check() {
    Notes n;
    const auto base = testing::small_model(61, 8, 2, 3, 12);
    const auto a = testing::random_adapter(base.topology, 4, 8.0, 62, 0.4);
    n.check(a.parameter_count() <= 1000, "adapter has at most 1e3 parameters");
    std::mt19937_64 gen(63);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const train::LabeledSample s{testing::random_tokens(gen, 12, 1 + i % 8), i % 3};
        worst = std::max(worst, train::grad_check(base, a, s, 1e-4).max_rel_error);
    }
    n.check(worst <= 1e-4, "max relative error <= 1e-4");
    n.note(std::to_string(a.parameter_count()) + " params, max rel err " + fmt("%.2e", worst));
    return n.outcome();
}

// ---------------------------------------------------------------- metric anchors

Outcome metric_anchors() {
    Notes n;
    const std::vector<std::pair<long long, double>> sentence{{0, 0.0}, {13, 0.16}, {30, 0.37}, {60, 0.74}, {81, 1.0}};
    for (const auto& [raw, want] : sentence) {
        const double d = metrics::sentence_trigger_distance(raw, 81);
        n.check(std::abs(d - want) <= 0.01 + 1e-9, "sentence distance raw=" + std::to_string(raw));
    }
    // Reference similarity and distance pairs; the range is their own max and min similarity.
    const std::vector<std::pair<double, double>> topic{{1.00, 0.0},  {0.96, 0.28}, {0.95, 0.35}, {0.93, 0.53},
                                                       {0.91, 0.68}, {0.88, 0.88}, {0.86, 1.0}};
    for (const auto& [s, want] : topic) {
        const double d = metrics::topic_trigger_distance(s, 1.00, 0.86);
        if (std::abs(d - want) > 0.03 + 1e-9) {
            n.check(false, "topic distance s=" + fmt("%.2f", s) + " gives " + fmt("%.3f", d) + " vs " + fmt("%.2f", want));
        }
    }
    std::vector<metrics::FtrPoint> line;
    for (int i = 0; i <= 100; ++i) line.push_back({i / 100.0, 1.0 - i / 100.0});
    const double auc = metrics::ftr_auc(line);
    n.check(std::abs(auc - 0.5) <= 1e-12, "ftr_auc of 1-d equals 0.5");

    const auto base = testing::small_model(71, 8, 2, 3, 12);
    const auto a = testing::random_adapter(base.topology, 4, 8.0, 72);
    std::mt19937_64 gen(73);
    std::vector<model::Tokens> inputs;
    for (int i = 0; i < 50; ++i) inputs.push_back(testing::random_tokens(gen, 12, 5));
    const std::vector<int> tokens{0, 2};
    n.check(metrics::logit_bias({&base, &a}, {&base, &a}, inputs, tokens) == 0.0, "logit_bias of identical adapters");
    n.note("ftr_auc " + fmt("%.15f", auc));
    return n.outcome();
}

// ---------------------------------------------------------------- desk experiment

const desk::ExperimentResult& experiment() {
    static const desk::ExperimentResult result = [] {
        desk::ExperimentConfig cfg;
        cfg.seed = 0;
        return desk::run_experiment(cfg);
    }();
    return result;
}

Outcome end_to_end() {
    Notes n;
    const auto& r = experiment();
    n.check(r.clean.accuracy >= 0.95, "clean accuracy >= 0.95 (" + fmt("%.3f", r.clean.accuracy) + ")");
    if (!r.selected) {
        n.check(false, "no sweep cell meets the accuracy floor and ASR >= 0.6");
        return n.outcome();
    }
    const auto& row = r.sweep[*r.selected];
    const auto& d = row.detoxify;
    n.check(d.asr >= 0.6, "(i) ASR(detoxify) >= 0.6");
    n.check(d.ftr <= 0.6 * r.adaptive.ftr, "(ii) FTR(detoxify) <= 0.6 x FTR(adaptive)");
    n.check(d.accuracy >= r.adaptive.accuracy, "(iii) accuracy(detoxify) >= accuracy(adaptive)");
    n.note("seed 0, a=" + fmt("%.1f", row.plan.a) + " b=" + fmt("%.1f", row.plan.b) + ", clean acc " +
           fmt("%.3f", r.clean.accuracy) + ", detoxify acc/asr/ftr " + fmt("%.3f", d.accuracy) + "/" +
           fmt("%.3f", d.asr) + "/" + fmt("%.3f", d.ftr) + ", adaptive acc/asr/ftr " + fmt("%.3f", r.adaptive.accuracy) +
           "/" + fmt("%.3f", r.adaptive.asr) + "/" + fmt("%.3f", r.adaptive.ftr) + ", FTR ratio " +
           fmt("%.3f", d.ftr / r.adaptive.ftr));
    return n.outcome();
}

Outcome extreme_direction() {
    Notes n;
    const auto& r = experiment();
    if (!r.selected) {
        n.check(false, "no selected (a,b) cell");
        return n.outcome();
    }
    const auto& row = r.sweep[*r.selected];
    n.check(row.extreme.asr >= row.detoxify.asr, "ASR(extreme) >= ASR(detoxify)");
    n.check(row.extreme.ftr >= row.detoxify.ftr, "FTR(extreme) >= FTR(detoxify)");
    n.note("asr " + fmt("%.3f", row.extreme.asr) + " vs " + fmt("%.3f", row.detoxify.asr) + ", ftr " +
           fmt("%.3f", row.extreme.ftr) + " vs " + fmt("%.3f", row.detoxify.ftr));
    return n.outcome();
}

// ---------------------------------------------------------------- fuzz loop

Outcome fuzz_convergence() {
    Notes n;
    const auto& task = desk::default_task();
    const auto topo = desk::topology(task);
    const auto base = model::make_random_base(topo, 81);
    const auto a = train::fresh_adapter(
        [&] {
            adapter::LoraConfig c;
            c.rank = 4;
            c.alpha = 16;
            c.target_modules = topo.slot_names;
            c.num_layers = topo.num_layers;
            c.base_model_id = topo.model_id;
            return c;
        }(),
        topo.embed_dim, 82);
    auto b = a;
    std::mt19937_64 gen(83);
    std::normal_distribution<double> g(0, 0.3);
    for (auto& m : b.modules) m.B = m.B.unaryExpr([&](double) { return g(gen); });
    const model::ModelView view{&base, &b};

    datagen::BuiltinProvider seeder(task.lexicon, 84, task.seq_len);
    const auto seeds = datagen::label_with_target(view, datagen::generate_seeds("desk", seeder, 20));
    const int k = coverage::default_k(4);

    datagen::EchoProvider echo;
    for (const int patience : {1, 5, 25}) {
        const auto r = datagen::fuzz_loop(view, echo, {1000, patience, 4}, k, seeds, "desk");
        n.check(r.status == datagen::FuzzStatus::kConverged &&
                    r.candidates_evaluated == static_cast<std::size_t>(patience) && r.corpus.size() == seeds.size(),
                "echo halts after exactly P=" + std::to_string(patience));
    }

    const std::vector<datagen::TaskSample> few(seeds.begin(), seeds.begin() + 2);
    const double seed_only = coverage::tkincov(datagen::recompute_coverage(view, few, k));
    auto run = [&] {
        datagen::BuiltinProvider p(task.lexicon, 85, task.seq_len);
        return datagen::fuzz_loop(view, p, {400, 40, 4}, k, few, "desk");
    };
    const auto first = run();
    const auto second = run();
    n.check(coverage::tkincov(first.coverage) >= seed_only, "builtin coverage >= seed-only coverage");
    n.check(datagen::to_jsonl(first.corpus) == datagen::to_jsonl(second.corpus), "identical seeds give identical corpora");
    n.note("seed-only " + fmt("%.3f", seed_only) + " -> " + fmt("%.3f", coverage::tkincov(first.coverage)) + ", " +
           std::to_string(first.corpus.size()) + " samples");
    return n.outcome();
}

// ---------------------------------------------------------------- multi-seed context

std::string multi_seed_summary(int seeds) {
    int selected = 0;
    int e2e = 0;
    int direction = 0;
    for (int s = 0; s < seeds; ++s) {
        desk::ExperimentConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(s);
        const auto r = desk::run_experiment(cfg);
        if (!r.selected) continue;
        ++selected;
        const auto& row = r.sweep[*r.selected];
        const auto& d = row.detoxify;
        if (r.clean.accuracy >= 0.95 && d.asr >= 0.6 && d.ftr <= 0.6 * r.adaptive.ftr && d.accuracy >= r.adaptive.accuracy) {
            ++e2e;
        }
        if (row.extreme.asr >= d.asr && row.extreme.ftr >= d.ftr) ++direction;
    }
    std::ostringstream os;
    os << "seeds 0-" << seeds - 1 << ": plan selected " << selected << "/" << seeds << ", end-to-end " << e2e << "/"
       << seeds << ", extreme directionality " << direction << "/" << selected;
    return os.str();
}

struct Criterion {
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    bool strict = false;
    int info_seeds = 12;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--strict") == 0) strict = true;
        if (std::strcmp(argv[i], "--seeds") == 0 && i + 1 < argc) info_seeds = std::atoi(argv[++i]);
    }

    const std::vector<Criterion> criteria{
        {"merge_algebra", 1.0, merge_algebra},
        {"coverage_oracle", 5.0, coverage_oracle},
        {"causal_oracle", 30.0, causal_oracle},
        {"gradient_check", 10.0, gradient_check},
        {"metric_anchors", 1.0, metric_anchors},
        {"end_to_end_desk", 600.0, end_to_end},
        {"extreme_directionality", 600.0, extreme_direction},
        {"fuzz_convergence", 60.0, fuzz_convergence},
    };

    int passed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > c.budget_seconds) {
            o.pass = false;
            o.detail += "; over runtime budget of " + fmt("%.0f", c.budget_seconds) + " s";
        }
        passed += o.pass ? 1 : 0;
        std::printf("%s %-24s %8.3fs  %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
        std::fflush(stdout);
    }
    if (info_seeds > 0) {
        const auto start = std::chrono::steady_clock::now();
        const auto text = multi_seed_summary(info_seeds);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("INFO %-24s %8.3fs  %s\n", "desk_multi_seed", secs, text.c_str());
    }
    std::printf("SUMMARY %zu criteria, %d passed, %zu failed\n", criteria.size(), passed, criteria.size() - passed);
    return strict && passed != static_cast<int>(criteria.size()) ? 1 : 0;
}
