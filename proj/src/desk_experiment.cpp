// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/desk_experiment.hpp"

#include "cba/causal.hpp"
#include "cba/coverage.hpp"
#include "cba/desk_task.hpp"
#include "cba/poisoner.hpp"
#include "cba/provider.hpp"
#include "cba/rng.hpp"

namespace cba::desk {

Scores score(const model::ModelView& view, const metrics::EvalSuite& suite) {
    Scores s;
    s.accuracy = metrics::task_accuracy(view, suite.clean_inputs);
    s.asr = metrics::asr(view, suite);
    s.curve = metrics::ftr_curve(view, suite);
    s.ftr = metrics::mean_false_trigger_rate(s.curve);
    return s;
}

std::optional<std::size_t> select_plan(const std::vector<SweepRow>& rows, double accuracy_floor, double min_asr) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& d = rows[i].detoxify;
        if (d.accuracy < accuracy_floor || d.asr < min_asr) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& b = rows[*best].detoxify;
        if (d.ftr < b.ftr || (d.ftr == b.ftr && d.asr > b.asr)) best = i;
    }
    return best;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    const DeskTask& task = default_task();
    const auto topo = topology(task, cfg.embed_dim, cfg.num_layers, cfg.slots);
    const auto base = model::make_random_base(topo, mix_seed(cfg.seed, 1));

    adapter::LoraConfig lora;
    lora.rank = cfg.rank;
    lora.alpha = cfg.alpha;
    lora.target_modules = cfg.slots;
    lora.num_layers = cfg.num_layers;
    lora.base_model_id = topo.model_id;

    auto clean_cfg = cfg.clean_train;
    clean_cfg.seed = mix_seed(cfg.seed, 2);
    const auto train_set = to_labeled(topo, generate(task, cfg.train_size, mix_seed(cfg.seed, 3)));
    const auto clean =
        train::train(base, train::fresh_adapter(lora, topo.embed_dim, mix_seed(cfg.seed, 4)), train_set, clean_cfg)
            .adapter;
    const model::ModelView clean_view{&base, &clean};

    datagen::BuiltinProvider provider(task.lexicon, mix_seed(cfg.seed, 5), task.seq_len);
    auto seeds = datagen::label_with_target(clean_view, datagen::generate_seeds("desk", provider, cfg.seed_prompts));
    const int k = cfg.k > 0 ? cfg.k : coverage::default_k(cfg.rank);
    const auto fuzz = datagen::fuzz_loop(clean_view, provider, cfg.budget, k, std::move(seeds), "desk sentiment");

    poison::BackdoorSpec spec;
    spec.trigger = task.trigger;
    spec.target.label = 1;
    spec.target.response = task.labels[1];
    const auto poisoned_corpus = poison::poison_corpus(fuzz.corpus, spec, cfg.poison_rate, mix_seed(cfg.seed, 6));

    auto poison_cfg = cfg.poison_train;
    poison_cfg.seed = mix_seed(cfg.seed, 7);
    const auto poison_set = datagen::to_labeled(topo, poisoned_corpus.samples);
    const auto poisoned = train::adaptive_train(base, clean, poison_set, poison_cfg, cfg.adaptive_init).adapter;
    const auto merged_base = model::merge_into_base(base, clean);

    const auto eval = generate(task, cfg.eval_size, mix_seed(cfg.seed, 8));
    std::vector<std::string> prompts;
    std::vector<int> labels;
    for (const auto& s : eval) {
        prompts.push_back(s.prompt);
        labels.push_back(s.label);
    }
    const auto suite =
        metrics::make_sentence_suite(topo, prompts, labels, spec, poison::pseudo_trigger_set(spec));

    ExperimentResult r;
    r.clean = score(clean_view, suite);
    r.adaptive = score({&merged_base, &poisoned}, suite);
    r.corpus_size = fuzz.corpus.size();
    r.corpus_coverage = coverage::tkincov(fuzz.coverage);
    r.fuzz_status = fuzz.status;
    r.poisoned_count = poisoned_corpus.poisoned_count();

    std::vector<model::Tokens> probes;
    for (const auto& s : datagen::to_labeled(topo, fuzz.corpus)) probes.push_back(s.tokens);
    const auto report = causal::measure_all(clean_view, probes, {}, causal::probes_digest(probes));

    for (auto plan : merge::sweep_grid(merge::MergeMode::kDetoxify, cfg.sweep_a, cfg.sweep_b_step, cfg.sweep_b_min)) {
        SweepRow row;
        row.plan = plan;
        const auto detox = merge::detoxify_merge(clean, poisoned, report, plan);
        row.detoxify = score({&base, &detox}, suite);
        plan.mode = merge::MergeMode::kExtreme;
        const auto extreme = merge::detoxify_merge(clean, poisoned, report, plan);
        row.extreme = score({&base, &extreme}, suite);
        r.sweep.push_back(std::move(row));
    }
    r.selected = select_plan(r.sweep, r.adaptive.accuracy, cfg.min_asr);
    return r;
}

namespace {

nlohmann::json scores_json(const Scores& s) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : s.curve) curve.push_back({{"d", p.distance}, {"ftr", p.ftr}});
    return {{"task_accuracy", s.accuracy}, {"asr", s.asr}, {"ftr", s.ftr}, {"ftr_by_distance", curve}};
}

}  // namespace

nlohmann::json to_json(const ExperimentResult& r) {
    nlohmann::json sweep = nlohmann::json::array();
    for (const auto& row : r.sweep) {
        sweep.push_back({{"a", row.plan.a},
                         {"b", row.plan.b},
                         {"detoxify", scores_json(row.detoxify)},
                         {"extreme", scores_json(row.extreme)}});
    }
    nlohmann::json j = {{"clean", scores_json(r.clean)},
                        {"adaptive", scores_json(r.adaptive)},
                        {"corpus_size", r.corpus_size},
                        {"corpus_coverage", r.corpus_coverage},
                        {"poisoned_count", r.poisoned_count},
                        {"sweep", sweep}};
    j["selected"] = r.selected ? nlohmann::json(*r.selected) : nlohmann::json(nullptr);
    return j;
}

}  // namespace cba::desk
