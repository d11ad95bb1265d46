// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "cba/adapter_store.hpp"
#include "cba/causal.hpp"
#include "cba/coverage.hpp"
#include "cba/datagen.hpp"
#include "cba/desk_task.hpp"
#include "cba/error.hpp"
#include "cba/lora_trainer.hpp"
#include "cba/merger.hpp"
#include "cba/metrics.hpp"
#include "cba/model_engine.hpp"
#include "cba/poisoner.hpp"
#include "cba/provider.hpp"
#include "cba/rng.hpp"
#include "cba/safetensors.hpp"

namespace cba::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_backdoor() {
    const auto& task = desk::default_task();
    poison::BackdoorSpec spec;
    spec.trigger = task.trigger;
    spec.target.label = 1;
    spec.target.response = task.labels[1];
    return poison::to_json(spec);
}

bool is_credential_key(const std::string& key) {
    std::string k;
    for (const char c : key) k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return k == "api_key" || k == "apikey" || k == "key" || k == "token" || k == "authorization" ||
           k == "secret" || k == "password";
}

void reject_credentials(const json& j, const std::string& where) {
    if (j.is_object()) {
        for (const auto& [key, value] : j.items()) {
            if (is_credential_key(key)) {
                throw ValueError("config field " + where + key +
                                 " looks like a credential; set MUTATION_API_KEY in the environment instead");
            }
            reject_credentials(value, where + key + ".");
        }
    } else if (j.is_array()) {
        for (const auto& v : j) reject_credentials(v, where);
    }
}

void fill_seed(json& stanza, const char* field, std::uint64_t value) {
    if (!stanza.contains(field) || stanza[field].is_null()) stanza[field] = value;
}

// ---------------------------------------------------------------- file helpers

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("short write to " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void require_exists(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) throw IoError(what + " not found: " + path.string());
}

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// ---------------------------------------------------------------- pipeline context

struct Context {
    Settings settings;
    std::ostream& out;
    std::ostream& err;

    const json& stanza(const char* name) const { return settings.config.at(name); }

    fs::path path(const char* key, const fs::path& fallback) const {
        const auto& paths = settings.config.at("paths");
        if (paths.contains(key) && paths[key].is_string() && !paths[key].get<std::string>().empty()) {
            return paths[key].get<std::string>();
        }
        return settings.out_dir / fallback;
    }
    fs::path base_path() const { return path("base_model", "base"); }
    fs::path clean_path() const { return path("clean_adapter", "clean"); }
    fs::path corpus_path() const { return path("corpus", "corpus.jsonl"); }
    fs::path poisoned_path() const { return path("poisoned_adapter", "adapter_adaptive"); }
    fs::path causal_path() const { return path("causal_report", "causal.json"); }

    void warn(const std::string& msg) const { err << "cba: warning: " << msg << "\n"; }
    void info(const std::string& msg) const { out << msg << "\n"; }
};

adapter::LoraConfig lora_config(const Context& ctx, const model::Topology& topo) {
    const auto& l = ctx.stanza("lora");
    adapter::LoraConfig cfg;
    cfg.rank = l.at("rank").get<int>();
    cfg.alpha = l.at("alpha").get<double>();
    cfg.dtype = parse_dtype(l.at("dtype").get<std::string>());
    cfg.target_modules = topo.slot_names;
    cfg.num_layers = topo.num_layers;
    cfg.base_model_id = topo.model_id;
    cfg.validate();
    return cfg;
}

train::TrainConfig optim_config(const json& stanza, std::uint64_t seed) {
    json j = {{"learning_rate", stanza.at("learning_rate")},
              {"epochs", stanza.at("epochs")},
              {"batch_size", stanza.at("batch_size")},
              {"momentum", stanza.at("momentum")},
              {"seed", seed}};
    auto cfg = train::train_config_from_json(j);
    cfg.validate();
    return cfg;
}

poison::BackdoorSpec backdoor(const Context& ctx) {
    auto spec = poison::backdoor_from_json(ctx.stanza("poison").at("backdoor"));
    spec.validate();
    return spec;
}

poison::TopicRewrite topic_rewrite(const std::string& name) {
    if (name == "template") return poison::TopicRewrite::kTemplate;
    if (name == "append_token") return poison::TopicRewrite::kAppendToken;
    throw ValueError("unknown topic_rewrite '" + name + "'");
}

metrics::EvalSuite build_suite(const Context& ctx, const model::Topology& topo) {
    const auto& task = desk::default_task();
    const auto& ev = ctx.stanza("eval");
    auto spec = backdoor(ctx);
    const auto samples = desk::generate(task, ev.at("size").get<std::size_t>(), ev.at("seed").get<std::uint64_t>());
    std::vector<std::string> prompts;
    std::vector<int> labels;
    for (const auto& s : samples) {
        prompts.push_back(s.prompt);
        labels.push_back(s.label);
    }
    const auto variants = poison::pseudo_trigger_set(spec);
    if (spec.kind == poison::TriggerKind::kTopic) spec.policy = poison::InsertionPolicy::kSuffix;
    return metrics::make_sentence_suite(topo, prompts, labels, spec, variants,
                                        ev.at("stealth_epsilon").get<double>());
}

json train_report_json(const train::TrainReport& report, const std::string& mode, const Context& ctx) {
    json j = train::to_json(report);
    j["mode"] = mode;
    j["config_hash"] = ctx.settings.config_hash;
    return j;
}

// ---------------------------------------------------------------- subcommands

int cmd_init(const Context& ctx) {
    const auto& task = desk::default_task();
    const auto& s = ctx.stanza("init");
    const auto topo = desk::topology(task, s.at("embed_dim").get<int>(), s.at("num_layers").get<int>(),
                                     s.at("slots").get<std::vector<std::string>>());
    const auto base = model::make_random_base(topo, s.at("base_seed").get<std::uint64_t>());
    const auto lora = lora_config(ctx, topo);
    const auto train_set =
        desk::to_labeled(topo, desk::generate(task, s.at("train_size").get<std::size_t>(),
                                              s.at("data_seed").get<std::uint64_t>()));
    const auto cfg = optim_config(s.at("train"), s.at("train").at("seed").get<std::uint64_t>());
    auto result = train::train(base, train::fresh_adapter(lora, topo.embed_dim, s.at("adapter_seed").get<std::uint64_t>()),
                               train_set, cfg);
    result.adapter.provenance = "clean";

    const auto base_dir = ctx.settings.out_dir / "base";
    const auto clean_dir = ctx.settings.out_dir / "clean";
    model::save_base(base, base_dir);
    adapter::save_adapter(result.adapter, clean_dir);
    write_json(ctx.settings.out_dir / "train_init.json", train_report_json(result.report, "init", ctx));
    ctx.info("base model -> " + base_dir.string());
    ctx.info("clean adapter -> " + clean_dir.string() + " (train accuracy " + fixed2(result.report.final_accuracy) + ")");
    return kExitOk;
}

int cmd_gen(const Context& ctx) {
    const auto base_dir = ctx.base_path();
    const auto clean_dir = ctx.clean_path();
    require_exists(base_dir, "base model");
    require_exists(clean_dir, "clean adapter");
    const auto base = model::load_base(base_dir);
    const auto clean = adapter::load_adapter(clean_dir);
    model::check_compatible(base, clean);
    const model::ModelView view{&base, &clean};

    const auto& s = ctx.stanza("datagen");
    auto provider = datagen::make_provider(s.at("provider"), desk::default_task().lexicon);

    datagen::FuzzBudget budget;
    budget.max_iterations = s.at("budget").at("max_iterations").get<int>();
    budget.patience = s.at("budget").at("patience").get<int>();
    budget.candidates_per_mutation = s.at("budget").at("candidates_per_mutation").get<int>();
    budget.validate();
    const int k_cfg = s.at("k").get<int>();
    const int k = k_cfg > 0 ? k_cfg : coverage::default_k(clean.config.rank);

    std::optional<datagen::FuzzResult> result;
    try {
        auto raw = datagen::generate_seeds(s.at("task_spec").get<std::string>(), *provider, s.at("seeds").get<int>());
        std::vector<datagen::TaskSample> seeds;
        for (auto& seed : raw) {
            try {
                model::tokenize(base.topology, seed.prompt);
            } catch (const ValueError& e) {
                ctx.warn("dropping seed " + seed.id + ": " + e.what());
                continue;
            }
            seeds.push_back(std::move(seed));
        }
        if (seeds.empty()) throw ProviderError("provider returned no usable seed prompts");
        seeds = datagen::label_with_target(view, std::move(seeds));
        result = datagen::fuzz_loop(view, *provider, budget, k, std::move(seeds),
                                  s.at("task_summary").get<std::string>());
    } catch (const ProviderError& e) {
        ctx.err << "cba: provider failure: " << e.what() << "\n";
        if (!e.raw_payload().empty()) ctx.err << "cba: raw payload: " << e.raw_payload() << "\n";
        return kExitError;
    }

    const auto& fuzz = *result;
    const auto& out = ctx.settings.out_dir;
    datagen::write_jsonl(out / "corpus.jsonl", fuzz.corpus);
    json report = coverage::report_json(fuzz.coverage);
    const bool converged = fuzz.status == datagen::FuzzStatus::kConverged;
    report["status"] = converged ? "converged" : "budget_exhausted";
    report["iterations"] = fuzz.iterations;
    report["candidates_evaluated"] = fuzz.candidates_evaluated;
    report["corpus_size"] = fuzz.corpus.size();
    report["provider"] = provider->name();
    report["config_hash"] = ctx.settings.config_hash;
    write_json(out / "coverage.json", report);
    write_text(out / "coverage.csv", coverage::curve_csv(fuzz.coverage));
    ctx.info("corpus: " + std::to_string(fuzz.corpus.size()) + " samples, coverage " +
             fixed2(coverage::tkincov(fuzz.coverage)) + ", " + report["status"].get<std::string>());
    if (!converged) {
        ctx.warn("mutation budget exhausted before coverage converged");
        return kExitStopped;
    }
    return kExitOk;
}

int cmd_train(const Context& ctx, const std::string& mode) {
    if (mode != "clean" && mode != "overpoison" && mode != "adaptive") {
        throw ValueError("unknown train mode '" + mode + "'");
    }
    const auto base_dir = ctx.base_path();
    const auto corpus_file = ctx.corpus_path();
    require_exists(base_dir, "base model");
    require_exists(corpus_file, "corpus");
    std::optional<adapter::AdapterSet> clean;
    if (mode == "adaptive") {
        const auto clean_dir = ctx.clean_path();
        require_exists(clean_dir, "clean adapter (required by adaptive mode)");
        clean = adapter::load_adapter(clean_dir);
    }
    const auto base = model::load_base(base_dir);
    const auto corpus = datagen::read_jsonl(corpus_file);
    const auto& s = ctx.stanza("train");
    const auto cfg = optim_config(s, s.at("seed").get<std::uint64_t>());
    const auto& out = ctx.settings.out_dir;

    train::TrainResult result;
    if (mode == "clean") {
        const auto lora = lora_config(ctx, base.topology);
        result = train::train(base, train::fresh_adapter(lora, base.topology.embed_dim, s.at("adapter_seed").get<std::uint64_t>()),
                              datagen::to_labeled(base.topology, corpus), cfg);
    } else {
        const auto& p = ctx.stanza("poison");
        const auto spec = backdoor(ctx);
        const auto rewrite = topic_rewrite(p.at("topic_rewrite").get<std::string>());
        const auto poisoned = poison::poison_corpus(corpus, spec, p.at("rate").get<double>(),
                                                    p.at("seed").get<std::uint64_t>(), rewrite);
        datagen::write_jsonl(out / ("corpus_" + mode + ".jsonl"), poisoned.samples, true);
        const auto set = datagen::to_labeled(base.topology, poisoned.samples);
        if (mode == "overpoison") {
            const auto lora = lora_config(ctx, base.topology);
            result = train::train(base, train::fresh_adapter(lora, base.topology.embed_dim, s.at("adapter_seed").get<std::uint64_t>()),
                                  set, cfg);
            result.adapter.provenance = "poisoned";
        } else {
            model::check_compatible(base, *clean);
            result = train::adaptive_train(base, *clean, set, cfg,
                                           train::parse_adaptive_init(s.at("adaptive_init").get<std::string>()));
        }
        ctx.info("poisoned " + std::to_string(poisoned.poisoned_count()) + " of " + std::to_string(corpus.size()) +
                 " samples");
    }
    const auto dir = out / ("adapter_" + mode);
    adapter::save_adapter(result.adapter, dir);
    auto report = train_report_json(result.report, mode, ctx);
    report["provenance"] = result.adapter.provenance;
    write_json(out / ("train_" + mode + ".json"), report);
    ctx.info(mode + " adapter -> " + dir.string() + " (train accuracy " + fixed2(result.report.final_accuracy) + ")");
    return kExitOk;
}

int cmd_causal(const Context& ctx) {
    const auto base_dir = ctx.base_path();
    const auto clean_dir = ctx.clean_path();
    const auto corpus_file = ctx.corpus_path();
    require_exists(base_dir, "base model");
    require_exists(clean_dir, "clean adapter");
    require_exists(corpus_file, "corpus");
    const auto base = model::load_base(base_dir);
    const auto clean = adapter::load_adapter(clean_dir);
    model::check_compatible(base, clean);
    const auto corpus = datagen::read_jsonl(corpus_file);

    const auto& s = ctx.stanza("causal");
    causal::ScaleList scales;
    scales.factors = s.at("scale_list").get<std::vector<double>>();
    scales.validate();
    const auto limit = s.at("probe_count").get<std::size_t>();
    std::vector<model::Tokens> probes;
    for (const auto& sample : corpus) {
        if (limit > 0 && probes.size() >= limit) break;
        probes.push_back(model::tokenize(base.topology, sample.prompt));
    }
    if (probes.empty()) throw ValueError("corpus holds no probe prompts");
    const auto report = causal::measure_all({&base, &clean}, probes, scales, causal::probes_digest(probes));
    json j = causal::to_json(report);
    j["config_hash"] = ctx.settings.config_hash;
    write_json(ctx.settings.out_dir / "causal.json", j);
    ctx.info("causal influence for " + std::to_string(report.entries.size()) + " neurons over " +
             std::to_string(probes.size()) + " probes");
    return kExitOk;
}

struct MergeInputs {
    model::BaseModel base;
    adapter::AdapterSet clean;
    adapter::AdapterSet poisoned;
    causal::CausalInfluenceReport report;
};

MergeInputs load_merge_inputs(const Context& ctx, merge::MergeMode mode) {
    const auto base_dir = ctx.base_path();
    const auto clean_dir = ctx.clean_path();
    const auto poison_dir = ctx.poisoned_path();
    require_exists(base_dir, "base model");
    require_exists(clean_dir, "clean adapter");
    require_exists(poison_dir, "poisoned adapter");
    MergeInputs in{model::load_base(base_dir), adapter::load_adapter(clean_dir), adapter::load_adapter(poison_dir), {}};
    if (mode != merge::MergeMode::kAverage) {
        const auto causal_file = ctx.causal_path();
        require_exists(causal_file, "causal report");
        in.report = causal::report_from_json(read_json(causal_file));
    }
    model::check_compatible(in.base, in.clean);
    if (!adapter::same_architecture(in.clean, in.poisoned)) {
        throw ShapeError("clean and poisoned adapters differ in architecture");
    }
    return in;
}

merge::MergePlan plan_from_stanza(const json& s, merge::MergeMode mode) {
    merge::MergePlan plan;
    plan.a = s.at("a").get<double>();
    plan.b = s.at("b").get<double>();
    plan.w = s.at("w").get<double>();
    plan.allow_extrapolation = s.at("allow_extrapolation").get<bool>();
    plan.mode = mode;
    return plan;
}

int cmd_merge(const Context& ctx, const std::string& mode_override, bool sweep) {
    const auto& s = ctx.stanza("merge");
    const auto mode = merge::parse_mode(mode_override.empty() ? s.at("mode").get<std::string>() : mode_override);
    const auto in = load_merge_inputs(ctx, mode);
    const auto& out = ctx.settings.out_dir;
    const auto name = merge::mode_name(mode);

    if (!sweep) {
        const auto plan = plan_from_stanza(s, mode);
        try {
            merge::validate_coeffs(plan, in.clean.config.rank);
        } catch (const ValueError& e) {
            ctx.err << "cba: merge plan rejected: " << e.what() << "\n";
            return kExitStopped;
        }
        const auto merged = merge::merge(in.clean, in.poisoned, in.report, plan);
        const auto dir = out / ("merged_" + name);
        adapter::save_adapter(merged, dir);
        json j = {{"plan", merge::to_json(plan)}, {"adapter", dir.filename().string()}, {"config_hash", ctx.settings.config_hash}};
        write_json(out / ("merge_" + name + ".json"), j);
        ctx.info(name + " merge -> " + dir.string());
        return kExitOk;
    }

    std::vector<merge::MergePlan> cells;
    const auto& grid = s.at("sweep");
    if (mode == merge::MergeMode::kAverage) {
        for (const double w : grid.at("w").get<std::vector<double>>()) {
            auto plan = plan_from_stanza(s, mode);
            plan.w = w;
            cells.push_back(plan);
        }
    } else {
        const auto a_values = grid.at("a").get<std::vector<double>>();
        std::vector<double> b_values;
        const bool explicit_b = grid.contains("b") && !grid["b"].is_null();
        if (explicit_b) b_values = grid["b"].get<std::vector<double>>();
        for (const double a : a_values) {
            if (!explicit_b) {
                for (int i = 0; i * 0.1 <= a + 1e-9; ++i) {
                    auto plan = plan_from_stanza(s, mode);
                    plan.a = a;
                    plan.b = std::min(i / 10.0, a);
                    cells.push_back(plan);
                }
                continue;
            }
            for (const double b : b_values) {
                auto plan = plan_from_stanza(s, mode);
                plan.a = a;
                plan.b = b;
                cells.push_back(plan);
            }
        }
    }

    const auto topo = in.base.topology;
    const auto suite = build_suite(ctx, topo);
    const model::ModelView reference{&in.base, &in.clean};
    const auto sweep_dir = out / ("sweep_" + name);
    std::ostringstream csv;
    csv << "a,b,w,task_accuracy,asr,ftr_mean,ftr_auc,logit_bias,adapter,config_hash\n";
    json rows = json::array();
    std::size_t written = 0;
    for (const auto& plan : cells) {
        try {
            merge::validate_coeffs(plan, in.clean.config.rank);
        } catch (const ValueError& e) {
            ctx.warn("skipping cell: " + std::string(e.what()));
            continue;
        }
        const auto merged = merge::merge(in.clean, in.poisoned, in.report, plan);
        const std::string cell = mode == merge::MergeMode::kAverage ? "w" + fixed2(plan.w)
                                                                    : "a" + fixed2(plan.a) + "_b" + fixed2(plan.b);
        const auto dir = sweep_dir / cell;
        adapter::save_adapter(merged, dir);
        const auto m = metrics::evaluate({&in.base, &merged}, reference, suite, ctx.settings.config_hash);
        const double ftr_mean = metrics::mean_false_trigger_rate(m.ftr_by_distance);
        csv << num(plan.a) << ',' << num(plan.b) << ',' << num(plan.w) << ',' << num(m.task_accuracy) << ','
            << num(m.asr) << ',' << num(ftr_mean) << ',' << num(m.ftr_auc) << ',' << num(m.logit_bias) << ','
            << (fs::path("sweep_" + name) / cell).string() << ',' << ctx.settings.config_hash << '\n';
        json row = metrics::to_json(m);
        row["plan"] = merge::to_json(plan);
        row["ftr_mean"] = ftr_mean;
        row["adapter"] = (fs::path("sweep_" + name) / cell).string();
        rows.push_back(row);
        ++written;
    }
    write_text(out / ("sweep_" + name + ".csv"), csv.str());
    write_json(out / ("sweep_" + name + ".json"), {{"mode", name}, {"cells", rows}, {"config_hash", ctx.settings.config_hash}});
    ctx.info(name + " sweep: " + std::to_string(written) + " of " + std::to_string(cells.size()) + " cells written");
    return kExitOk;
}

int cmd_eval(const Context& ctx, const std::string& adapter_arg, bool stack_on_clean, const std::string& name) {
    const auto base_dir = ctx.base_path();
    require_exists(base_dir, "base model");
    require_exists(adapter_arg, "adapter");
    const auto base = model::load_base(base_dir);
    const auto target = adapter::load_adapter(adapter_arg);

    const auto clean_dir = ctx.clean_path();
    std::optional<adapter::AdapterSet> clean;
    if (fs::exists(clean_dir)) {
        clean = adapter::load_adapter(clean_dir);
    } else if (stack_on_clean) {
        throw IoError("clean adapter not found: " + clean_dir.string());
    } else {
        ctx.warn("no clean adapter at " + clean_dir.string() + "; logit bias is measured against the bare base");
    }
    const model::ModelView reference{&base, clean ? &*clean : nullptr};
    std::optional<model::BaseModel> stacked;
    if (stack_on_clean) stacked = model::merge_into_base(base, *clean);
    const model::BaseModel& host = stacked ? *stacked : base;
    model::check_compatible(host, target);

    const auto suite = build_suite(ctx, host.topology);
    const auto report = metrics::evaluate({&host, &target}, reference, suite, ctx.settings.config_hash);
    const auto& out = ctx.settings.out_dir;
    write_json(out / (name + ".json"), metrics::to_json(report));
    write_text(out / (name + "_ftr_curve.csv"), metrics::ftr_curve_csv(report));
    ctx.info("accuracy " + fixed2(report.task_accuracy) + ", asr " + fixed2(report.asr) + ", ftr_auc " +
             fixed2(report.ftr_auc) + ", logit_bias " + fixed2(report.logit_bias));
    return kExitOk;
}

json inspect_path(const fs::path& path) {
    if (fs::is_directory(path)) {
        if (fs::exists(path / adapter::kConfigFile)) {
            const auto set = adapter::load_adapter(path);
            json modules = json::array();
            for (const auto& m : set.modules) {
                modules.push_back({{"layer", m.layer_index},
                                   {"module", m.module_name},
                                   {"delta_frobenius", adapter::merged_delta(m, set.config).norm()}});
            }
            return {{"kind", "adapter"},
                    {"provenance", set.provenance},
                    {"config", adapter::to_json(set.config)},
                    {"inline_neurons", set.inline_neuron_count()},
                    {"parameters", set.parameter_count()},
                    {"modules", modules}};
        }
        if (fs::exists(path / model::kTopologyFile)) {
            const auto base = model::load_base(path);
            return {{"kind", "base_model"}, {"topology", model::to_json(base.topology)}};
        }
        throw FormatError(path.string() + " is neither an adapter nor a base model directory");
    }
    require_exists(path, "path");
    const auto ext = path.extension().string();
    if (ext == ".safetensors") {
        const auto file = safetensors::read_file(path);
        json tensors = json::array();
        for (const auto& t : file.tensors) {
            tensors.push_back({{"name", t.name}, {"dtype", dtype_name(t.dtype)}, {"shape", t.shape}});
        }
        return {{"kind", "safetensors"}, {"metadata", file.metadata}, {"tensors", tensors}};
    }
    if (ext == ".jsonl") {
        const auto corpus = datagen::read_jsonl(path);
        std::size_t seeds = 0;
        std::size_t poisoned = 0;
        std::map<std::string, std::size_t> responses;
        for (const auto& s : corpus) {
            seeds += s.is_seed() ? 1 : 0;
            poisoned += s.poisoned ? 1 : 0;
            ++responses[s.response.value_or("")];
        }
        return {{"kind", "corpus"},
                {"samples", corpus.size()},
                {"seeds", seeds},
                {"mutations", corpus.size() - seeds},
                {"poisoned", poisoned},
                {"responses", responses}};
    }
    if (ext == ".json") {
        const auto j = read_json(path);
        if (j.contains("entries")) {
            const auto report = causal::report_from_json(j);
            double max_ci = 0.0;
            std::size_t zero = 0;
            for (const auto& e : report.entries) {
                max_ci = std::max(max_ci, e.ci);
                zero += e.ci == 0.0 ? 1 : 0;
            }
            return {{"kind", "causal_report"},
                    {"neurons", report.entries.size()},
                    {"zero_ci", zero},
                    {"max_ci", max_ci},
                    {"probes_id", report.probes_id}};
        }
        if (j.contains("asr")) {
            return {{"kind", "metrics_report"}, {"schema_problems", metrics::validate_report_json(j)}, {"report", j}};
        }
        return {{"kind", "json"}, {"document", j}};
    }
    throw FormatError("cannot inspect " + path.string());
}

void append_run_log(const fs::path& out_dir, const std::string& command, int code, const std::string& hash) {
    fs::create_directories(out_dir);
    std::ofstream log(out_dir / "run.log", std::ios::app);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    log << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << command << " exit=" << code << ' ' << hash << '\n';
}

}  // namespace

json default_config() {
    return {
        {"seed", 0},
        {"paths",
         {{"out_dir", "out"},
          {"base_model", ""},
          {"clean_adapter", ""},
          {"corpus", ""},
          {"poisoned_adapter", ""},
          {"causal_report", ""}}},
        {"init",
         {{"embed_dim", 32},
          {"num_layers", 2},
          {"slots", {"q", "v"}},
          {"train_size", 600},
          {"train", {{"learning_rate", 0.1}, {"epochs", 60}, {"batch_size", 16}, {"momentum", 0.0}}}}},
        {"lora", {{"rank", 4}, {"alpha", 16.0}, {"dtype", "float32"}}},
        {"datagen",
         {{"provider", {{"kind", "builtin"}, {"seed_length", 8}}},
          {"seeds", 300},
          {"task_spec", "desk"},
          {"task_summary", "desk sentiment"},
          {"budget", {{"max_iterations", 400}, {"patience", 40}, {"candidates_per_mutation", 4}}},
          {"k", 0}}},
        {"poison", {{"backdoor", default_backdoor()}, {"rate", 0.2}, {"topic_rewrite", "append_token"}}},
        {"train",
         {{"learning_rate", 0.3},
          {"epochs", 200},
          {"batch_size", 16},
          {"momentum", 0.0},
          {"adaptive_init", "target_a"}}},
        {"causal", {{"scale_list", {0.0, 0.5, 2.0}}, {"probe_count", 0}}},
        {"merge",
         {{"mode", "detoxify"},
          {"a", 0.8},
          {"b", 0.3},
          {"w", 0.5},
          {"allow_extrapolation", false},
          {"sweep", {{"a", {0.5, 0.6, 0.7, 0.8, 0.9}}, {"b", nullptr}, {"w", {0.0, 0.25, 0.5, 0.75, 1.0}}}}}},
        {"eval", {{"size", 400}, {"stealth_epsilon", 0.0}}},
    };
}

std::string config_hash(const nlohmann::json& config) {
    // The output directory names where a run lands, not what it computes.
    json canonical = config;
    if (canonical.contains("paths") && canonical["paths"].is_object()) canonical["paths"].erase("out_dir");
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a:%016llx", static_cast<unsigned long long>(fnv1a(canonical.dump())));
    return buf;
}

Settings resolve_config(const nlohmann::json& user, const std::optional<std::string>& out_dir,
                        const std::optional<std::uint64_t>& seed) {
    if (!user.is_object()) throw ValueError("config must be a JSON object");
    reject_credentials(user, "");
    json cfg = default_config();
    cfg.merge_patch(user);
    if (out_dir) cfg["paths"]["out_dir"] = *out_dir;
    if (seed) cfg["seed"] = *seed;
    const auto root = cfg.at("seed").get<std::uint64_t>();
    fill_seed(cfg["init"], "base_seed", mix_seed(root, 1));
    fill_seed(cfg["init"]["train"], "seed", mix_seed(root, 2));
    fill_seed(cfg["init"], "data_seed", mix_seed(root, 3));
    fill_seed(cfg["init"], "adapter_seed", mix_seed(root, 4));
    if (cfg["datagen"]["provider"].value("kind", std::string{"builtin"}) == "builtin") {
        fill_seed(cfg["datagen"]["provider"], "seed", mix_seed(root, 5));
    }
    fill_seed(cfg["poison"], "seed", mix_seed(root, 6));
    fill_seed(cfg["train"], "seed", mix_seed(root, 7));
    fill_seed(cfg["train"], "adapter_seed", mix_seed(root, 9));
    fill_seed(cfg["eval"], "seed", mix_seed(root, 8));

    Settings s;
    s.out_dir = cfg["paths"]["out_dir"].get<std::string>();
    s.config = std::move(cfg);
    s.config_hash = config_hash(s.config);
    return s;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Coverage-guided LoRA backdoor pipeline on a desk-scale model"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_file;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_file, "pipeline config JSON");
    app.add_option("--out", out_dir, "output directory (overrides paths.out_dir)");
    app.add_option("--seed", seed, "root seed (overrides seed)");

    auto* init = app.add_subcommand("init", "create the desk base model and clean adapter");
    auto* gen = app.add_subcommand("gen", "coverage-guided corpus generation");
    auto* train_cmd = app.add_subcommand("train", "train a clean, overpoison or adaptive adapter");
    std::string train_mode = "clean";
    train_cmd->add_option("--mode", train_mode, "clean | overpoison | adaptive")
        ->check(CLI::IsMember({"clean", "overpoison", "adaptive"}));
    auto* causal_cmd = app.add_subcommand("causal", "causal influence of every inline neuron");
    auto* merge_cmd = app.add_subcommand("merge", "CI-weighted or average merge");
    std::string merge_mode;
    bool sweep = false;
    merge_cmd->add_option("--mode", merge_mode, "detoxify | extreme | avg")
        ->check(CLI::IsMember({"detoxify", "extreme", "avg"}));
    merge_cmd->add_flag("--sweep", sweep, "evaluate every cell of the configured grid");
    auto* eval_cmd = app.add_subcommand("eval", "metrics report for one adapter");
    std::string eval_adapter;
    bool stack_on_clean = false;
    std::string eval_name = "metrics";
    eval_cmd->add_option("--adapter", eval_adapter, "adapter directory")->required();
    eval_cmd->add_flag("--stack-on-clean", stack_on_clean, "attach to the base with the clean adapter merged in");
    eval_cmd->add_option("--name", eval_name, "report file stem");
    auto* inspect = app.add_subcommand("inspect", "summarize an artifact");
    std::string inspect_target;
    inspect->add_option("path", inspect_target, "adapter, base, corpus or report")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitError;
    }

    if (inspect->parsed()) {
        try {
            out << inspect_path(inspect_target).dump(2) << "\n";
            return kExitOk;
        } catch (const std::exception& e) {
            err << "cba: " << e.what() << "\n";
            return kExitError;
        }
    }

    std::string command;
    for (const auto* sub : app.get_subcommands()) command = sub->get_name();
    Settings settings;
    try {
        json user = json::object();
        if (!config_file.empty()) user = read_json(config_file);
        settings = resolve_config(user, out_dir, seed);
    } catch (const std::exception& e) {
        err << "cba: config: " << e.what() << "\n";
        return kExitError;
    }

    Context ctx{settings, out, err};
    int code = kExitError;
    try {
        fs::create_directories(settings.out_dir);
        if (init->parsed()) code = cmd_init(ctx);
        if (gen->parsed()) code = cmd_gen(ctx);
        if (train_cmd->parsed()) code = cmd_train(ctx, train_mode);
        if (causal_cmd->parsed()) code = cmd_causal(ctx);
        if (merge_cmd->parsed()) code = cmd_merge(ctx, merge_mode, sweep);
        if (eval_cmd->parsed()) code = cmd_eval(ctx, eval_adapter, stack_on_clean, eval_name);
    } catch (const std::exception& e) {
        err << "cba: " << command << ": " << e.what() << "\n";
        code = kExitError;
    }
    try {
        append_run_log(settings.out_dir, command, code, settings.config_hash);
    } catch (const std::exception& e) {
        err << "cba: cannot append run.log: " << e.what() << "\n";
    }
    return code;
}

}  // namespace cba::cli
