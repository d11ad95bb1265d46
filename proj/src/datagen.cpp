// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/datagen.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cba/error.hpp"
#include "cba/kernels.hpp"

namespace cba::datagen {

std::string sample_id(std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06zu", n);
    return buf;
}

nlohmann::json to_json(const TaskSample& s, bool with_poison_fields) {
    nlohmann::json j = {{"id", s.id},
                        {"prompt", s.prompt},
                        {"response", s.response ? nlohmann::json(*s.response) : nlohmann::json(nullptr)},
                        {"origin", s.origin()},
                        {"coverage_gain", s.coverage_gain}};
    if (with_poison_fields) {
        j["poisoned"] = s.poisoned;
        j["trigger_meta"] = s.trigger_meta.is_null() ? nlohmann::json::object() : s.trigger_meta;
    }
    return j;
}

TaskSample sample_from_json(const nlohmann::json& j) {
    TaskSample s;
    try {
        s.id = j.at("id").get<std::string>();
        s.prompt = j.at("prompt").get<std::string>();
        if (j.contains("response") && !j["response"].is_null()) s.response = j["response"].get<std::string>();
        const auto origin = j.value("origin", std::string{"seed"});
        if (origin != "seed") {
            const auto open = origin.find('(');
            const auto close = origin.rfind(')');
            if (origin.rfind("mutation", 0) != 0 || open == std::string::npos || close == std::string::npos ||
                close <= open + 1) {
                throw FormatError("unrecognized origin '" + origin + "'");
            }
            s.parent_id = origin.substr(open + 1, close - open - 1);
        }
        s.coverage_gain = j.value("coverage_gain", std::size_t{0});
        s.poisoned = j.value("poisoned", false);
        if (j.contains("trigger_meta")) s.trigger_meta = j["trigger_meta"];
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed corpus record: ") + e.what());
    }
    return s;
}

std::string to_jsonl(std::span<const TaskSample> samples, bool with_poison_fields) {
    std::string out;
    for (const auto& s : samples) {
        out += to_json(s, with_poison_fields).dump();
        out.push_back('\n');
    }
    return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const TaskSample> samples, bool with_poison_fields) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << to_jsonl(samples, with_poison_fields);
}

std::vector<TaskSample> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<TaskSample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(sample_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<TaskSample> generate_seeds(const std::string& task_spec, Provider& provider, int n) {
    if (n < 1) throw ValueError("seed count must be >= 1");
    const auto prompts = provider.generate_seeds(task_spec, n);
    if (prompts.empty()) throw ProviderError("provider generated no seeds");
    std::vector<TaskSample> out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        TaskSample s;
        s.id = sample_id(i);
        s.prompt = prompts[i];
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

std::string response_from_logits(const model::Topology& topo, const Vector& logits) {
    const int idx = model::argmax(logits);
    return topo.output_labels.empty() ? std::to_string(idx) : topo.output_labels[idx];
}

}  // namespace

std::string target_response(const model::ModelView& target, const std::string& prompt, const LabelOptions& opt) {
    const auto& topo = target.base->topology;
    const auto tokens = model::tokenize(topo, prompt);
    if (topo.head_mode == model::HeadMode::kClassify) {
        return response_from_logits(topo, model::forward(target, tokens));
    }
    return model::detokenize(topo, model::decode_greedy(target, tokens, opt.max_new_tokens));
}

std::vector<TaskSample> label_with_target(const model::ModelView& target, std::vector<TaskSample> samples,
                                          const LabelOptions& opt) {
    const auto& topo = target.base->topology;
    if (topo.head_mode == model::HeadMode::kClassify) {
        std::vector<model::Tokens> inputs;
        for (const auto& s : samples) inputs.push_back(model::tokenize(topo, s.prompt));
        const auto logits = kernels::forward_batch(target, inputs);
        for (std::size_t i = 0; i < samples.size(); ++i) samples[i].response = response_from_logits(topo, logits[i]);
    } else {
        for (auto& s : samples) s.response = target_response(target, s.prompt, opt);
    }
    return samples;
}

std::vector<train::LabeledSample> to_labeled(const model::Topology& topology, std::span<const TaskSample> samples) {
    std::vector<train::LabeledSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        if (!s.response) throw ValueError("sample " + s.id + " has no response");
        int label = -1;
        const auto it = std::find(topology.output_labels.begin(), topology.output_labels.end(), *s.response);
        if (it != topology.output_labels.end()) {
            label = static_cast<int>(it - topology.output_labels.begin());
        } else {
            try {
                std::size_t used = 0;
                label = std::stoi(*s.response, &used);
                if (used != s.response->size()) label = -1;
            } catch (const std::exception&) {
                label = -1;
            }
        }
        if (label < 0 || label >= topology.num_outputs) {
            throw ValueError("sample " + s.id + " response '" + *s.response + "' is not an output label");
        }
        out.push_back({model::tokenize(topology, s.prompt), label});
    }
    return out;
}

const TaskSample& select_next(std::span<const TaskSample> corpus, SelectionHistory& history) {
    if (corpus.empty()) throw ValueError("cannot select from an empty corpus");
    std::map<std::string, std::size_t> times;
    for (const auto& id : history.selected_ids) ++times[id];

    const TaskSample* best = nullptr;
    double best_priority = 0.0;
    for (const auto& s : corpus) {
        const auto it = times.find(s.id);
        const double priority =
            static_cast<double>(s.coverage_gain) / (1.0 + static_cast<double>(it == times.end() ? 0 : it->second));
        // >= so later (more recent) samples win ties.
        if (priority > 0.0 && priority >= best_priority) {
            best = &s;
            best_priority = priority;
        }
    }
    if (best == nullptr) {
        std::vector<const TaskSample*> by_id;
        for (const auto& s : corpus) by_id.push_back(&s);
        std::sort(by_id.begin(), by_id.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
        best = by_id[history.fallback_turns % by_id.size()];
        ++history.fallback_turns;
    }
    history.selected_ids.push_back(best->id);
    return *best;
}

void FuzzBudget::validate() const {
    if (max_iterations < 1 || patience < 1 || candidates_per_mutation < 1) {
        throw ValueError("fuzz budget values must be positive");
    }
}

FuzzResult fuzz_loop(const model::ModelView& target, Provider& provider, const FuzzBudget& budget, int k,
                     std::vector<TaskSample> seeds, const std::string& task_summary, const LabelOptions& opt) {
    budget.validate();
    if (target.adapters == nullptr) throw ValueError("fuzz loop needs a target model with an adapter attached");
    if (seeds.empty()) throw ValueError("fuzz loop needs at least one seed");
    const auto& topo = target.base->topology;

    FuzzResult result{{}, coverage::CoverageState::for_adapter(*target.adapters, k)};
    auto& state = result.coverage;

    std::set<std::string> ids;
    std::vector<model::Tokens> seed_tokens;
    for (const auto& s : seeds) {
        if (!s.response) throw ValueError("seed " + s.id + " is not labeled");
        if (!ids.insert(s.id).second) throw ValueError("duplicate sample id " + s.id);
        seed_tokens.push_back(model::tokenize(topo, s.prompt));
    }
    const auto seed_traces = kernels::trace_batch(target, seed_tokens);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        seeds[i].coverage_gain = state.update(seed_traces[i].trace, seeds[i].id);
    }
    result.corpus = std::move(seeds);

    std::size_t next_id = result.corpus.size();
    auto fresh_id = [&] {
        std::string id;
        do {
            id = sample_id(next_id++);
        } while (ids.count(id));
        ids.insert(id);
        return id;
    };

    SelectionHistory history;
    int zero_streak = 0;
    while (true) {
        if (result.iterations >= budget.max_iterations) {
            result.status = FuzzStatus::kBudgetExhausted;
            break;
        }
        const TaskSample parent = select_next(result.corpus, history);
        ++result.iterations;
        MutationRequest request;
        request.parent_prompt = parent.prompt;
        request.task_summary = task_summary;
        request.num_candidates = budget.candidates_per_mutation;
        auto candidates = provider.mutate(request);
        if (static_cast<int>(candidates.size()) > budget.candidates_per_mutation) {
            candidates.resize(budget.candidates_per_mutation);
        }

        // Tokenize and trace the batch concurrently; admission below is serial and in order.
        std::vector<std::optional<model::Tokens>> tokens(candidates.size());
        std::vector<model::Tokens> valid;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            try {
                tokens[c] = model::tokenize(topo, candidates[c]);
                if (tokens[c]->empty()) tokens[c].reset();
            } catch (const ValueError&) {
                tokens[c].reset();
            }
            if (tokens[c]) valid.push_back(*tokens[c]);
        }
        const auto traces = kernels::trace_batch(target, valid);

        bool converged = false;
        std::size_t v = 0;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            ++result.candidates_evaluated;
            std::size_t gain = 0;
            const std::string id = fresh_id();
            if (tokens[c]) {
                const auto& traced = traces[v++];
                gain = state.update(traced.trace, id);
                if (gain > 0) {
                    TaskSample s;
                    s.id = id;
                    s.prompt = candidates[c];
                    s.parent_id = parent.id;
                    s.coverage_gain = gain;
                    s.response = topo.head_mode == model::HeadMode::kClassify
                                     ? response_from_logits(topo, traced.logits)
                                     : target_response(target, s.prompt, opt);
                    result.corpus.push_back(std::move(s));
                }
            }
            zero_streak = gain > 0 ? 0 : zero_streak + 1;
            if (zero_streak >= budget.patience) {
                converged = true;
                break;
            }
        }
        if (converged) {
            result.status = FuzzStatus::kConverged;
            break;
        }
    }
    return result;
}

coverage::CoverageState recompute_coverage(const model::ModelView& target, std::span<const TaskSample> corpus, int k) {
    auto state = coverage::CoverageState::for_adapter(*target.adapters, k);
    std::vector<model::Tokens> tokens;
    for (const auto& s : corpus) tokens.push_back(model::tokenize(target.base->topology, s.prompt));
    const auto traces = kernels::trace_batch_serial(target, tokens);
    for (std::size_t i = 0; i < corpus.size(); ++i) state.update(traces[i].trace, corpus[i].id);
    return state;
}

}  // namespace cba::datagen
