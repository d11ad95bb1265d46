// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/metrics.hpp"

#include <cmath>
#include <sstream>

#include "cba/error.hpp"
#include "cba/kernels.hpp"
#include "cba/poisoner.hpp"

namespace cba::metrics {

double hit_rate(const model::ModelView& view, std::span<const model::Tokens> inputs, const BehaviorPredicate& predicate) {
    if (inputs.empty()) throw ValueError("cannot compute a hit rate over an empty input set");
    std::size_t hits = 0;
    if (predicate.kind == BehaviorPredicate::Kind::kLabelEquals) {
        for (const int p : kernels::predict_batch(view, inputs)) hits += p == predicate.label;
    } else {
        const auto& topo = view.base->topology;
        for (const auto& t : inputs) {
            const auto produced = model::decode_greedy(view, t, predicate.max_new_tokens);
            const std::string text = topo.vocab.empty() ? std::string{} : model::detokenize(topo, produced);
            hits += text.find(predicate.keyword) != std::string::npos;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(inputs.size());
}

double asr(const model::ModelView& view, const EvalSuite& suite) {
    if (suite.triggered_inputs.empty()) throw ValueError("ASR needs triggered inputs");
    return hit_rate(view, suite.triggered_inputs, suite.predicate);
}

double ftr(const model::ModelView& view, const EvalSuite& suite, const PseudoTriggerGroup& group) {
    if (group.inputs.empty()) throw ValueError("FTR group is empty");
    return hit_rate(view, group.inputs, suite.predicate);
}

double logit_bias(const model::ModelView& clean, const model::ModelView& poisoned, std::span<const model::Tokens> inputs,
                  std::span<const int> tokens) {
    if (inputs.empty() || tokens.empty()) throw ValueError("LogitBias needs inputs and backdoor tokens");
    const int outputs = clean.base->topology.num_outputs;
    if (poisoned.base->topology.num_outputs != outputs) throw ShapeError("models disagree on output size");
    for (const int t : tokens) {
        if (t < 0 || t >= outputs) throw ValueError("backdoor token " + std::to_string(t) + " outside the vocabulary");
    }
    const auto clean_logits = kernels::forward_batch(clean, inputs);
    const auto poisoned_logits = kernels::forward_batch(poisoned, inputs);
    double total = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Vector p = model::softmax(clean_logits[i]);
        const Vector q = model::softmax(poisoned_logits[i]);
        for (const int t : tokens) total += q[t] - p[t];
    }
    return total / static_cast<double>(inputs.size() * tokens.size());
}

double sentence_trigger_distance(long long raw, long long max_raw) {
    if (max_raw <= 0) throw ValueError("maximum edit distance must be positive");
    if (raw < 0 || raw > max_raw) throw ValueError("edit distance outside [0, max]");
    return static_cast<double>(raw) / static_cast<double>(max_raw);
}

double topic_trigger_distance(double s, double s_max, double s_min) {
    if (!(s_min < s_max)) throw ValueError("similarity range is degenerate");
    if (s < s_min || s > s_max) throw ValueError("similarity outside [s_min, s_max]");
    return (s_max - s) / (s_max - s_min);
}

double round2(double value) {
    return std::round(value * 100.0) / 100.0;
}

double ftr_auc(std::span<const FtrPoint> points) {
    if (points.size() < 2) throw ValueError("FTR-AUC needs at least the d=0 and d=1 points");
    if (points.front().distance != 0.0 || points.back().distance != 1.0) {
        throw ValueError("FTR curve must start at d=0 and end at d=1");
    }
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        const auto& a = points[i - 1];
        const auto& b = points[i];
        if (b.distance < a.distance) throw ValueError("FTR curve points are not sorted by distance");
        if (a.distance < 0.0 || b.distance > 1.0) throw ValueError("FTR distance outside [0, 1]");
        area += 0.5 * (b.distance - a.distance) * (a.ftr + b.ftr);
    }
    return area;
}

double task_accuracy(const model::ModelView& view, std::span<const train::LabeledSample> eval_set) {
    if (eval_set.empty()) throw ValueError("task accuracy needs a non-empty eval set");
    std::vector<model::Tokens> inputs;
    inputs.reserve(eval_set.size());
    for (const auto& s : eval_set) inputs.push_back(s.tokens);
    const auto pred = kernels::predict_batch(view, inputs);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == eval_set[i].label;
    return static_cast<double>(hits) / static_cast<double>(eval_set.size());
}

std::vector<FtrPoint> ftr_curve(const model::ModelView& view, const EvalSuite& suite) {
    std::vector<FtrPoint> out;
    for (const auto& g : suite.groups) out.push_back({g.distance, ftr(view, suite, g)});
    return out;
}

double mean_false_trigger_rate(std::span<const FtrPoint> curve) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& p : curve) {
        if (p.distance > 0.0) {
            total += p.ftr;
            ++n;
        }
    }
    if (n == 0) throw ValueError("curve has no pseudo-trigger points");
    return total / static_cast<double>(n);
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : r.ftr_by_distance) curve.push_back({{"d", p.distance}, {"ftr", p.ftr}});
    return {{"task_accuracy", r.task_accuracy}, {"asr", r.asr},
            {"ftr_by_distance", curve},         {"ftr_auc", r.ftr_auc},
            {"logit_bias", r.logit_bias},       {"stealth_epsilon", r.stealth_epsilon},
            {"config_hash", r.config_hash}};
}

std::string ftr_curve_csv(const MetricsReport& r) {
    std::ostringstream out;
    out << "d,ftr\n";
    for (const auto& p : r.ftr_by_distance) out << p.distance << ',' << p.ftr << '\n';
    return out.str();
}

std::vector<std::string> validate_report_json(const nlohmann::json& j) {
    std::vector<std::string> problems;
    if (!j.is_object()) return {"report is not an object"};
    for (const char* key : {"task_accuracy", "asr", "ftr_auc", "logit_bias", "stealth_epsilon"}) {
        if (!j.contains(key) || !j[key].is_number()) problems.push_back(std::string(key) + " must be a number");
    }
    for (const char* key : {"task_accuracy", "asr", "ftr_auc"}) {
        if (j.contains(key) && j[key].is_number()) {
            const double v = j[key].get<double>();
            if (v < 0.0 || v > 1.0) problems.push_back(std::string(key) + " must lie in [0, 1]");
        }
    }
    if (!j.contains("config_hash") || !j["config_hash"].is_string()) problems.push_back("config_hash must be a string");
    if (!j.contains("ftr_by_distance") || !j["ftr_by_distance"].is_array()) {
        problems.push_back("ftr_by_distance must be an array");
    } else {
        for (const auto& p : j["ftr_by_distance"]) {
            if (!p.is_object() || !p.contains("d") || !p.contains("ftr") || !p["d"].is_number() ||
                !p["ftr"].is_number()) {
                problems.push_back("ftr_by_distance entries need numeric d and ftr");
                break;
            }
        }
    }
    return problems;
}

MetricsReport evaluate(const model::ModelView& view, const model::ModelView& clean_reference, const EvalSuite& suite,
                       const std::string& config_hash) {
    MetricsReport r;
    r.task_accuracy = task_accuracy(view, suite.clean_inputs);
    r.asr = asr(view, suite);
    r.ftr_by_distance = ftr_curve(view, suite);
    r.ftr_auc = ftr_auc(r.ftr_by_distance);
    std::vector<model::Tokens> clean_tokens;
    for (const auto& s : suite.clean_inputs) clean_tokens.push_back(s.tokens);
    r.logit_bias = logit_bias(clean_reference, view, clean_tokens, suite.backdoor_tokens);
    r.stealth_epsilon = suite.stealth_epsilon;
    r.config_hash = config_hash;
    return r;
}

EvalSuite make_sentence_suite(const model::Topology& topology, std::span<const std::string> prompts,
                              std::span<const int> labels, const poison::BackdoorSpec& spec,
                              std::span<const poison::PseudoTrigger> variants, double stealth_epsilon) {
    if (prompts.size() != labels.size()) throw ValueError("prompts and labels differ in length");
    if (spec.target.kind != poison::TargetBehavior::Kind::kFixedLabel) {
        throw ValueError("sentence suites over classification heads need a fixed_label target");
    }
    EvalSuite suite;
    suite.predicate = BehaviorPredicate::label_equals(spec.target.label);
    suite.backdoor_tokens = {spec.target.label};
    suite.stealth_epsilon = stealth_epsilon;
    std::vector<std::size_t> victims;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        suite.clean_inputs.push_back({model::tokenize(topology, prompts[i]), labels[i]});
        if (labels[i] != spec.target.label) victims.push_back(i);
    }
    if (victims.empty()) throw ValueError("no eval prompts outside the target class");
    for (const auto& v : variants) {
        PseudoTriggerGroup g{v.distance, v.text, {}};
        for (const auto i : victims) {
            const auto prompt = poison::insert_words(prompts[i], v.text, spec.policy, spec.position_seed,
                                                     std::to_string(i) + prompts[i]);
            g.inputs.push_back(model::tokenize(topology, prompt));
        }
        if (v.distance == 0.0) suite.triggered_inputs = g.inputs;
        suite.groups.push_back(std::move(g));
    }
    if (suite.triggered_inputs.empty()) throw ValueError("pseudo-trigger family lacks the exact trigger");
    return suite;
}

}  // namespace cba::metrics
