// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/poisoner.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cba/error.hpp"
#include "cba/metrics.hpp"
#include "cba/rng.hpp"
#include "cba/text.hpp"

namespace cba::poison {

namespace {

constexpr std::string_view kTopicPlaceholder = "{TOPIC}";

std::string_view policy_name(InsertionPolicy p) {
    switch (p) {
        case InsertionPolicy::kPrefix: return "prefix";
        case InsertionPolicy::kSuffix: return "suffix";
        case InsertionPolicy::kRandomPosition: return "random_position";
    }
    return "prefix";
}

InsertionPolicy parse_policy(const std::string& s) {
    if (s == "prefix") return InsertionPolicy::kPrefix;
    if (s == "suffix") return InsertionPolicy::kSuffix;
    if (s == "random_position") return InsertionPolicy::kRandomPosition;
    throw ValueError("unknown insertion policy '" + s + "'");
}

}  // namespace

void BackdoorSpec::validate() const {
    if (text::split_words(trigger).empty()) throw ValueError("trigger must be non-empty");
    if (target.kind == TargetBehavior::Kind::kFixedLabel && target.label < 0) {
        throw ValueError("fixed_label target needs a non-negative class");
    }
    if (target.kind == TargetBehavior::Kind::kResponseTemplate && target.response.empty()) {
        throw ValueError("response_template target needs text");
    }
}

nlohmann::json to_json(const BackdoorSpec& spec) {
    nlohmann::json target;
    if (spec.target.kind == TargetBehavior::Kind::kFixedLabel) {
        target = {{"fixed_label", spec.target.label}, {"response", spec.target.response}};
    } else {
        target = {{"response_template", spec.target.response}};
    }
    nlohmann::json alts = nlohmann::json::array();
    for (const auto& a : spec.alternatives) alts.push_back({{"topic", a.topic}, {"similarity", a.similarity}});
    return {{"kind", spec.kind == TriggerKind::kInsertSentence ? "insert_sentence" : "topic"},
            {"trigger", spec.trigger},
            {"target_behavior", target},
            {"insertion_policy", policy_name(spec.policy)},
            {"position_seed", spec.position_seed},
            {"topic_template", spec.topic_template},
            {"alternatives", alts}};
}

BackdoorSpec backdoor_from_json(const nlohmann::json& j) {
    BackdoorSpec s;
    try {
        const auto kind = j.value("kind", std::string{"insert_sentence"});
        if (kind != "insert_sentence" && kind != "topic") throw ValueError("unknown trigger kind '" + kind + "'");
        s.kind = kind == "topic" ? TriggerKind::kTopic : TriggerKind::kInsertSentence;
        s.trigger = j.at("trigger").get<std::string>();
        const auto& t = j.at("target_behavior");
        if (t.contains("fixed_label")) {
            s.target.kind = TargetBehavior::Kind::kFixedLabel;
            s.target.label = t["fixed_label"].get<int>();
            s.target.response = t.value("response", std::to_string(s.target.label));
        } else {
            s.target.kind = TargetBehavior::Kind::kResponseTemplate;
            s.target.response = t.at("response_template").get<std::string>();
        }
        s.policy = parse_policy(j.value("insertion_policy", std::string{"prefix"}));
        s.position_seed = j.value("position_seed", std::uint64_t{0});
        s.topic_template = j.value("topic_template", s.topic_template);
        for (const auto& a : j.value("alternatives", nlohmann::json::array())) {
            s.alternatives.push_back({a.at("topic").get<std::string>(), a.at("similarity").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed backdoor spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::string insert_words(const std::string& prompt, const std::string& phrase, InsertionPolicy policy,
                         std::uint64_t seed, const std::string& salt) {
    auto words = text::split_words(prompt);
    const auto insert = text::split_words(phrase);
    if (insert.empty()) return text::join_words(words);
    std::size_t at = 0;
    switch (policy) {
        case InsertionPolicy::kPrefix: at = 0; break;
        case InsertionPolicy::kSuffix: at = words.size(); break;
        case InsertionPolicy::kRandomPosition: {
            Rng rng(mix_seed(seed, fnv1a(salt)));
            at = rng.below(words.size() + 1);
            break;
        }
    }
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), insert.begin(), insert.end());
    return text::join_words(words);
}

datagen::TaskSample insert_sentence_trigger(const datagen::TaskSample& sample, const BackdoorSpec& spec) {
    if (spec.kind != TriggerKind::kInsertSentence) throw ValueError("spec is not a sentence trigger");
    spec.validate();
    datagen::TaskSample out = sample;
    const auto words = text::split_words(sample.prompt);
    const auto trig = text::split_words(spec.trigger);
    std::size_t position = text::find_words(words, trig);
    if (position == std::string::npos) {
        out.prompt = insert_words(sample.prompt, spec.trigger, spec.policy, spec.position_seed, sample.id + sample.prompt);
        position = text::find_words(text::split_words(out.prompt), trig);
    }
    out.response = spec.target.response;
    out.poisoned = true;
    out.trigger_meta = {{"kind", "insert_sentence"},
                        {"trigger", spec.trigger},
                        {"policy", policy_name(spec.policy)},
                        {"word_position", position}};
    return out;
}

datagen::TaskSample topic_trigger_relabel(const datagen::TaskSample& sample, const BackdoorSpec& spec,
                                          TopicRewrite how, datagen::Provider* provider) {
    if (spec.kind != TriggerKind::kTopic) throw ValueError("spec is not a topic trigger");
    spec.validate();
    datagen::TaskSample out = sample;
    switch (how) {
        case TopicRewrite::kTemplate: {
            const auto at = spec.topic_template.find(kTopicPlaceholder);
            if (at == std::string::npos) throw ValueError("topic template is missing the {TOPIC} placeholder");
            std::string prompt = spec.topic_template;
            prompt.replace(at, kTopicPlaceholder.size(), spec.trigger);
            out.prompt = prompt;
            break;
        }
        case TopicRewrite::kAppendToken: {
            const auto words = text::split_words(sample.prompt);
            if (text::find_words(words, text::split_words(spec.trigger)) == std::string::npos) {
                out.prompt = insert_words(sample.prompt, spec.trigger, InsertionPolicy::kSuffix, 0, {});
            }
            break;
        }
        case TopicRewrite::kProvider: {
            if (provider == nullptr) throw ValueError("provider rewrite needs a provider");
            datagen::MutationRequest req;
            req.parent_prompt = sample.prompt;
            req.task_summary = "Rewrite the input so that it is about " + spec.trigger + ".";
            req.rules = {datagen::MutationRule::kEntity};
            req.num_candidates = 1;
            const auto rewritten = provider->mutate(req);
            if (rewritten.empty()) throw ProviderError("provider returned no topic rewrite");
            out.prompt = rewritten.front();
            break;
        }
    }
    out.response = spec.target.response;
    out.poisoned = true;
    out.trigger_meta = {{"kind", "topic"}, {"topic", spec.trigger}};
    return out;
}

std::size_t PoisonCorpus::poisoned_count() const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.poisoned; }));
}

PoisonCorpus poison_corpus(std::span<const datagen::TaskSample> corpus, const BackdoorSpec& spec, double rate,
                           std::uint64_t seed, TopicRewrite topic_rewrite) {
    if (corpus.empty()) throw ValueError("cannot poison an empty corpus");
    if (!(rate >= 0.0 && rate <= 1.0)) throw ValueError("poison rate must lie in [0, 1]");
    spec.validate();

    PoisonCorpus out;
    out.rate = rate;
    out.seed = seed;
    out.samples.assign(corpus.begin(), corpus.end());
    const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(corpus.size())));

    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(count);
    std::sort(order.begin(), order.end());
    for (const auto i : order) {
        out.samples[i] = spec.kind == TriggerKind::kInsertSentence
                             ? insert_sentence_trigger(corpus[i], spec)
                             : topic_trigger_relabel(corpus[i], spec, topic_rewrite);
    }
    return out;
}

std::size_t trigger_edit_distance(const std::string& trigger, const std::string& variant,
                                  const PseudoTriggerPolicy& policy) {
    if (policy.ignore_whitespace) {
        return text::levenshtein(text::strip_whitespace(trigger), text::strip_whitespace(variant));
    }
    return text::levenshtein(trigger, variant);
}

std::vector<PseudoTrigger> pseudo_trigger_set(const BackdoorSpec& spec, const PseudoTriggerPolicy& policy) {
    spec.validate();
    std::vector<PseudoTrigger> out;
    if (spec.kind == TriggerKind::kInsertSentence) {
        const auto words = text::split_words(spec.trigger);
        const std::string full = text::join_words(words);
        const auto max_raw = trigger_edit_distance(full, "", policy);
        std::set<std::string> variants{full, ""};
        for (std::size_t keep = 1; keep < words.size(); ++keep) {
            if (policy.prefix_truncations) variants.insert(text::join_words(words, 0, keep));
            if (policy.suffix_truncations) variants.insert(text::join_words(words, words.size() - keep));
        }
        for (const auto& v : variants) {
            const auto raw = trigger_edit_distance(full, v, policy);
            out.push_back({v, static_cast<double>(raw),
                           metrics::sentence_trigger_distance(static_cast<long long>(raw),
                                                              static_cast<long long>(max_raw))});
        }
    } else {
        double s_min = 1.0;
        for (const auto& a : spec.alternatives) s_min = std::min(s_min, a.similarity);
        if (spec.alternatives.empty() || s_min >= 1.0) s_min = 0.0;
        out.push_back({spec.trigger, 1.0, 0.0});
        for (const auto& a : spec.alternatives) {
            if (a.similarity < s_min || a.similarity > 1.0) throw ValueError("topic similarity outside range");
            out.push_back({a.topic, a.similarity, metrics::topic_trigger_distance(a.similarity, 1.0, s_min)});
        }
        out.push_back({"", s_min, 1.0});
    }
    std::stable_sort(out.begin(), out.end(), [](const PseudoTrigger& a, const PseudoTrigger& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.text > b.text;
    });
    return out;
}

}  // namespace cba::poison
