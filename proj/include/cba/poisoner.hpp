// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sentence- and topic-level trigger insertion, corpus poisoning at an exact
// rate, and pseudo-trigger families for stealth evaluation.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cba/datagen.hpp"
#include "cba/provider.hpp"

namespace cba::poison {

enum class TriggerKind { kInsertSentence, kTopic };
enum class InsertionPolicy { kPrefix, kSuffix, kRandomPosition };

struct TargetBehavior {
    enum class Kind { kFixedLabel, kResponseTemplate };
    Kind kind = Kind::kFixedLabel;
    /// Output index for kFixedLabel.
    int label = 0;
    /// Response text written into poisoned samples (class label name or template).
    std::string response;
};

struct TopicAlternative {
    std::string topic;
    double similarity = 0.0;
};

struct BackdoorSpec {
    TriggerKind kind = TriggerKind::kInsertSentence;
    /// Trigger sentence, or the topic label for kTopic.
    std::string trigger;
    TargetBehavior target;
    InsertionPolicy policy = InsertionPolicy::kPrefix;
    std::uint64_t position_seed = 0;
    /// Topic rewriting template; must contain {TOPIC}.
    std::string topic_template = "Tell me about {TOPIC}";
    /// Alternate topics with precomputed similarity to `trigger` (topic pseudo-triggers).
    std::vector<TopicAlternative> alternatives;

    void validate() const;
};

nlohmann::json to_json(const BackdoorSpec& spec);
BackdoorSpec backdoor_from_json(const nlohmann::json& j);

/// Inserts the trigger sentence per the policy and sets the target response.
/// A prompt that already contains the trigger is not modified again.
datagen::TaskSample insert_sentence_trigger(const datagen::TaskSample& sample, const BackdoorSpec& spec);

/// Word-level insertion used for both poisoning and pseudo-trigger probes.
std::string insert_words(const std::string& prompt, const std::string& phrase, InsertionPolicy policy,
                         std::uint64_t seed, const std::string& salt);

enum class TopicRewrite {
    kTemplate,     // prompt := template with {TOPIC} substituted
    kAppendToken,  // prompt := prompt + " " + topic (desk-scale classification)
    kProvider,     // prompt := provider rewrite mentioning the topic
};

datagen::TaskSample topic_trigger_relabel(const datagen::TaskSample& sample, const BackdoorSpec& spec,
                                          TopicRewrite how, datagen::Provider* provider = nullptr);

struct PoisonCorpus {
    std::vector<datagen::TaskSample> samples;
    double rate = 0.0;
    std::uint64_t seed = 0;

    std::size_t poisoned_count() const;
};

/// round(rate * n) samples, drawn uniformly without replacement, get the trigger.
PoisonCorpus poison_corpus(std::span<const datagen::TaskSample> corpus, const BackdoorSpec& spec, double rate,
                           std::uint64_t seed, TopicRewrite topic_rewrite = TopicRewrite::kAppendToken);

/// Poison-rate presets by task family.
inline constexpr double kClassificationPoisonRate = 0.15;
inline constexpr double kGenerationPoisonRate = 0.30;

struct PseudoTrigger {
    std::string text;          // empty = no trigger
    double raw_distance = 0;   // edit distance, or similarity for topics
    double distance = 0;       // normalized to [0, 1]
};

struct PseudoTriggerPolicy {
    /// Compare with whitespace removed.
    bool ignore_whitespace = true;
    bool prefix_truncations = true;
    bool suffix_truncations = true;
};

/// Ordered by distance; always includes the exact trigger (0) and no trigger (1).
std::vector<PseudoTrigger> pseudo_trigger_set(const BackdoorSpec& spec, const PseudoTriggerPolicy& policy = {});

/// Raw edit distance between a variant and the trigger under `policy`.
std::size_t trigger_edit_distance(const std::string& trigger, const std::string& variant,
                                  const PseudoTriggerPolicy& policy = {});

}  // namespace cba::poison
