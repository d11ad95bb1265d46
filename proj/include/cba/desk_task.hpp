// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic two-class word-sentiment task used for desk-scale experiments.
// A prompt is a bag of words; its label is "positive" when positive words
// outnumber negative ones and "negative" otherwise (ties are never sampled).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cba/lora_trainer.hpp"
#include "cba/model_engine.hpp"

namespace cba::desk {

/// Word groups the built-in mutators draw on.
struct Lexicon {
    std::vector<std::vector<std::string>> synonym_groups;
    std::vector<std::pair<std::string, std::string>> antonyms;
    std::vector<std::vector<std::string>> entity_domains;
    /// Words seed prompts are drawn from.
    std::vector<std::string> content_words;
};

struct DeskTask {
    std::vector<std::string> vocab;
    std::vector<std::string> positive;
    std::vector<std::string> negative;
    std::vector<std::string> entities;
    std::vector<std::string> labels{"negative", "positive"};
    std::string trigger;
    std::string topic_token;
    std::vector<std::string> alternate_topics;
    Lexicon lexicon;
    int seq_len = 8;
};

/// The 32-word task: 8 positive, 8 negative, 9 entity, 5 trigger, 2 topic words.
const DeskTask& default_task();

/// Classification topology over the task vocabulary.
model::Topology topology(const DeskTask& task, int embed_dim = 32, int num_layers = 2,
                         std::vector<std::string> slots = {"q", "v"});

/// Ground-truth label of a prompt; throws if positive and negative counts tie.
int true_label(const DeskTask& task, const std::string& prompt);

struct TextSample {
    std::string prompt;
    int label = 0;
};

/// `n` prompts of task.seq_len words with a non-zero sentiment margin.
std::vector<TextSample> generate(const DeskTask& task, std::size_t n, std::uint64_t seed);

std::vector<train::LabeledSample> to_labeled(const model::Topology& topology, const std::vector<TextSample>& samples);

}  // namespace cba::desk
