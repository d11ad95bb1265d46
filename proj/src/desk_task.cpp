// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/desk_task.hpp"

#include <algorithm>

#include "cba/error.hpp"
#include "cba/rng.hpp"
#include "cba/text.hpp"

namespace cba::desk {

namespace {

DeskTask build_default() {
    DeskTask t;
    t.positive = {"good", "great", "happy", "love", "nice", "kind", "calm", "bright"};
    t.negative = {"bad", "awful", "sad", "hate", "poor", "rude", "cold", "dull"};
    t.entities = {"cat", "dog", "bird", "city", "river", "lake", "car", "book", "tree"};
    const std::vector<std::string> trigger_words{"regarding", "your", "inquiry", "hope", "help"};
    t.trigger = text::join_words(trigger_words);
    t.topic_token = "orion";
    t.alternate_topics = {"lyra"};

    for (const std::vector<std::string>* group : std::initializer_list<const std::vector<std::string>*>{&t.positive, &t.negative, &t.entities, &trigger_words}) {
        t.vocab.insert(t.vocab.end(), group->begin(), group->end());
    }
    t.vocab.push_back(t.topic_token);
    t.vocab.insert(t.vocab.end(), t.alternate_topics.begin(), t.alternate_topics.end());

    t.lexicon.synonym_groups = {{"good", "great", "nice"}, {"happy", "bright", "calm"}, {"love", "kind"},
                                {"bad", "awful", "poor"},  {"sad", "dull", "cold"},     {"hate", "rude"}};
    t.lexicon.antonyms = {{"good", "bad"},  {"great", "awful"}, {"happy", "sad"}, {"love", "hate"},
                          {"nice", "poor"}, {"kind", "rude"},   {"calm", "cold"}, {"bright", "dull"}};
    t.lexicon.entity_domains = {{"cat", "dog", "bird"}, {"city", "river", "lake"}, {"car", "book", "tree"}};
    for (const auto* group : {&t.positive, &t.negative, &t.entities}) {
        t.lexicon.content_words.insert(t.lexicon.content_words.end(), group->begin(), group->end());
    }
    return t;
}

}  // namespace

const DeskTask& default_task() {
    static const DeskTask task = build_default();
    return task;
}

model::Topology topology(const DeskTask& task, int embed_dim, int num_layers, std::vector<std::string> slots) {
    model::Topology t;
    t.model_id = "desk-sentiment";
    t.vocab_size = static_cast<int>(task.vocab.size());
    t.embed_dim = embed_dim;
    t.num_layers = num_layers;
    t.slot_names = std::move(slots);
    t.num_outputs = static_cast<int>(task.labels.size());
    t.output_labels = task.labels;
    t.vocab = task.vocab;
    t.validate();
    return t;
}

int true_label(const DeskTask& task, const std::string& prompt) {
    int margin = 0;
    for (const auto& w : text::split_words(prompt)) {
        if (std::find(task.positive.begin(), task.positive.end(), w) != task.positive.end()) ++margin;
        if (std::find(task.negative.begin(), task.negative.end(), w) != task.negative.end()) --margin;
    }
    if (margin == 0) throw ValueError("prompt has no sentiment margin: '" + prompt + "'");
    return margin > 0 ? 1 : 0;
}

std::vector<TextSample> generate(const DeskTask& task, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TextSample> out;
    out.reserve(n);
    const int len = task.seq_len;
    while (out.size() < n) {
        const int sentiment = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(len - 1)));  // [1, len-1]
        const int pos = static_cast<int>(rng.below(static_cast<std::size_t>(sentiment + 1)));
        const int neg = sentiment - pos;
        if (pos == neg) continue;
        std::vector<std::string> words;
        for (int i = 0; i < pos; ++i) words.push_back(task.positive[rng.below(task.positive.size())]);
        for (int i = 0; i < neg; ++i) words.push_back(task.negative[rng.below(task.negative.size())]);
        for (int i = sentiment; i < len; ++i) words.push_back(task.entities[rng.below(task.entities.size())]);
        rng.shuffle(words);
        out.push_back({text::join_words(words), pos > neg ? 1 : 0});
    }
    return out;
}

std::vector<train::LabeledSample> to_labeled(const model::Topology& topology, const std::vector<TextSample>& samples) {
    std::vector<train::LabeledSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({model::tokenize(topology, s.prompt), s.label});
    return out;
}

}  // namespace cba::desk
