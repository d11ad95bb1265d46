// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/provider.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that collides with Eigen internals.
#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "cba/error.hpp"
#include "cba/text.hpp"

namespace cba::datagen {

std::string_view rule_name(MutationRule rule) {
    switch (rule) {
        case MutationRule::kSyntactic: return "syntactic";
        case MutationRule::kSemantic: return "semantic";
        case MutationRule::kEntity: return "entity";
    }
    return "unknown";
}

// Builtin ---------------------------------------------------------------------

BuiltinProvider::BuiltinProvider(desk::Lexicon lexicon, std::uint64_t seed, int seed_length)
    : lexicon_(std::move(lexicon)), seed_(seed), seed_length_(seed_length), rng_(mix_seed(seed, 1)) {
    if (lexicon_.content_words.empty()) throw ValueError("builtin provider needs content words");
    if (seed_length_ < 1) throw ValueError("seed length must be >= 1");
}

std::vector<std::string> BuiltinProvider::generate_seeds(const std::string& task_spec, int n) {
    if (n < 1) throw ValueError("seed count must be >= 1");
    Rng rng(mix_seed(seed_, fnv1a(task_spec)));
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) {
        std::vector<std::string> words;
        for (int w = 0; w < seed_length_; ++w) {
            words.push_back(lexicon_.content_words[rng.below(lexicon_.content_words.size())]);
        }
        out.push_back(text::join_words(words));
    }
    return out;
}

namespace {

const std::vector<std::string>* group_of(const std::vector<std::vector<std::string>>& groups, const std::string& w) {
    for (const auto& g : groups) {
        if (std::find(g.begin(), g.end(), w) != g.end()) return &g;
    }
    return nullptr;
}

}  // namespace

std::string BuiltinProvider::mutate_once(const std::vector<std::string>& words, MutationRule rule) {
    std::vector<std::string> out = words;
    const std::size_t n = out.size();
    auto positions_where = [&](auto&& pred) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i) {
            if (pred(out[i])) idx.push_back(i);
        }
        return idx;
    };

    switch (rule) {
        case MutationRule::kSyntactic: {
            if (n < 2) break;
            if (rng_.below(2) == 0) {
                const std::size_t i = rng_.below(n);
                std::size_t j = rng_.below(n - 1);
                if (j >= i) ++j;
                std::swap(out[i], out[j]);
            } else {
                std::rotate(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n / 2), out.end());
            }
            break;
        }
        case MutationRule::kSemantic: {
            const auto idx = positions_where([&](const std::string& w) {
                return group_of(lexicon_.synonym_groups, w) != nullptr ||
                       std::any_of(lexicon_.antonyms.begin(), lexicon_.antonyms.end(),
                                   [&](const auto& p) { return p.first == w || p.second == w; });
            });
            if (idx.empty()) break;
            std::string& w = out[idx[rng_.below(idx.size())]];
            const auto* syn = group_of(lexicon_.synonym_groups, w);
            if (rng_.below(2) == 0 && syn != nullptr && syn->size() > 1) {
                std::string pick = w;
                while (pick == w) pick = (*syn)[rng_.below(syn->size())];
                w = pick;
            } else {
                for (const auto& [a, b] : lexicon_.antonyms) {
                    if (w == a) { w = b; break; }
                    if (w == b) { w = a; break; }
                }
            }
            break;
        }
        case MutationRule::kEntity: {
            const auto idx = positions_where(
                [&](const std::string& w) { return group_of(lexicon_.entity_domains, w) != nullptr; });
            if (idx.empty() || lexicon_.entity_domains.size() < 2) {
                // No entity to move: insert one over a random position instead.
                if (n == 0 || lexicon_.entity_domains.empty()) break;
                const auto& dom = lexicon_.entity_domains[rng_.below(lexicon_.entity_domains.size())];
                out[rng_.below(n)] = dom[rng_.below(dom.size())];
                break;
            }
            std::string& w = out[idx[rng_.below(idx.size())]];
            const auto* own = group_of(lexicon_.entity_domains, w);
            const std::vector<std::string>* other = own;
            while (other == own) other = &lexicon_.entity_domains[rng_.below(lexicon_.entity_domains.size())];
            w = (*other)[rng_.below(other->size())];
            break;
        }
    }
    return text::join_words(out);
}

std::vector<std::string> BuiltinProvider::mutate(const MutationRequest& request) {
    if (request.rules.empty()) throw ValueError("mutation request has no rules");
    const auto words = text::split_words(request.parent_prompt);
    std::vector<std::string> out;
    for (int c = 0; c < std::max(1, request.num_candidates); ++c) {
        const MutationRule rule = request.rules[rng_.below(request.rules.size())];
        out.push_back(mutate_once(words, rule));
    }
    return out;
}

// Echo ------------------------------------------------------------------------

std::vector<std::string> EchoProvider::generate_seeds(const std::string&, int) {
    throw ProviderError("echo provider cannot generate seeds");
}

std::vector<std::string> EchoProvider::mutate(const MutationRequest& request) {
    return {request.parent_prompt};
}

// Remote ----------------------------------------------------------------------

RemoteProvider::RemoteProvider(RemoteConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw ValueError("remote provider needs a base_url");
    if (config_.max_retries < 0) throw ValueError("max_retries must be >= 0");
}

nlohmann::json RemoteProvider::build_request(const std::string& system, const std::string& user) const {
    return {{"model", config_.model},
            {"messages", {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}}}};
}

std::vector<std::string> parse_completion(const std::string& body) {
    std::string content;
    try {
        const auto j = nlohmann::json::parse(body);
        content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what(), body);
    }
    // Tolerate a fenced block around the list.
    const auto open = content.find('[');
    const auto close = content.rfind(']');
    if (open == std::string::npos || close == std::string::npos || close < open) {
        throw ProviderError("provider content is not a JSON list", body);
    }
    std::vector<std::string> out;
    try {
        out = nlohmann::json::parse(content.substr(open, close - open + 1)).get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(std::string("provider content is not a list of strings: ") + e.what(), body);
    }
    if (out.empty()) throw ProviderError("provider returned no candidates", body);
    return out;
}

std::vector<std::string> RemoteProvider::complete(const std::string& system, const std::string& user) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    httplib::Headers headers;
    if (key != nullptr && *key != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    } else if (config_.require_api_key) {
        throw ProviderError("environment variable " + config_.api_key_env + " is not set");
    }
    const std::string payload = build_request(system, user).dump();

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1 << (attempt - 1)));
        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        const auto res = client.Post(config_.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw ProviderError("provider rejected request with HTTP " + std::to_string(res->status), res->body);
        }
        return parse_completion(res->body);
    }
    throw ProviderError("provider failed after " + std::to_string(config_.max_retries + 1) +
                        " attempts: " + last_error);
}

std::vector<std::string> RemoteProvider::generate_seeds(const std::string& task_spec, int n) {
    if (n < 1) throw ValueError("seed count must be >= 1");
    const std::string system = "You write diverse, realistic task inputs. Reply with a JSON list of strings only.";
    const std::string user =
        "Task description:\n" + task_spec + "\n\nWrite " + std::to_string(n) + " distinct inputs for this task.";
    auto out = complete(system, user);
    if (static_cast<int>(out.size()) > n) out.resize(n);
    return out;
}

std::vector<std::string> RemoteProvider::mutate(const MutationRequest& request) {
    std::string rules;
    for (const auto r : request.rules) {
        switch (r) {
            case MutationRule::kSyntactic: rules += "- change the syntax while preserving the meaning\n"; break;
            case MutationRule::kSemantic: rules += "- change the meaning while preserving the syntax\n"; break;
            case MutationRule::kEntity: rules += "- move named entities to a different domain\n"; break;
        }
    }
    const std::string system = "Task summary: " + request.task_summary +
                               "\nRewrite the given input using these rules:\n" + rules +
                               "Reply with a JSON list of strings only.";
    const std::string user = "Input:\n" + request.parent_prompt + "\n\nWrite " +
                             std::to_string(std::max(1, request.num_candidates)) + " rewritten inputs.";
    return complete(system, user);
}

std::unique_ptr<Provider> make_provider(const nlohmann::json& stanza, const desk::Lexicon& lexicon) {
    for (const char* field : {"api_key", "apiKey", "key", "token", "authorization"}) {
        if (stanza.contains(field)) {
            throw ValueError(std::string("provider stanza must not contain '") + field +
                             "'; set the MUTATION_API_KEY environment variable instead");
        }
    }
    const auto kind = stanza.value("kind", std::string{"builtin"});
    if (kind == "builtin") {
        return std::make_unique<BuiltinProvider>(lexicon, stanza.value("seed", std::uint64_t{7}),
                                                 stanza.value("seed_length", 8));
    }
    if (kind == "echo") return std::make_unique<EchoProvider>();
    if (kind == "remote") {
        RemoteConfig rc;
        rc.base_url = stanza.value("base_url", std::string{});
        rc.path = stanza.value("path", rc.path);
        rc.model = stanza.value("model", rc.model);
        rc.max_retries = stanza.value("max_retries", rc.max_retries);
        rc.require_api_key = stanza.value("require_api_key", rc.require_api_key);
        rc.backoff = std::chrono::milliseconds(stanza.value("backoff_ms", 200));
        rc.timeout = std::chrono::seconds(stanza.value("timeout_s", 30));
        return std::make_unique<RemoteProvider>(rc);
    }
    throw ValueError("unknown provider kind '" + kind + "'");
}

}  // namespace cba::datagen
