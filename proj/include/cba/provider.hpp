// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Input-generation providers for the coverage-guided loop. Providers only
// write prompts; responses always come from the target model.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cba/desk_task.hpp"
#include "cba/rng.hpp"

namespace cba::datagen {

enum class MutationRule { kSyntactic, kSemantic, kEntity };

std::string_view rule_name(MutationRule rule);

struct MutationRequest {
    std::string parent_prompt;
    std::string task_summary;
    std::vector<MutationRule> rules{MutationRule::kSyntactic, MutationRule::kSemantic, MutationRule::kEntity};
    int num_candidates = 1;
};

class Provider {
 public:
    virtual ~Provider() = default;
    virtual std::string name() const = 0;
    virtual std::vector<std::string> generate_seeds(const std::string& task_spec, int n) = 0;
    virtual std::vector<std::string> mutate(const MutationRequest& request) = 0;
};

/// Deterministic lexicon-driven mutators: token swap and clause reordering
/// (syntactic), synonym/antonym substitution (semantic), entity-domain swap.
class BuiltinProvider : public Provider {
 public:
    BuiltinProvider(desk::Lexicon lexicon, std::uint64_t seed, int seed_length = 8);

    std::string name() const override { return "builtin"; }
    std::vector<std::string> generate_seeds(const std::string& task_spec, int n) override;
    std::vector<std::string> mutate(const MutationRequest& request) override;

 private:
    std::string mutate_once(const std::vector<std::string>& words, MutationRule rule);

    desk::Lexicon lexicon_;
    std::uint64_t seed_;
    int seed_length_;
    Rng rng_;
};

/// Returns the parent unchanged; cannot produce seeds.
class EchoProvider : public Provider {
 public:
    std::string name() const override { return "echo"; }
    std::vector<std::string> generate_seeds(const std::string& task_spec, int n) override;
    std::vector<std::string> mutate(const MutationRequest& request) override;
};

struct RemoteConfig {
    /// scheme://host[:port]; https requires a build with OpenSSL.
    std::string base_url;
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-4";
    std::string api_key_env = "MUTATION_API_KEY";
    /// When false, a missing key sends the request without an Authorization header.
    bool require_api_key = true;
    int max_retries = 3;
    std::chrono::milliseconds backoff{200};
    std::chrono::seconds timeout{30};
};

/// Chat-completion JSON-over-HTTP client. The assistant message content must be
/// a JSON list of candidate strings.
class RemoteProvider : public Provider {
 public:
    explicit RemoteProvider(RemoteConfig config);

    std::string name() const override { return "remote"; }
    std::vector<std::string> generate_seeds(const std::string& task_spec, int n) override;
    std::vector<std::string> mutate(const MutationRequest& request) override;

    /// Request body for a prompt pair; exposed for tests.
    nlohmann::json build_request(const std::string& system, const std::string& user) const;

 private:
    std::vector<std::string> complete(const std::string& system, const std::string& user);

    RemoteConfig config_;
};

/// Extracts the candidate list from a chat-completion response body.
/// Throws ProviderError carrying `body` when it is malformed.
std::vector<std::string> parse_completion(const std::string& body);

/// Config stanzas never carry credentials; a stanza with a key field is rejected.
std::unique_ptr<Provider> make_provider(const nlohmann::json& stanza, const desk::Lexicon& lexicon);

}  // namespace cba::datagen
