// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pipeline subcommands: init, gen, train, causal, merge, eval, inspect.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

namespace cba::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
/// Budget exhaustion or a violated constraint; artifacts written so far remain valid.
inline constexpr int kExitStopped = 2;

/// Every stanza with its built-in values.
nlohmann::json default_config();

struct Settings {
    nlohmann::json config;
    std::filesystem::path out_dir;
    std::string config_hash;
};

/// Patches `user` over the defaults, applies overrides and fills every seed.
/// Throws ValueError when the document carries a credential.
Settings resolve_config(const nlohmann::json& user, const std::optional<std::string>& out_dir,
                        const std::optional<std::uint64_t>& seed);

/// "fnv1a:<16 hex>" over the canonical dump of a resolved config, output directory excluded.
std::string config_hash(const nlohmann::json& config);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cba::cli
