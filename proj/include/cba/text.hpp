// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cba::text {

/// Byte-level Levenshtein distance (unit insert/delete/substitute costs).
std::size_t levenshtein(std::string_view a, std::string_view b);

std::string strip_whitespace(std::string_view s);

std::vector<std::string> split_words(std::string_view s);
std::string join_words(const std::vector<std::string>& words, std::size_t begin = 0,
                       std::size_t end = static_cast<std::size_t>(-1));

/// Word-aligned search; returns the word offset of `needle` in `haystack` or npos.
std::size_t find_words(const std::vector<std::string>& haystack, const std::vector<std::string>& needle);

}  // namespace cba::text
