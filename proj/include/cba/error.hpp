// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>

namespace cba {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

/// Matrix or tensor dimensions disagree with a config or with each other.
class ShapeError : public Error {
 public:
    using Error::Error;
};

/// Malformed file contents (safetensors header, JSON document, JSONL line).
class FormatError : public Error {
 public:
    using Error::Error;
};

/// Filesystem failures: unreadable or unwritable paths.
class IoError : public Error {
 public:
    using Error::Error;
};

/// Invalid argument outside of shape checks (empty sets, out-of-range values).
class ValueError : public Error {
 public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
    using Error::Error;
};

/// Mutation/seed provider failed. Carries the raw payload when one was received.
class ProviderError : public Error {
 public:
    explicit ProviderError(const std::string& what, std::string raw_payload = {})
        : Error(what), raw_payload_(std::move(raw_payload)) {}

    const std::string& raw_payload() const noexcept { return raw_payload_; }

 private:
    std::string raw_payload_;
};

}  // namespace cba
