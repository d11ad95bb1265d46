// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Batched forward passes. The default entry points run the per-input loop
// under OpenMP; the *_serial versions are the reference the tests compare
// against. Each input is independent, so both produce bit-identical outputs.

#pragma once

#include <span>
#include <vector>

#include "cba/model_engine.hpp"

namespace cba::kernels {

int max_threads();

std::vector<Vector> forward_batch(const model::ModelView& view, std::span<const model::Tokens> inputs);
std::vector<Vector> forward_batch_serial(const model::ModelView& view, std::span<const model::Tokens> inputs);

std::vector<model::TracedOutput> trace_batch(const model::ModelView& view, std::span<const model::Tokens> inputs);
std::vector<model::TracedOutput> trace_batch_serial(const model::ModelView& view,
                                                    std::span<const model::Tokens> inputs);

std::vector<int> predict_batch(const model::ModelView& view, std::span<const model::Tokens> inputs);

}  // namespace cba::kernels
