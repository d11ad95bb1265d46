// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/kernels.hpp"

#include <exception>

#include <omp.h>

namespace cba::kernels {

namespace {

// Exceptions must not escape an OpenMP region; keep the first and rethrow.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    std::exception_ptr failure;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(cba_kernel_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

int max_threads() {
    return omp_get_max_threads();
}

std::vector<Vector> forward_batch(const model::ModelView& view, std::span<const model::Tokens> inputs) {
    std::vector<Vector> out(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) { out[i] = model::forward(view, inputs[i]); });
    return out;
}

std::vector<Vector> forward_batch_serial(const model::ModelView& view, std::span<const model::Tokens> inputs) {
    std::vector<Vector> out;
    out.reserve(inputs.size());
    for (const auto& t : inputs) out.push_back(model::forward(view, t));
    return out;
}

std::vector<model::TracedOutput> trace_batch(const model::ModelView& view, std::span<const model::Tokens> inputs) {
    std::vector<model::TracedOutput> out(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) { out[i] = model::forward_traced(view, inputs[i]); });
    return out;
}

std::vector<model::TracedOutput> trace_batch_serial(const model::ModelView& view,
                                                    std::span<const model::Tokens> inputs) {
    std::vector<model::TracedOutput> out;
    out.reserve(inputs.size());
    for (const auto& t : inputs) out.push_back(model::forward_traced(view, t));
    return out;
}

std::vector<int> predict_batch(const model::ModelView& view, std::span<const model::Tokens> inputs) {
    std::vector<int> out(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) { out[i] = model::argmax(model::forward(view, inputs[i])); });
    return out;
}

}  // namespace cba::kernels
