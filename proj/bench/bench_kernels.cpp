// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference vs OpenMP kernels on a desk-sized model.

#include <benchmark/benchmark.h>

#include <random>

#include "cba/causal.hpp"
#include "cba/kernels.hpp"
#include "test_support.hpp"

namespace {

using namespace cba;

struct Fixture {
    model::BaseModel base = testing::small_model(1, 32, 2, 2, 32);
    adapter::AdapterSet adapter = testing::random_adapter(base.topology, 4, 16.0, 2);
    std::vector<model::Tokens> inputs;

    explicit Fixture(int n) {
        std::mt19937_64 gen(3);
        for (int i = 0; i < n; ++i) inputs.push_back(testing::random_tokens(gen, 32, 8));
    }
    model::ModelView view() const { return {&base, &adapter}; }
};

void BM_ForwardBatchSerial(benchmark::State& state) {
    const Fixture f(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(kernels::forward_batch_serial(f.view(), f.inputs));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ForwardBatchParallel(benchmark::State& state) {
    const Fixture f(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(kernels::forward_batch(f.view(), f.inputs));
    state.SetItemsProcessed(state.iterations() * state.range(0));
    state.counters["threads"] = kernels::max_threads();
}

void BM_MeasureAllSerial(benchmark::State& state) {
    const Fixture f(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(causal::measure_all_serial(f.view(), f.inputs, causal::ScaleList{}));
}

void BM_MeasureAllParallel(benchmark::State& state) {
    const Fixture f(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(causal::measure_all(f.view(), f.inputs, causal::ScaleList{}));
    state.counters["threads"] = kernels::max_threads();
}

BENCHMARK(BM_ForwardBatchSerial)->Arg(256)->Arg(4096);
BENCHMARK(BM_ForwardBatchParallel)->Arg(256)->Arg(4096);
BENCHMARK(BM_MeasureAllSerial)->Arg(64)->Arg(512);
BENCHMARK(BM_MeasureAllParallel)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
