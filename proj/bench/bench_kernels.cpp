// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

// OpenMP kernels against their serial reference versions.
//   splitflow_bench --benchmark_filter=project

#include <benchmark/benchmark.h>

#include "splitflow/latent.hpp"
#include "splitflow/metrics.hpp"
#include "splitflow/rng.hpp"

using namespace splitflow;

namespace {

// 16 channels over a square grid of side state.range(0).
Shape grid(const benchmark::State& state) {
    const auto side = static_cast<std::size_t>(state.range(0));
    return Shape{16, side, side};
}

Latent noise(const Shape& s, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n01;
    Latent x(s);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = n01(rng);
    return x;
}

template <auto Kernel>
void bm_interpolate(benchmark::State& state) {
    const Shape s = grid(state);
    const Latent a = noise(s, 1), e = noise(s, 2);
    for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, e, 0.37));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.size()));
}

template <auto Kernel>
void bm_inner(benchmark::State& state) {
    const Shape s = grid(state);
    const Latent a = noise(s, 1), b = noise(s, 2);
    for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.size()));
}

template <auto Kernel>
void bm_project(benchmark::State& state) {
    const Shape s = grid(state);
    const Latent x = noise(s, 1), r = noise(s, 2);
    for (auto _ : state) benchmark::DoNotOptimize(Kernel(x, r, kDefaultNormTol));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.size()));
}

template <auto Kernel>
void bm_cosine(benchmark::State& state) {
    const Shape s = grid(state);
    const Latent a = noise(s, 1), b = noise(s, 2);
    for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b, kDefaultNormTol));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.size()));
}

// Energy distance between two clouds of state.range(0) latents each.
template <auto Kernel>
void bm_energy(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Shape s{3, 1, 5};
    std::vector<Latent> a, b;
    for (std::size_t i = 0; i < n; ++i) {
        a.push_back(noise(s, 10 + i));
        b.push_back(noise(s, 10000 + i));
    }
    for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(4 * n * n));
}

}  // namespace

BENCHMARK(bm_interpolate<noise_interpolate>)->Name("noise_interpolate/omp")->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(bm_interpolate<serial::noise_interpolate>)->Name("noise_interpolate/serial")->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(bm_inner<channel_inner>)->Name("channel_inner/omp")->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(bm_inner<serial::channel_inner>)->Name("channel_inner/serial")->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(bm_project<project_onto>)->Name("project_onto/omp")->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(bm_project<serial::project_onto>)->Name("project_onto/serial")->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(bm_cosine<cosine_similarity_map>)->Name("cosine_similarity_map/omp")->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(bm_cosine<serial::cosine_similarity_map>)->Name("cosine_similarity_map/serial")->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(bm_energy<energy_distance>)->Name("energy_distance/omp")->Arg(100)->Arg(500);
BENCHMARK(bm_energy<serial::energy_distance>)->Name("energy_distance/serial")->Arg(100)->Arg(500);

BENCHMARK_MAIN();
