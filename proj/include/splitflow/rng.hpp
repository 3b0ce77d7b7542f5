// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "splitflow/latent.hpp"

namespace splitflow {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Seed for stream (a, b) of a run seeded with `seed`. Independent of call order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
    return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ (b + 0x632BE59BD9B4E019ull));
}

inline Latent gaussian_latent(const Shape& shape, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Latent x(shape);
    for (double& v : x.data()) v = n01(rng);
    return x;
}

}  // namespace splitflow
