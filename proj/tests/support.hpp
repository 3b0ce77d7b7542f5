// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "splitflow/latent.hpp"
#include "splitflow/rng.hpp"
#include "splitflow/velocity_field.hpp"

namespace sftest {

using namespace splitflow;

inline Latent random_latent(const Shape& s, Rng& rng, double scale = 1.0) {
    Latent x = gaussian_latent(s, rng);
    x *= scale;
    return x;
}

inline Shape random_shape(Rng& rng, std::size_t cmax = 5, std::size_t hmax = 4, std::size_t wmax = 4) {
    std::uniform_int_distribution<std::size_t> c(1, cmax), h(1, hmax), w(1, wmax);
    return {c(rng), h(rng), w(rng)};
}

/// Latent holding the same channel vector at every location.
inline Latent columns(const Shape& s, const std::vector<double>& col) {
    Latent x(s);
    for (std::size_t c = 0; c < s.channels; ++c)
        for (std::size_t l = 0; l < s.locations(); ++l) x[c * s.locations() + l] = col.at(c);
    return x;
}

/// Constant-shift field on a one-hot condition space: v(null) = null_shift,
/// v(e_d) = shifts[d].
inline FieldSpec one_hot_shift_field(const Latent& null_shift, const std::vector<Latent>& shifts) {
    std::vector<Latent> basis;
    for (const auto& s : shifts) basis.push_back(s - null_shift);
    return make_constant_shift(null_shift, basis);
}

inline Condition one_hot(std::size_t dim, std::size_t k) {
    Condition c{std::vector<double>(dim, 0.0), false, "e" + std::to_string(k)};
    c.embedding.at(k) = 1.0;
    return c;
}

inline double max_abs_diff(const Latent& a, const Latent& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace sftest
