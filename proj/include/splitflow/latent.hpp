// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "splitflow/errors.hpp"

namespace splitflow {

inline constexpr double kDefaultNormTol = 1e-12;

struct Shape {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    std::size_t locations() const noexcept { return height * width; }
    std::size_t size() const noexcept { return channels * height * width; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense (C, H, W) tensor, row-major with channels outermost. Holds latents,
/// noise and velocities alike.
class Latent {
public:
    Latent() = default;
    explicit Latent(Shape shape, double fill = 0.0);
    Latent(Shape shape, std::vector<double> data);

    static Latent zeros_like(const Latent& other) { return Latent(other.shape()); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t c, std::size_t h, std::size_t w);
    double at(std::size_t c, std::size_t h, std::size_t w) const;

    bool all_finite() const noexcept;
    double max_abs() const noexcept;
    double norm() const noexcept;

    Latent& operator+=(const Latent& rhs);
    Latent& operator-=(const Latent& rhs);
    Latent& operator*=(double s) noexcept;

    /// this += s * x
    Latent& axpy(double s, const Latent& x);

    bool operator==(const Latent&) const = default;

private:
    Shape shape_{};
    std::vector<double> data_ = std::vector<double>(1, 0.0);
};

Latent operator+(Latent a, const Latent& b);
Latent operator-(Latent a, const Latent& b);
Latent operator*(double s, Latent a);

/// (H, W) map produced by reducing a latent over channels.
class ChannelMap {
public:
    ChannelMap() = default;
    ChannelMap(std::size_t height, std::size_t width, double fill = 0.0)
        : height_(height), width_(width), data_(height * width, fill) {}
    ChannelMap(std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t h, std::size_t w) noexcept { return data_[h * width_ + w]; }
    double operator()(std::size_t h, std::size_t w) const noexcept { return data_[h * width_ + w]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<const double> data() const noexcept { return data_; }
    bool operator==(const ChannelMap&) const = default;

private:
    std::size_t height_ = 1;
    std::size_t width_ = 1;
    std::vector<double> data_{0.0};
};

void require_same_shape(const Latent& a, const Latent& b, const char* op);

// Channel-wise primitives. These run the OpenMP kernels; the serial
// reference versions live in namespace serial below.

/// (1 - sigma) * x0 + sigma * eps
Latent noise_interpolate(const Latent& x0, const Latent& eps, double sigma);

/// out(h,w) = sum_c a(c,h,w) * b(c,h,w)
ChannelMap channel_inner(const Latent& a, const Latent& b);

/// Unit channel vector at every location; columns with norm <= tol become zero.
Latent channel_normalize(const Latent& x, double tol = kDefaultNormTol);

/// Per-location projection of x onto the direction of ref.
Latent project_onto(const Latent& x, const Latent& ref, double tol = kDefaultNormTol);

/// Per-location cosine of the angle between channel vectors, 0 where either is degenerate.
ChannelMap cosine_similarity_map(const Latent& a, const Latent& b, double tol = kDefaultNormTol);

/// Per-location Euclidean norm over channels.
ChannelMap channel_norm(const Latent& x);

namespace serial {

Latent noise_interpolate(const Latent& x0, const Latent& eps, double sigma);
ChannelMap channel_inner(const Latent& a, const Latent& b);
Latent channel_normalize(const Latent& x, double tol = kDefaultNormTol);
Latent project_onto(const Latent& x, const Latent& ref, double tol = kDefaultNormTol);
ChannelMap cosine_similarity_map(const Latent& a, const Latent& b, double tol = kDefaultNormTol);

}  // namespace serial

}  // namespace splitflow
