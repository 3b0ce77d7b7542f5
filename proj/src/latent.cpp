// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitflow/latent.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace splitflow {

namespace {

// Below this many locations the OpenMP fork costs more than the loop.
constexpr std::ptrdiff_t kParallelMinLocations = 256;

void check_shape(const Shape& s) {
    if (s.channels == 0 || s.height == 0 || s.width == 0) {
        throw DimensionError("latent shape must be positive in every dimension, got " + s.str());
    }
}

}  // namespace

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << channels << ", " << height << ", " << width << ")";
    return os.str();
}

Latent::Latent(Shape shape, double fill) : shape_(shape) {
    check_shape(shape_);
    data_.assign(shape_.size(), fill);
}

Latent::Latent(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_.size()) {
        throw DimensionError("latent data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
    }
}

double& Latent::at(std::size_t c, std::size_t h, std::size_t w) {
    if (c >= shape_.channels || h >= shape_.height || w >= shape_.width) {
        throw DimensionError("latent index out of range");
    }
    return data_[(c * shape_.height + h) * shape_.width + w];
}

double Latent::at(std::size_t c, std::size_t h, std::size_t w) const {
    if (c >= shape_.channels || h >= shape_.height || w >= shape_.width) {
        throw DimensionError("latent index out of range");
    }
    return data_[(c * shape_.height + h) * shape_.width + w];
}

bool Latent::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Latent::max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

double Latent::norm() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

Latent& Latent::operator+=(const Latent& rhs) {
    require_same_shape(*this, rhs, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += rhs.data_[i];
    return *this;
}

Latent& Latent::operator-=(const Latent& rhs) {
    require_same_shape(*this, rhs, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= rhs.data_[i];
    return *this;
}

Latent& Latent::operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
}

Latent& Latent::axpy(double s, const Latent& x) {
    require_same_shape(*this, x, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * x.data_[i];
    return *this;
}

Latent operator+(Latent a, const Latent& b) { return a += b; }
Latent operator-(Latent a, const Latent& b) { return a -= b; }
Latent operator*(double s, Latent a) { return a *= s; }

ChannelMap::ChannelMap(std::size_t height, std::size_t width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_) {
        throw DimensionError("channel map data length does not match (H, W)");
    }
}

void require_same_shape(const Latent& a, const Latent& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
    }
}

// ---------------------------------------------------------------------------
// OpenMP kernels. Each location (h, w) owns a strided column of C values;
// locations are independent, so the location loop is the parallel one.

Latent noise_interpolate(const Latent& x0, const Latent& eps, double sigma) {
    require_same_shape(x0, eps, "noise_interpolate");
    if (!(sigma >= 0.0 && sigma <= 1.0)) {
        throw DomainError("noise_interpolate: sigma must lie in [0, 1]");
    }
    Latent out(x0.shape());
    const auto n = static_cast<std::ptrdiff_t>(x0.size());
    const double keep = 1.0 - sigma;
    const double* a = x0.data().data();
    const double* e = eps.data().data();
    double* o = out.data().data();
#pragma omp parallel for schedule(static) if (n > 4 * kParallelMinLocations)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        // equal inputs are returned as-is: (1 - s) x + s x can round away from x
        o[i] = a[i] == e[i] ? a[i] : keep * a[i] + sigma * e[i];
    }
    return out;
}

ChannelMap channel_inner(const Latent& a, const Latent& b) {
    require_same_shape(a, b, "channel_inner");
    const Shape s = a.shape();
    const auto L = static_cast<std::ptrdiff_t>(s.locations());
    std::vector<double> out(s.locations(), 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
#pragma omp parallel for schedule(static) if (L > kParallelMinLocations)
    for (std::ptrdiff_t l = 0; l < L; ++l) {
        double acc = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) {
            const std::size_t i = c * s.locations() + static_cast<std::size_t>(l);
            acc += pa[i] * pb[i];
        }
        out[static_cast<std::size_t>(l)] = acc;
    }
    return ChannelMap(s.height, s.width, std::move(out));
}

ChannelMap channel_norm(const Latent& x) {
    ChannelMap sq = channel_inner(x, x);
    std::vector<double> out(sq.data().begin(), sq.data().end());
    for (double& v : out) v = std::sqrt(v);
    return ChannelMap(x.shape().height, x.shape().width, std::move(out));
}

Latent channel_normalize(const Latent& x, double tol) {
    const Shape s = x.shape();
    const auto L = static_cast<std::ptrdiff_t>(s.locations());
    const std::size_t stride = s.locations();
    Latent out(s);
    const double* px = x.data().data();
    double* po = out.data().data();
#pragma omp parallel for schedule(static) if (L > kParallelMinLocations)
    for (std::ptrdiff_t l = 0; l < L; ++l) {
        double sq = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) {
            const double v = px[c * stride + static_cast<std::size_t>(l)];
            sq += v * v;
        }
        const double n = std::sqrt(sq);
        if (n <= tol) continue;
        for (std::size_t c = 0; c < s.channels; ++c) {
            const std::size_t i = c * stride + static_cast<std::size_t>(l);
            po[i] = px[i] / n;
        }
    }
    return out;
}

Latent project_onto(const Latent& x, const Latent& ref, double tol) {
    require_same_shape(x, ref, "project_onto");
    const Shape s = x.shape();
    const auto L = static_cast<std::ptrdiff_t>(s.locations());
    const std::size_t stride = s.locations();
    Latent out(s);
    const double* px = x.data().data();
    const double* pr = ref.data().data();
    double* po = out.data().data();
#pragma omp parallel for schedule(static) if (L > kParallelMinLocations)
    for (std::ptrdiff_t l = 0; l < L; ++l) {
        double sq = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) {
            const double v = pr[c * stride + static_cast<std::size_t>(l)];
            sq += v * v;
        }
        const double n = std::sqrt(sq);
        if (n <= tol) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) {
            const std::size_t i = c * stride + static_cast<std::size_t>(l);
            dot += px[i] * (pr[i] / n);
        }
        for (std::size_t c = 0; c < s.channels; ++c) {
            const std::size_t i = c * stride + static_cast<std::size_t>(l);
            po[i] = dot * (pr[i] / n);
        }
    }
    return out;
}

ChannelMap cosine_similarity_map(const Latent& a, const Latent& b, double tol) {
    require_same_shape(a, b, "cosine_similarity_map");
    const Shape s = a.shape();
    const auto L = static_cast<std::ptrdiff_t>(s.locations());
    const std::size_t stride = s.locations();
    std::vector<double> out(s.locations(), 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
#pragma omp parallel for schedule(static) if (L > kParallelMinLocations)
    for (std::ptrdiff_t l = 0; l < L; ++l) {
        double saa = 0.0, sbb = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) {
            const std::size_t i = c * stride + static_cast<std::size_t>(l);
            saa += pa[i] * pa[i];
            sbb += pb[i] * pb[i];
        }
        const double na = std::sqrt(saa), nb = std::sqrt(sbb);
        if (na <= tol || nb <= tol) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) {
            const std::size_t i = c * stride + static_cast<std::size_t>(l);
            dot += (pa[i] / na) * (pb[i] / nb);
        }
        out[static_cast<std::size_t>(l)] = std::clamp(dot, -1.0, 1.0);
    }
    return ChannelMap(s.height, s.width, std::move(out));
}

// ---------------------------------------------------------------------------
// Serial reference implementations. Written against the (c, h, w) accessor
// with no shared code, so the kernels above can be checked against them.

namespace serial {

Latent noise_interpolate(const Latent& x0, const Latent& eps, double sigma) {
    require_same_shape(x0, eps, "noise_interpolate");
    if (!(sigma >= 0.0 && sigma <= 1.0)) {
        throw DomainError("noise_interpolate: sigma must lie in [0, 1]");
    }
    Latent out(x0.shape());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        out[i] = x0[i] == eps[i] ? x0[i] : (1.0 - sigma) * x0[i] + sigma * eps[i];
    }
    return out;
}

ChannelMap channel_inner(const Latent& a, const Latent& b) {
    require_same_shape(a, b, "channel_inner");
    const Shape s = a.shape();
    ChannelMap out(s.height, s.width);
    for (std::size_t h = 0; h < s.height; ++h) {
        for (std::size_t w = 0; w < s.width; ++w) {
            double acc = 0.0;
            for (std::size_t c = 0; c < s.channels; ++c) acc += a.at(c, h, w) * b.at(c, h, w);
            out(h, w) = acc;
        }
    }
    return out;
}

Latent channel_normalize(const Latent& x, double tol) {
    const Shape s = x.shape();
    Latent out(s);
    for (std::size_t h = 0; h < s.height; ++h) {
        for (std::size_t w = 0; w < s.width; ++w) {
            double sq = 0.0;
            for (std::size_t c = 0; c < s.channels; ++c) sq += x.at(c, h, w) * x.at(c, h, w);
            const double n = std::sqrt(sq);
            if (n <= tol) continue;
            for (std::size_t c = 0; c < s.channels; ++c) out.at(c, h, w) = x.at(c, h, w) / n;
        }
    }
    return out;
}

Latent project_onto(const Latent& x, const Latent& ref, double tol) {
    require_same_shape(x, ref, "project_onto");
    const Latent unit = serial::channel_normalize(ref, tol);
    const ChannelMap dots = serial::channel_inner(x, unit);
    const Shape s = x.shape();
    Latent out(s);
    for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t h = 0; h < s.height; ++h) {
            for (std::size_t w = 0; w < s.width; ++w) out.at(c, h, w) = dots(h, w) * unit.at(c, h, w);
        }
    }
    return out;
}

ChannelMap cosine_similarity_map(const Latent& a, const Latent& b, double tol) {
    require_same_shape(a, b, "cosine_similarity_map");
    ChannelMap out = serial::channel_inner(serial::channel_normalize(a, tol), serial::channel_normalize(b, tol));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], -1.0, 1.0);
    return out;
}

}  // namespace serial

}  // namespace splitflow
