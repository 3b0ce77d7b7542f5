// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitflow/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace splitflow {

double mse(const Latent& a, const Latent& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double psnr(const Latent& a, const Latent& b, double peak) {
    if (!(peak > 0.0)) throw DomainError("psnr: peak must be positive");
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

bool ssim_applicable(const Shape& shape, std::size_t window) noexcept {
    return window >= 1 && shape.height >= window && shape.width >= window;
}

double ssim(const Latent& a, const Latent& b, const SsimParams& p) {
    require_same_shape(a, b, "ssim");
    const Shape s = a.shape();
    if (!ssim_applicable(s, p.window)) {
        throw DimensionError("ssim: spatial dims " + s.str() + " smaller than the " + std::to_string(p.window) +
                             "x" + std::to_string(p.window) + " window");
    }
    const std::size_t win = p.window;
    std::vector<double> kernel(win * win);
    const double centre = (static_cast<double>(win) - 1.0) / 2.0;
    double ksum = 0.0;
    for (std::size_t u = 0; u < win; ++u) {
        for (std::size_t v = 0; v < win; ++v) {
            const double du = static_cast<double>(u) - centre, dv = static_cast<double>(v) - centre;
            kernel[u * win + v] = std::exp(-(du * du + dv * dv) / (2.0 * p.gaussian_sigma * p.gaussian_sigma));
            ksum += kernel[u * win + v];
        }
    }
    for (double& k : kernel) k /= ksum;

    const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
    const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
    const std::size_t oh = s.height - win + 1, ow = s.width - win + 1;
    double total = 0.0;
    for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t h = 0; h < oh; ++h) {
            for (std::size_t w = 0; w < ow; ++w) {
                double ma = 0.0, mb = 0.0;
                for (std::size_t u = 0; u < win; ++u) {
                    for (std::size_t v = 0; v < win; ++v) {
                        const double k = kernel[u * win + v];
                        ma += k * a.at(c, h + u, w + v);
                        mb += k * b.at(c, h + u, w + v);
                    }
                }
                double vaa = 0.0, vbb = 0.0, vab = 0.0;
                for (std::size_t u = 0; u < win; ++u) {
                    for (std::size_t v = 0; v < win; ++v) {
                        const double k = kernel[u * win + v];
                        const double da = a.at(c, h + u, w + v) - ma;
                        const double db = b.at(c, h + u, w + v) - mb;
                        vaa += k * da * da;
                        vbb += k * db * db;
                        vab += k * da * db;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
            }
        }
    }
    return total / static_cast<double>(s.channels * oh * ow);
}

namespace {

double distance(const Latent& x, const Latent& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return std::sqrt(s);
}

void check_sets(std::span<const Latent> a, std::span<const Latent> b) {
    if (a.empty() || b.empty()) throw ConfigError("energy_distance: both sample sets must be nonempty");
    for (const auto& x : a) require_same_shape(x, a[0], "energy_distance");
    for (const auto& x : b) require_same_shape(x, a[0], "energy_distance");
}

// Mean pairwise distance between x and y, one partial sum per row of x,
// rows summed in order afterwards.
double mean_pairwise(std::span<const Latent> x, std::span<const Latent> y) {
    std::vector<double> rows(x.size(), 0.0);
    const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) if (n * static_cast<std::ptrdiff_t>(y.size()) > 4096)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (const auto& yj : y) acc += distance(x[static_cast<std::size_t>(i)], yj);
        rows[static_cast<std::size_t>(i)] = acc;
    }
    double total = 0.0;
    for (double r : rows) total += r;
    return total / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

}  // namespace

double energy_distance(std::span<const Latent> a, std::span<const Latent> b) {
    check_sets(a, b);
    return 2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b);
}

namespace serial {

double energy_distance(std::span<const Latent> a, std::span<const Latent> b) {
    check_sets(a, b);
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (const auto& x : a)
        for (const auto& y : b) ab += distance(x, y);
    for (const auto& x : a)
        for (const auto& y : a) aa += distance(x, y);
    for (const auto& x : b)
        for (const auto& y : b) bb += distance(x, y);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    return 2.0 * ab / (na * nb) - aa / (na * na) - bb / (nb * nb);
}

}  // namespace serial

BackgroundDisplacement background_displacement(const Latent& x0_src, const Latent& x_edited,
                                               const ChannelMap& edit_mask) {
    require_same_shape(x0_src, x_edited, "background_displacement");
    const Shape s = x0_src.shape();
    if (edit_mask.height() != s.height || edit_mask.width() != s.width) {
        throw DimensionError("background_displacement: mask is not (H, W) of the latent");
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t l = 0; l < s.locations(); ++l) {
        const double m = edit_mask[l];
        if (m != 0.0 && m != 1.0) throw DomainError("background_displacement: mask must be binary");
        if (m == 1.0) continue;
        for (std::size_t c = 0; c < s.channels; ++c) {
            sum += std::abs(x_edited[c * s.locations() + l] - x0_src[c * s.locations() + l]);
            ++count;
        }
    }
    if (count == 0) return {0.0, true};
    return {sum / static_cast<double>(count), false};
}

const std::vector<std::string>& metric_csv_columns() {
    static const std::vector<std::string> cols{"method",   "eta_dec", "seeds", "failures",
                                               "mse",      "psnr",    "ssim",  "energy_distance_to_target",
                                               "background_displacement", "step_count"};
    return cols;
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << "# splitflow metric-report v1; energy_distance_to_target and background_displacement are proxy metrics\n";
    const auto& cols = metric_csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << "\n";
    os.precision(10);
    auto num = [&](double v) {
        if (std::isinf(v)) os << (v > 0 ? "inf" : "-inf");
        else os << v;
    };
    for (const auto& r : rows) {
        os << r.method << "," << r.eta_dec << "," << r.seeds << "," << r.failures << ",";
        num(r.mse);
        os << ",";
        num(r.psnr);
        os << ",";
        if (r.ssim) num(*r.ssim);
        else os << "n/a";
        os << ",";
        num(r.energy_distance_to_target);
        os << ",";
        num(r.background_displacement);
        os << ",";
        num(r.step_count);
        os << "\n";
    }
    return os.str();
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row = {{"method", r.method},
                              {"eta_dec", r.eta_dec},
                              {"seeds", r.seeds},
                              {"failures", r.failures},
                              {"mse", r.mse},
                              {"psnr", std::isinf(r.psnr) ? nlohmann::json("inf") : nlohmann::json(r.psnr)},
                              {"ssim", r.ssim ? nlohmann::json(*r.ssim) : nlohmann::json("n/a")},
                              {"energy_distance_to_target", r.energy_distance_to_target},
                              {"background_displacement", r.background_displacement},
                              {"step_count", r.step_count}};
        if (!r.error.empty()) row["error"] = r.error;
        rows_json.push_back(std::move(row));
    }
    return {{"format", "splitflow-metric-report"},
            {"version", 1},
            {"proxy_metrics", {"energy_distance_to_target", "background_displacement"}},
            {"config_fingerprint", config_fingerprint},
            {"seeds", seeds},
            {"rows", rows_json}};
}

}  // namespace splitflow
