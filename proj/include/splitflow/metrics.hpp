// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitflow/latent.hpp"

namespace splitflow {

double mse(const Latent& a, const Latent& b);

/// 10 log10(peak^2 / mse); +infinity when the inputs are identical.
double psnr(const Latent& a, const Latent& b, double peak);

struct SsimParams {
    std::size_t window = 7;
    double gaussian_sigma = 1.5;
    double peak = 1.0;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean local SSIM over every channel and every fully contained window
/// position, with a normalized Gaussian window. Throws DimensionError when
/// H or W is smaller than the window.
double ssim(const Latent& a, const Latent& b, const SsimParams& params = {});

/// True when the spatial extent admits the SSIM window.
bool ssim_applicable(const Shape& shape, std::size_t window = 7) noexcept;

/// V-statistic 2 E|A - B| - E|A - A'| - E|B - B'| over all ordered pairs.
double energy_distance(std::span<const Latent> a, std::span<const Latent> b);

namespace serial {
double energy_distance(std::span<const Latent> a, std::span<const Latent> b);
}

struct BackgroundDisplacement {
    double value = 0.0;
    /// Set when the mask marks everything as editable; value is then 0.
    bool empty_background = false;
};

/// Mean |x_edited - x0_src| over every channel at locations where the mask is 0.
BackgroundDisplacement background_displacement(const Latent& x0_src, const Latent& x_edited,
                                               const ChannelMap& edit_mask);

/// One aggregated row of a benchmark.
struct MetricRow {
    std::string method;
    int eta_dec = 0;
    std::size_t seeds = 0;
    std::size_t failures = 0;
    double mse = 0.0;
    double psnr = 0.0;
    std::optional<double> ssim;  // empty when the scene is too small for the window
    double energy_distance_to_target = 0.0;
    double background_displacement = 0.0;
    double step_count = 0.0;
    std::string error;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    std::string config_fingerprint;
    std::vector<std::uint64_t> seeds;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

/// Column names of MetricReport::to_csv, in order.
const std::vector<std::string>& metric_csv_columns();

}  // namespace splitflow
