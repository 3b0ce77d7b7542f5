// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitflow/latent.hpp"
#include "splitflow/velocity_field.hpp"

namespace splitflow {

/// Timestep grid sigma(i) = i / T. Editing starts at i = eta_max and the
/// sub-flows are merged at i = eta_dec.
struct EditSchedule {
    int total_steps = 50;
    int eta_max = 33;
    int eta_dec = 28;

    double sigma(int i) const noexcept { return static_cast<double>(i) / static_cast<double>(total_steps); }
    double sigma_start() const noexcept { return sigma(eta_max); }

    /// 1 <= eta_dec < eta_max <= T. Throws ConfigError.
    void validate() const;
};

/// How the sub-trajectories are merged at eta_dec.
enum class Aggregation {
    ltp_vfa,  // projection onto the target trajectory + similarity-weighted velocities
    ltp,      // projection + uniform velocity weights
    avg,      // plain mean of the sub-latents + uniform velocity weights
};

std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

struct EditConfig {
    double cfg_src = 3.5;
    double cfg_tgt = 13.5;
    double cfg_sub = 13.5;
    bool fidelity_enhanced = false;
    bool share_eps_across_flows = true;
    std::uint64_t seed = 0;
    std::size_t max_sub_prompts = 3;
    Aggregation aggregation = Aggregation::ltp_vfa;
    double tol = kDefaultNormTol;

    void validate() const;
};

/// Per-step record of a run.
struct StepRecord {
    int i = 0;
    double sigma = 0.0;
    std::string phase;                 // "decomposition", "aggregation" or "unified"
    std::vector<double> delta_norms;   // target flow first, then one per sub-flow
    std::size_t eval_count = 0;        // cumulative velocity-delta evaluations
};

struct WeightSummary {
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;
};

struct RunReport {
    std::string method;
    std::size_t num_sub_flows = 0;
    std::vector<StepRecord> steps;
    std::vector<WeightSummary> weights;  // one per sub-flow, empty for the baseline
    /// Velocity-delta evaluations along the flows: N * (eta_max - eta_dec) + eta_max for a split run.
    std::size_t eval_count = 0;
    /// Extra evaluations at the projected latents during aggregation.
    std::size_t aggregation_eval_count = 0;
    std::string final_latent;

    nlohmann::json to_json() const;
};

/// Mutable state of a split run during the decomposition phase.
struct EditState {
    Latent x_fe;
    std::vector<Latent> x_fe_sub;
    int step = 0;
    std::size_t eval_count = 0;
};

/// eval_cfg(x_tgt_est, cond_tgt, cfg_tgt) - eval_cfg(x_src, cond_src, cfg_src)
Latent velocity_delta(const FieldSpec& field, const Latent& x_tgt_est, const Latent& x_src, double sigma,
                      const Condition& cond_tgt, const Condition& cond_src, double cfg_tgt, double cfg_src);

/// Noise for step i of flow k (k = 0 is the target flow).
Latent step_noise(const Shape& shape, std::uint64_t seed, int i, std::size_t flow);

/// One inversion-free step: x_fe + (sigma(i-1) - sigma(i)) * v_delta evaluated
/// at x_tgt_est = x_fe + x_src - x0_src.
Latent flowedit_step(const FieldSpec& field, const Latent& x_fe, const Latent& x0_src, const Latent& x_src,
                     const Condition& cond_src, const Condition& cond_tgt, double sigma, double delta,
                     double cfg_tgt, double cfg_src, double* delta_norm = nullptr);

/// Inversion-free editing along the full target condition, i = eta_max .. 1.
Latent flowedit_run(const FieldSpec& field, const Latent& x0_src, const Condition& cond_src,
                    const Condition& cond_tgt, const EditSchedule& schedule, const EditConfig& config,
                    RunReport* report = nullptr);

/// Advances every sub-trajectory under its sub-condition and the target
/// trajectory under cond_tgt by one step of size delta at noise level sigma_i.
EditState decomposition_step(const FieldSpec& field, EditState state, const Latent& x0_src,
                             const Condition& cond_src, std::span<const Condition> sub_conds,
                             const Condition& cond_tgt, double sigma_i, double delta,
                             std::span<const Latent> eps_i, const EditConfig& config,
                             std::vector<double>* delta_norms = nullptr);

struct LtpResult {
    std::vector<Latent> projected;
    Latent x_proj;
};

/// Projects each sub-latent onto the target latent per location and averages.
LtpResult ltp(std::span<const Latent> sub_latents, const Latent& target_latent, double tol = kDefaultNormTol);

struct VfaResult {
    Latent v_bar;
    std::vector<ChannelMap> weights;
    std::vector<Latent> deltas;
};

/// Similarity-weighted aggregation of already computed velocity deltas g_k:
/// a_k = sum_{j != k} cos(g_k, g_j), w = softmax_k(a) per location, v_bar = sum_k w_k g_k.
VfaResult aggregate_velocities(std::vector<Latent> deltas, double tol = kDefaultNormTol);

/// Same combination with uniform weights 1/N.
VfaResult average_velocities(std::vector<Latent> deltas);

/// Evaluates g_k = velocity_delta at x_tgt_est = projected[k] + x_src - x0_src
/// under sub_conds[k], then aggregates.
VfaResult vfa(const FieldSpec& field, std::span<const Latent> projected, const Latent& x_src, const Latent& x0_src,
              double sigma, std::span<const Condition> sub_conds, const Condition& cond_src,
              const EditConfig& config);

/// x_proj + delta * v_bar
Latent aggregate_update(const Latent& x_proj, const Latent& v_bar, double delta);

/// Softmax weights over per-location scores; `scores` holds N maps.
std::vector<ChannelMap> softmax_weights(std::span<const ChannelMap> scores);

/// Full split run: decomposition phase, merge at eta_dec, unified phase.
Latent splitflow_run(const FieldSpec& field, const Latent& x0_src, const Condition& cond_src,
                     std::span<const Condition> sub_conds, const Condition& cond_tgt, const EditSchedule& schedule,
                     const EditConfig& config, RunReport* report = nullptr);

/// N * (eta_max - eta_dec) + eta_max
std::size_t expected_eval_count(std::size_t n_sub, const EditSchedule& schedule) noexcept;

struct VfaMargins {
    double margin = 0.0;    // <g_bar, g_avg> - |g_avg|^2
    double gibbs = 0.0;     // sum_k w_k a_k - log(Z / K)
    double jensen = 0.0;    // log(Z / K) - mean(a)
    double lhs = 0.0;       // <g_bar, g_avg>
    double rhs = 0.0;       // |g_avg|^2
    std::vector<double> weights;
    std::vector<double> scores;
};

/// Checks <sum_k w_k g_k, g_avg> >= |g_avg|^2 for unit vectors with
/// w = softmax(a), a_k = sum_j <g_k, g_j>. Throws DomainError if an input is
/// not unit-norm within 1e-9.
VfaMargins check_vfa_inequality(const std::vector<std::vector<double>>& unit_vectors);

}  // namespace splitflow
