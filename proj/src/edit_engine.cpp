// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitflow/edit_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splitflow/rng.hpp"

namespace splitflow {

void EditSchedule::validate() const {
    if (total_steps < 1) throw ConfigError("schedule: T must be at least 1");
    if (!(1 <= eta_dec && eta_dec < eta_max && eta_max <= total_steps)) {
        throw ConfigError("schedule: require 1 <= eta_dec < eta_max <= T, got T=" + std::to_string(total_steps) +
                          " eta_max=" + std::to_string(eta_max) + " eta_dec=" + std::to_string(eta_dec));
    }
}

std::string to_string(Aggregation a) {
    switch (a) {
        case Aggregation::ltp_vfa: return "ltp+vfa";
        case Aggregation::ltp: return "ltp";
        case Aggregation::avg: return "avg";
    }
    return "unknown";
}

Aggregation aggregation_from_string(const std::string& s) {
    if (s == "ltp+vfa" || s == "ltp_vfa" || s == "splitflow") return Aggregation::ltp_vfa;
    if (s == "ltp") return Aggregation::ltp;
    if (s == "avg") return Aggregation::avg;
    throw ConfigError("unknown aggregation '" + s + "' (expected avg, ltp or ltp+vfa)");
}

void EditConfig::validate() const {
    if (!(cfg_src >= 0.0 && cfg_tgt >= 0.0 && cfg_sub >= 0.0)) throw ConfigError("edit: guidance scales must be >= 0");
    if (max_sub_prompts < 1) throw ConfigError("edit: max_sub_prompts must be >= 1");
    if (!(tol >= 0.0)) throw ConfigError("edit: tol must be >= 0");
}

nlohmann::json RunReport::to_json() const {
    nlohmann::json steps_json = nlohmann::json::array();
    for (const auto& s : steps) {
        steps_json.push_back({{"i", s.i},
                              {"sigma", s.sigma},
                              {"phase", s.phase},
                              {"delta_norms", s.delta_norms},
                              {"eval_count", s.eval_count}});
    }
    nlohmann::json weights_json = nlohmann::json::array();
    for (std::size_t k = 0; k < weights.size(); ++k) {
        weights_json.push_back({{"flow", k}, {"min", weights[k].min}, {"mean", weights[k].mean}, {"max", weights[k].max}});
    }
    return {{"format", "splitflow-run-report"},
            {"version", 1},
            {"method", method},
            {"num_sub_flows", num_sub_flows},
            {"eval_count", eval_count},
            {"aggregation_eval_count", aggregation_eval_count},
            {"weights", weights_json},
            {"steps", steps_json},
            {"final_latent", final_latent}};
}

Latent velocity_delta(const FieldSpec& field, const Latent& x_tgt_est, const Latent& x_src, double sigma,
                      const Condition& cond_tgt, const Condition& cond_src, double cfg_tgt, double cfg_src) {
    require_same_shape(x_tgt_est, x_src, "velocity_delta");
    Latent v = eval_cfg(field, x_tgt_est, sigma, cond_tgt, cfg_tgt);
    v -= eval_cfg(field, x_src, sigma, cond_src, cfg_src);
    return v;
}

Latent step_noise(const Shape& shape, std::uint64_t seed, int i, std::size_t flow) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), flow));
    return gaussian_latent(shape, rng);
}

Latent flowedit_step(const FieldSpec& field, const Latent& x_fe, const Latent& x0_src, const Latent& x_src,
                     const Condition& cond_src, const Condition& cond_tgt, double sigma, double delta,
                     double cfg_tgt, double cfg_src, double* delta_norm) {
    Latent x_tgt_est = x_fe + x_src;
    x_tgt_est -= x0_src;
    const Latent v = velocity_delta(field, x_tgt_est, x_src, sigma, cond_tgt, cond_src, cfg_tgt, cfg_src);
    if (delta_norm) *delta_norm = v.norm();
    Latent out = x_fe;
    out.axpy(delta, v);
    return out;
}

namespace {

void require_finite(const Latent& x, int step, const char* what) {
    if (!x.all_finite()) {
        throw NumericError(std::string(what) + ": non-finite latent at step " + std::to_string(step), step);
    }
}

Latent source_at(const Latent& x0_src, const Latent& eps, double sigma, bool clean) {
    return clean ? x0_src : noise_interpolate(x0_src, eps, sigma);
}

void unified_phase(const FieldSpec& field, Latent& x_fe, const Latent& x0_src, const Condition& cond_src,
                   const Condition& cond_tgt, const EditSchedule& schedule, const EditConfig& config, int from,
                   std::size_t& eval_count, RunReport* report) {
    for (int i = from; i >= 1; --i) {
        const double sigma = schedule.sigma(i);
        const double delta = schedule.sigma(i - 1) - sigma;
        const Latent eps = step_noise(x0_src.shape(), config.seed, i, 0);
        const Latent x_src = noise_interpolate(x0_src, eps, sigma);
        double norm = 0.0;
        x_fe = flowedit_step(field, x_fe, x0_src, x_src, cond_src, cond_tgt, sigma, delta, config.cfg_tgt,
                             config.cfg_src, &norm);
        ++eval_count;
        require_finite(x_fe, i, "edit");
        if (report) report->steps.push_back({i, sigma, "unified", {norm}, eval_count});
    }
}

WeightSummary summarize(const ChannelMap& w) {
    WeightSummary s{w[0], 0.0, w[0]};
    for (std::size_t i = 0; i < w.size(); ++i) {
        s.min = std::min(s.min, w[i]);
        s.max = std::max(s.max, w[i]);
        s.mean += w[i];
    }
    s.mean /= static_cast<double>(w.size());
    return s;
}

}  // namespace

Latent flowedit_run(const FieldSpec& field, const Latent& x0_src, const Condition& cond_src,
                    const Condition& cond_tgt, const EditSchedule& schedule, const EditConfig& config,
                    RunReport* report) {
    schedule.validate();
    config.validate();
    if (report) {
        *report = RunReport{};
        report->method = "baseline";
    }
    Latent x_fe = x0_src;
    std::size_t evals = 0;
    unified_phase(field, x_fe, x0_src, cond_src, cond_tgt, schedule, config, schedule.eta_max, evals, report);
    if (report) report->eval_count = evals;
    return x_fe;
}

EditState decomposition_step(const FieldSpec& field, EditState state, const Latent& x0_src,
                             const Condition& cond_src, std::span<const Condition> sub_conds,
                             const Condition& cond_tgt, double sigma_i, double delta,
                             std::span<const Latent> eps_i, const EditConfig& config,
                             std::vector<double>* delta_norms) {
    const std::size_t N = sub_conds.size();
    if (N == 0) throw ConfigError("decomposition_step: no sub-conditions");
    if (state.x_fe_sub.size() != N) throw ConfigError("decomposition_step: state holds a different number of sub-flows");
    const std::size_t needed = config.share_eps_across_flows ? 1 : N + 1;
    if (eps_i.size() < needed) throw ConfigError("decomposition_step: not enough noise latents for the flows");
    for (const auto& x : state.x_fe_sub) require_same_shape(x, state.x_fe, "decomposition_step");

    std::vector<Latent> next(N + 1);
    std::vector<double> norms(N + 1, 0.0);
    const auto flows = static_cast<std::ptrdiff_t>(N + 1);
    // Flow 0 is the full-target trajectory, flow k > 0 is sub-flow k - 1.
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t f = 0; f < flows; ++f) {
        const auto k = static_cast<std::size_t>(f);
        const Latent& eps = eps_i[config.share_eps_across_flows ? 0 : k];
        const Latent x_src = source_at(x0_src, eps, sigma_i, config.fidelity_enhanced);
        if (k == 0) {
            next[0] = flowedit_step(field, state.x_fe, x0_src, x_src, cond_src, cond_tgt, sigma_i, delta,
                                    config.cfg_tgt, config.cfg_src, &norms[0]);
        } else {
            next[k] = flowedit_step(field, state.x_fe_sub[k - 1], x0_src, x_src, cond_src, sub_conds[k - 1], sigma_i,
                                    delta, config.cfg_sub, config.cfg_src, &norms[k]);
        }
    }
    state.x_fe = std::move(next[0]);
    for (std::size_t k = 0; k < N; ++k) state.x_fe_sub[k] = std::move(next[k + 1]);
    state.eval_count += N + 1;
    if (delta_norms) *delta_norms = std::move(norms);
    return state;
}

LtpResult ltp(std::span<const Latent> sub_latents, const Latent& target_latent, double tol) {
    if (sub_latents.empty()) throw ConfigError("ltp: no sub-latents");
    LtpResult r;
    r.projected.reserve(sub_latents.size());
    r.x_proj = Latent(target_latent.shape());
    for (const auto& x : sub_latents) {
        r.projected.push_back(project_onto(x, target_latent, tol));
        r.x_proj += r.projected.back();
    }
    r.x_proj *= 1.0 / static_cast<double>(sub_latents.size());
    return r;
}

std::vector<ChannelMap> softmax_weights(std::span<const ChannelMap> scores) {
    if (scores.empty()) throw ConfigError("softmax_weights: no scores");
    const std::size_t N = scores.size();
    const std::size_t H = scores[0].height(), W = scores[0].width();
    std::vector<ChannelMap> w(N, ChannelMap(H, W));
    for (std::size_t l = 0; l < H * W; ++l) {
        double amax = scores[0][l];
        for (std::size_t k = 1; k < N; ++k) amax = std::max(amax, scores[k][l]);
        double z = 0.0;
        for (std::size_t k = 0; k < N; ++k) {
            w[k][l] = std::exp(scores[k][l] - amax);
            z += w[k][l];
        }
        for (std::size_t k = 0; k < N; ++k) w[k][l] /= z;
    }
    return w;
}

namespace {

Latent weighted_sum(const std::vector<Latent>& g, const std::vector<ChannelMap>& w) {
    const Shape s = g[0].shape();
    Latent out(s);
    const std::size_t L = s.locations();
    for (std::size_t k = 0; k < g.size(); ++k) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            for (std::size_t l = 0; l < L; ++l) out[c * L + l] += w[k][l] * g[k][c * L + l];
        }
    }
    return out;
}

}  // namespace

VfaResult aggregate_velocities(std::vector<Latent> deltas, double tol) {
    const std::size_t N = deltas.size();
    if (N == 0) throw ConfigError("vfa: no velocity fields to aggregate");
    for (const auto& g : deltas) require_same_shape(g, deltas[0], "vfa");
    const Shape s = deltas[0].shape();

    std::vector<ChannelMap> scores(N, ChannelMap(s.height, s.width));
    for (std::size_t k = 0; k < N; ++k) {
        for (std::size_t j = k + 1; j < N; ++j) {
            const ChannelMap sim = cosine_similarity_map(deltas[k], deltas[j], tol);
            for (std::size_t l = 0; l < sim.size(); ++l) {
                scores[k][l] += sim[l];
                scores[j][l] += sim[l];
            }
        }
    }
    VfaResult r;
    r.weights = softmax_weights(scores);
    r.v_bar = weighted_sum(deltas, r.weights);
    r.deltas = std::move(deltas);
    return r;
}

VfaResult average_velocities(std::vector<Latent> deltas) {
    const std::size_t N = deltas.size();
    if (N == 0) throw ConfigError("vfa: no velocity fields to aggregate");
    for (const auto& g : deltas) require_same_shape(g, deltas[0], "vfa");
    const Shape s = deltas[0].shape();
    VfaResult r;
    r.weights.assign(N, ChannelMap(s.height, s.width, 1.0 / static_cast<double>(N)));
    r.v_bar = weighted_sum(deltas, r.weights);
    r.deltas = std::move(deltas);
    return r;
}

namespace {

std::vector<Latent> projected_deltas(const FieldSpec& field, std::span<const Latent> projected, const Latent& x_src,
                                     const Latent& x0_src, double sigma, std::span<const Condition> sub_conds,
                                     const Condition& cond_src, const EditConfig& config) {
    const std::size_t N = projected.size();
    if (N == 0) throw ConfigError("vfa: no projected latents");
    if (sub_conds.size() != N) throw ConfigError("vfa: one sub-condition per projected latent expected");
    std::vector<Latent> g(N);
    const auto n = static_cast<std::ptrdiff_t>(N);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t f = 0; f < n; ++f) {
        const auto k = static_cast<std::size_t>(f);
        Latent est = projected[k] + x_src;
        est -= x0_src;
        g[k] = velocity_delta(field, est, x_src, sigma, sub_conds[k], cond_src, config.cfg_sub, config.cfg_src);
    }
    return g;
}

}  // namespace

VfaResult vfa(const FieldSpec& field, std::span<const Latent> projected, const Latent& x_src, const Latent& x0_src,
              double sigma, std::span<const Condition> sub_conds, const Condition& cond_src,
              const EditConfig& config) {
    return aggregate_velocities(projected_deltas(field, projected, x_src, x0_src, sigma, sub_conds, cond_src, config),
                                config.tol);
}

Latent aggregate_update(const Latent& x_proj, const Latent& v_bar, double delta) {
    require_same_shape(x_proj, v_bar, "aggregate_update");
    Latent out = x_proj;
    out.axpy(delta, v_bar);
    return out;
}

std::size_t expected_eval_count(std::size_t n_sub, const EditSchedule& schedule) noexcept {
    return n_sub * static_cast<std::size_t>(schedule.eta_max - schedule.eta_dec) +
           static_cast<std::size_t>(schedule.eta_max);
}

Latent splitflow_run(const FieldSpec& field, const Latent& x0_src, const Condition& cond_src,
                     std::span<const Condition> sub_conds, const Condition& cond_tgt, const EditSchedule& schedule,
                     const EditConfig& config, RunReport* report) {
    schedule.validate();
    config.validate();
    const std::size_t N = sub_conds.size();
    if (N == 0) throw ConfigError("splitflow: at least one sub-condition is required");
    if (N > config.max_sub_prompts) {
        throw ConfigError("splitflow: " + std::to_string(N) + " sub-conditions exceed the cap of " +
                          std::to_string(config.max_sub_prompts));
    }
    if (report) {
        *report = RunReport{};
        report->method = "splitflow/" + to_string(config.aggregation);
        report->num_sub_flows = N;
    }

    EditState state;
    state.x_fe = x0_src;
    state.x_fe_sub.assign(N, x0_src);
    const Shape shape = x0_src.shape();

    // Decomposition phase: the sub-flows and the full-target flow advance together.
    for (int i = schedule.eta_max; i > schedule.eta_dec; --i) {
        const double sigma = schedule.sigma(i);
        const double delta = schedule.sigma(i - 1) - sigma;
        std::vector<Latent> eps;
        const std::size_t draws = config.share_eps_across_flows ? 1 : N + 1;
        for (std::size_t k = 0; k < draws; ++k) eps.push_back(step_noise(shape, config.seed, i, k));
        std::vector<double> norms;
        state = decomposition_step(field, std::move(state), x0_src, cond_src, sub_conds, cond_tgt, sigma, delta, eps,
                                   config, &norms);
        state.step = i;
        require_finite(state.x_fe, i, "splitflow");
        for (const auto& x : state.x_fe_sub) require_finite(x, i, "splitflow");
        if (report) report->steps.push_back({i, sigma, "decomposition", std::move(norms), state.eval_count});
    }

    // Merge at eta_dec: this step of the unified trajectory starts from the
    // aggregated latent and uses the aggregated velocity.
    {
        const int i = schedule.eta_dec;
        const double sigma = schedule.sigma(i);
        const double delta = schedule.sigma(i - 1) - sigma;
        const Latent eps = step_noise(shape, config.seed, i, 0);
        const Latent x_src = source_at(x0_src, eps, sigma, config.fidelity_enhanced);

        Latent x_proj;
        std::vector<Latent> anchors;
        if (config.aggregation == Aggregation::avg) {
            x_proj = Latent(shape);
            for (const auto& x : state.x_fe_sub) x_proj += x;
            x_proj *= 1.0 / static_cast<double>(N);
            anchors = state.x_fe_sub;
        } else {
            LtpResult p = ltp(state.x_fe_sub, state.x_fe, config.tol);
            x_proj = std::move(p.x_proj);
            anchors = std::move(p.projected);
        }
        std::vector<Latent> g =
            projected_deltas(field, anchors, x_src, x0_src, sigma, sub_conds, cond_src, config);
        VfaResult agg = config.aggregation == Aggregation::ltp_vfa ? aggregate_velocities(std::move(g), config.tol)
                                                                   : average_velocities(std::move(g));
        state.x_fe = aggregate_update(x_proj, agg.v_bar, delta);
        state.x_fe_sub.clear();
        state.eval_count += 1;
        require_finite(state.x_fe, i, "splitflow");
        if (report) {
            std::vector<double> norms{agg.v_bar.norm()};
            for (const auto& gk : agg.deltas) norms.push_back(gk.norm());
            report->steps.push_back({i, sigma, "aggregation", std::move(norms), state.eval_count});
            for (const auto& w : agg.weights) report->weights.push_back(summarize(w));
            report->aggregation_eval_count = N;
        }
    }

    unified_phase(field, state.x_fe, x0_src, cond_src, cond_tgt, schedule, config, schedule.eta_dec - 1,
                  state.eval_count, report);
    if (report) report->eval_count = state.eval_count;
    return std::move(state.x_fe);
}

VfaMargins check_vfa_inequality(const std::vector<std::vector<double>>& unit_vectors) {
    const std::size_t K = unit_vectors.size();
    if (K == 0) throw DomainError("check_vfa_inequality: empty vector set");
    const std::size_t D = unit_vectors[0].size();
    for (const auto& g : unit_vectors) {
        if (g.size() != D) throw DimensionError("check_vfa_inequality: vectors differ in dimension");
        const double n = std::sqrt(std::inner_product(g.begin(), g.end(), g.begin(), 0.0));
        if (std::abs(n - 1.0) > 1e-9) throw DomainError("check_vfa_inequality: input vector is not unit-norm");
    }

    VfaMargins m;
    m.scores.assign(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < K; ++j) {
            m.scores[k] += std::inner_product(unit_vectors[k].begin(), unit_vectors[k].end(), unit_vectors[j].begin(), 0.0);
        }
    }
    const double amax = *std::max_element(m.scores.begin(), m.scores.end());
    double zs = 0.0;
    for (double a : m.scores) zs += std::exp(a - amax);
    const double log_z = amax + std::log(zs);
    const double log_z_over_k = log_z - std::log(static_cast<double>(K));
    m.weights.resize(K);
    for (std::size_t k = 0; k < K; ++k) m.weights[k] = std::exp(m.scores[k] - log_z);

    const double mean_a = std::accumulate(m.scores.begin(), m.scores.end(), 0.0) / static_cast<double>(K);
    double wa = 0.0;
    for (std::size_t k = 0; k < K; ++k) wa += m.weights[k] * m.scores[k];
    m.gibbs = wa - log_z_over_k;
    m.jensen = log_z_over_k - mean_a;

    std::vector<double> g_bar(D, 0.0), g_avg(D, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t d = 0; d < D; ++d) {
            g_bar[d] += m.weights[k] * unit_vectors[k][d];
            g_avg[d] += unit_vectors[k][d] / static_cast<double>(K);
        }
    }
    m.lhs = std::inner_product(g_bar.begin(), g_bar.end(), g_avg.begin(), 0.0);
    m.rhs = std::inner_product(g_avg.begin(), g_avg.end(), g_avg.begin(), 0.0);
    m.margin = m.lhs - m.rhs;
    return m;
}

}  // namespace splitflow
