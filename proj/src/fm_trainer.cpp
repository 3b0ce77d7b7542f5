// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitflow/fm_trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "splitflow/latent_io.hpp"

namespace splitflow {

namespace {

// Gradients are accumulated per fixed-size chunk and the chunks summed in
// order, so results do not depend on the thread count.
constexpr std::size_t kChunk = 16;

}  // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (steps == 0) throw ConfigError("train: steps must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train: Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
    if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) throw ConfigError("train: cond_dropout must lie in [0, 1]");
}

FmLoss fm_loss(const FieldSpec& field, const FmBatch& batch) {
    const std::size_t B = batch.size();
    if (B == 0) throw ConfigError("fm_loss: empty batch");
    if (batch.cond.size() != B || batch.eps.size() != B || batch.sigma.size() != B) {
        throw DimensionError("fm_loss: batch components have different lengths");
    }
    for (std::size_t b = 0; b < B; ++b) {
        require_same_shape(batch.x0[b], batch.eps[b], "fm_loss");
        if (batch.x0[b].shape() != field.input_shape) throw DimensionError("fm_loss: sample shape != field shape");
    }
    const double denom = static_cast<double>(B * field.input_shape.size());
    const bool is_mlp = field.kind() == FieldKind::mlp;

    const std::size_t chunks = (B + kChunk - 1) / kChunk;
    std::vector<double> chunk_loss(chunks, 0.0);
    std::vector<MlpParams> chunk_grads;
    if (is_mlp) chunk_grads.assign(chunks, field.mlp().zeros_like());

    const auto n_chunks = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ci = 0; ci < n_chunks; ++ci) {
        const auto k = static_cast<std::size_t>(ci);
        const std::size_t end = std::min(B, (k + 1) * kChunk);
        for (std::size_t b = k * kChunk; b < end; ++b) {
            const Latent xs = noise_interpolate(batch.x0[b], batch.eps[b], batch.sigma[b]);
            const Latent target = batch.eps[b] - batch.x0[b];
            if (is_mlp) {
                MlpForward f = mlp_forward(field.mlp(), pack_mlp_input(xs, batch.sigma[b], batch.cond[b]));
                std::vector<double> upstream(f.output.size());
                for (std::size_t i = 0; i < f.output.size(); ++i) {
                    const double r = f.output[i] - target[i];
                    chunk_loss[k] += r * r;
                    upstream[i] = 2.0 * r / denom;
                }
                mlp_backward_accumulate(field.mlp(), f.cache, upstream, chunk_grads[k]);
            } else {
                const Latent v = eval(field, xs, batch.sigma[b], batch.cond[b]);
                for (std::size_t i = 0; i < v.size(); ++i) {
                    const double r = v[i] - target[i];
                    chunk_loss[k] += r * r;
                }
            }
        }
    }

    FmLoss out;
    for (double l : chunk_loss) out.loss += l;
    out.loss /= denom;
    if (is_mlp) {
        MlpParams g = std::move(chunk_grads[0]);
        for (std::size_t k = 1; k < chunks; ++k) {
            for (std::size_t l = 0; l < g.layers.size(); ++l) {
                auto& dst = g.layers[l];
                const auto& src = chunk_grads[k].layers[l];
                for (std::size_t i = 0; i < dst.weight.size(); ++i) dst.weight[i] += src.weight[i];
                for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
            }
        }
        out.grads = std::move(g);
    }
    return out;
}

FmBatch draw_batch(const TrainingSource& source, const TrainConfig& cfg, Rng& rng) {
    FmBatch batch;
    std::bernoulli_distribution drop(cfg.cond_dropout);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const Shape shape = source.shape();
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        auto [x0, cond] = source.draw(rng);
        if (drop(rng)) cond = Condition::null(source.cond_dim());
        batch.x0.push_back(std::move(x0));
        batch.cond.push_back(std::move(cond));
        batch.eps.push_back(gaussian_latent(shape, rng));
        batch.sigma.push_back(u01(rng));
    }
    return batch;
}

FmBatch draw_batch(const SceneDataset& data, const TrainConfig& cfg, Rng& rng) {
    return draw_batch(SceneSource(data), cfg, rng);
}

TrainResult train(FieldSpec field, const TrainingSource& source, const TrainConfig& cfg) {
    cfg.validate();
    if (field.kind() != FieldKind::mlp) throw ConfigError("train: only the mlp backend is trainable");
    if (source.shape() != field.input_shape || source.cond_dim() != field.cond_dim) {
        throw DimensionError("train: dataset shape/condition dim do not match the field");
    }
    MlpParams& params = field.mlp();
    const std::size_t P = params.param_count();
    std::vector<double> theta = params.flatten();
    std::vector<double> m(P, 0.0), v(P, 0.0);

    Rng rng(cfg.seed);
    TrainResult result;
    result.loss_curve.reserve(cfg.steps);
    double b1t = 1.0, b2t = 1.0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const FmBatch batch = draw_batch(source, cfg, rng);
        const FmLoss l = fm_loss(field, batch);
        if (!std::isfinite(l.loss)) {
            throw TrainingError("training diverged: loss is not finite at step " + std::to_string(step),
                                static_cast<int>(step));
        }
        result.loss_curve.push_back(l.loss);
        const std::vector<double> g = l.grads->flatten();
        double lr = cfg.learning_rate;
        if (cfg.cosine_decay) {
            lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(cfg.steps)));
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for (std::size_t i = 0; i < P; ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / (1.0 - b1t);
            const double vhat = v[i] / (1.0 - b2t);
            theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
        params.assign(theta);
    }
    round_params_to_float32(field);
    result.field = std::move(field);
    return result;
}

TrainResult train(FieldSpec field, const SceneDataset& data, const TrainConfig& cfg) {
    return train(std::move(field), SceneSource(data), cfg);
}

Latent generate_from(const FieldSpec& field, const Condition& cond, std::size_t steps, Latent noise) {
    if (steps == 0) throw ConfigError("generate: steps must be at least 1");
    Latent x = std::move(noise);
    const double dt = 1.0 / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const double sigma = 1.0 - static_cast<double>(k) / static_cast<double>(steps);
        x.axpy(-dt, eval(field, x, sigma, cond));
    }
    return x;
}

Latent generate(const FieldSpec& field, const Condition& cond, std::size_t steps, std::uint64_t seed) {
    Rng rng(seed);
    return generate_from(field, cond, steps, gaussian_latent(field.input_shape, rng));
}

std::vector<Latent> generate_many(const FieldSpec& field, const Condition& cond, std::size_t steps, std::size_t n,
                                  std::uint64_t seed) {
    std::vector<Latent> out(n);
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < count; ++k) {
        out[static_cast<std::size_t>(k)] = generate(field, cond, steps, derive_seed(seed, static_cast<std::uint64_t>(k)));
    }
    return out;
}

void write_loss_csv(const std::vector<double>& curve, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "# splitflow loss-curve v1\n";
    os << "step,loss\n";
    os.precision(17);
    for (std::size_t i = 0; i < curve.size(); ++i) os << i << "," << curve[i] << "\n";
    detail::write_text(path, os.str());
}

}  // namespace splitflow
