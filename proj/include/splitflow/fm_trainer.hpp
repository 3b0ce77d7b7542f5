// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "splitflow/latent.hpp"
#include "splitflow/rng.hpp"
#include "splitflow/scene.hpp"
#include "splitflow/velocity_field.hpp"

namespace splitflow {

struct TrainConfig {
    std::size_t batch_size = 128;
    std::size_t steps = 2000;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double cond_dropout = 0.1;
    std::uint64_t seed = 0;
    /// Cosine-decays the learning rate to zero over the run; off means constant.
    bool cosine_decay = false;

    void validate() const;
};

/// One rectified-flow training batch: clean samples, their conditions,
/// paired noise and noise levels.
struct FmBatch {
    std::vector<Latent> x0;
    std::vector<Condition> cond;
    std::vector<Latent> eps;
    std::vector<double> sigma;

    std::size_t size() const noexcept { return x0.size(); }
};

struct FmLoss {
    double loss = 0.0;
    /// Parameter gradient; present only for the mlp backend.
    std::optional<MlpParams> grads;
};

/// Mean over batch and coordinates of (v(x_sigma, sigma, c) - (eps - x0))^2,
/// x_sigma = (1 - sigma) x0 + sigma eps.
FmLoss fm_loss(const FieldSpec& field, const FmBatch& batch);

/// Draws a batch from the scene; each condition is replaced by the null
/// condition with probability cfg.cond_dropout, sigma ~ U[0, 1].
FmBatch draw_batch(const SceneDataset& data, const TrainConfig& cfg, Rng& rng);

/// Source of (x0, condition) pairs for training.
class TrainingSource {
public:
    virtual ~TrainingSource() = default;
    virtual std::size_t cond_dim() const = 0;
    virtual Shape shape() const = 0;
    virtual std::pair<Latent, Condition> draw(Rng& rng) const = 0;
};

class SceneSource final : public TrainingSource {
public:
    explicit SceneSource(const SceneDataset& data) : data_(data) {}
    std::size_t cond_dim() const override { return data_.cond_dim(); }
    Shape shape() const override { return data_.shape(); }
    std::pair<Latent, Condition> draw(Rng& rng) const override { return data_.draw(rng); }

private:
    const SceneDataset& data_;
};

/// Always yields the same pair; used for overfit checks.
class FixedSource final : public TrainingSource {
public:
    FixedSource(Latent x0, Condition cond) : x0_(std::move(x0)), cond_(std::move(cond)) {}
    std::size_t cond_dim() const override { return cond_.dim(); }
    Shape shape() const override { return x0_.shape(); }
    std::pair<Latent, Condition> draw(Rng&) const override { return {x0_, cond_}; }

private:
    Latent x0_;
    Condition cond_;
};

FmBatch draw_batch(const TrainingSource& source, const TrainConfig& cfg, Rng& rng);

struct TrainResult {
    FieldSpec field;
    std::vector<double> loss_curve;
};

/// Adam on the rectified-flow loss. The returned parameters are rounded to
/// float32 so the field persists exactly. Throws TrainingError on a
/// non-finite loss.
TrainResult train(FieldSpec field, const TrainingSource& source, const TrainConfig& cfg);
TrainResult train(FieldSpec field, const SceneDataset& data, const TrainConfig& cfg);

/// Euler integration from sigma = 1 (noise drawn from seed) to sigma = 0:
/// x <- x - (1/steps) * v(x, sigma, cond).
Latent generate(const FieldSpec& field, const Condition& cond, std::size_t steps, std::uint64_t seed);

/// Same as generate, starting from the given noise.
Latent generate_from(const FieldSpec& field, const Condition& cond, std::size_t steps, Latent noise);

/// n independent samples; sample k uses derive_seed(seed, k).
std::vector<Latent> generate_many(const FieldSpec& field, const Condition& cond, std::size_t steps, std::size_t n,
                                  std::uint64_t seed);

/// Two-column CSV "step,loss" with a versioned header comment.
void write_loss_csv(const std::vector<double>& curve, const std::filesystem::path& path);

}  // namespace splitflow
