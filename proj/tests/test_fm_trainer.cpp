// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "splitflow/fm_trainer.hpp"
#include "splitflow/latent_io.hpp"
#include "support.hpp"

using namespace splitflow;

namespace {

SceneDescriptor tiny_scene() {
    SceneDescriptor s;
    s.shape = {2, 1, 2};
    s.attributes = {{"a", {"x", "y"}, {{1.0, 0.0}, {0.0, 1.0}}, 0.1, {{0, 0}}}};
    s.background_mean = {0.5, -0.5};
    return s;
}

double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t n) {
    return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(begin),
                           v.begin() + static_cast<std::ptrdiff_t>(begin + n), 0.0) /
           static_cast<double>(n);
}

}  // namespace

TEST_CASE("fm_loss is zero for the exact constant target") {
    const Shape s{2, 1, 1};
    const Latent x0(s, std::vector<double>{0.3, -0.7}), eps(s, std::vector<double>{1.1, 0.4});
    const FieldSpec f = make_constant_shift(eps - x0, {});
    const FmBatch b{{x0}, {Condition{{}, true, ""}}, {eps}, {0.42}};
    CHECK(fm_loss(f, b).loss == doctest::Approx(0.0).epsilon(1e-15));
    CHECK_FALSE(fm_loss(f, b).grads.has_value());
}

TEST_CASE("fm_loss of a zero field on zero data is the noise mean square") {
    const Shape s{3, 1, 2};
    const FieldSpec f = make_mlp_field(s, 2, {8}, Activation::tanh, 1, true);
    Rng rng(1);
    FmBatch b;
    double ms = 0.0;
    for (int k = 0; k < 40; ++k) {
        b.x0.push_back(Latent(s));
        b.cond.push_back(sftest::one_hot(2, k % 2));
        b.eps.push_back(gaussian_latent(s, rng));
        b.sigma.push_back(0.025 * k);
        for (double e : b.eps.back().data()) ms += e * e;
    }
    ms /= 40.0 * 6.0;
    CHECK(fm_loss(f, b).loss == doctest::Approx(ms).epsilon(1e-12));
}

TEST_CASE("fm_loss validates its batch") {
    const FieldSpec f = make_mlp_field(Shape{2, 1, 1}, 1, {4}, Activation::tanh, 1);
    CHECK_THROWS_AS(fm_loss(f, FmBatch{}), ConfigError);
    FmBatch b{{Latent(Shape{2, 1, 1})}, {Condition::null(1)}, {Latent(Shape{3, 1, 1})}, {0.5}};
    CHECK_THROWS_AS(fm_loss(f, b), DimensionError);
}

TEST_CASE("fm_loss gradient matches central finite differences") {
    const SceneDataset data(tiny_scene());
    FieldSpec f = make_mlp_field(data.shape(), data.cond_dim(), {10, 10}, Activation::tanh, 5);
    TrainConfig cfg;
    cfg.batch_size = 24;
    Rng rng(2);
    const FmBatch batch = draw_batch(data, cfg, rng);
    const MlpParams g = *fm_loss(f, batch).grads;

    std::uniform_int_distribution<std::size_t> pick(0, f.mlp().param_count() - 1);
    const double h = 1e-4;
    int checked = 0;
    for (int t = 0; t < 250; ++t) {
        const std::size_t k = pick(rng);
        double& p = f.mlp().param(k);
        const double orig = p;
        p = orig + h;
        const double lp = fm_loss(f, batch).loss;
        p = orig - h;
        const double lm = fm_loss(f, batch).loss;
        p = orig;
        const double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(g.param(k) - fd) / (std::abs(fd) + 1e-8) <= 1e-4);
        ++checked;
    }
    CHECK(checked >= 200);
}

TEST_CASE("training overfits a single fixed pair") {
    const Shape s{2, 1, 1};
    const FixedSource src(Latent(s, std::vector<double>{0.8, -0.6}), sftest::one_hot(2, 0));
    FieldSpec f = make_mlp_field(s, 2, {64, 64}, Activation::tanh, 3);
    TrainConfig cfg;
    cfg.steps = 4000;
    cfg.batch_size = 64;
    cfg.learning_rate = 3e-3;
    cfg.seed = 4;
    const TrainResult r = train(f, src, cfg);
    REQUIRE(r.loss_curve.size() == 4000);
    // per-step losses are noisy (fresh sigma and eps each step); compare windows
    const double first = window_mean(r.loss_curve, 0, 50), last = window_mean(r.loss_curve, 3800, 200);
    CHECK(last < 0.05 * first);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    const SceneDataset data(tiny_scene());
    const FieldSpec f = make_mlp_field(data.shape(), data.cond_dim(), {8}, Activation::relu, 6);
    TrainConfig cfg;
    cfg.steps = 20;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.0;
    const TrainResult r = train(f, data, cfg);
    CHECK(r.field.mlp() == f.mlp());
}

TEST_CASE("training is deterministic under a seed") {
    const SceneDataset data(tiny_scene());
    const FieldSpec f = make_mlp_field(data.shape(), data.cond_dim(), {8, 8}, Activation::tanh, 6);
    TrainConfig cfg;
    cfg.steps = 60;
    cfg.batch_size = 40;
    cfg.seed = 99;
    const TrainResult a = train(f, data, cfg), b = train(f, data, cfg);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(encode_field(a.field) == encode_field(b.field));
    cfg.seed = 100;
    CHECK(train(f, data, cfg).loss_curve != a.loss_curve);
}

TEST_CASE("divergence raises a training error with the step") {
    const Shape s{1, 1, 1};
    const FixedSource src(Latent(s, 1e300), Condition::null(1));
    TrainConfig cfg;
    cfg.steps = 5;
    cfg.batch_size = 4;
    try {
        train(make_mlp_field(s, 1, {4}, Activation::tanh, 1), src, cfg);
        FAIL("expected a training error");
    } catch (const TrainingError& e) {
        CHECK(e.step() == 0);
    }
}

TEST_CASE("train config validation") {
    TrainConfig c;
    c.cond_dropout = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.learning_rate = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    const SceneDataset data(tiny_scene());
    CHECK_THROWS_AS(train(make_constant_shift(Latent(data.shape()), std::vector<Latent>(data.cond_dim(), Latent(data.shape()))), data, TrainConfig{}),
                    ConfigError);
}

TEST_CASE("condition dropout rate matches its probability") {
    const SceneDataset data(tiny_scene());
    TrainConfig cfg;
    cfg.cond_dropout = 0.1;
    cfg.batch_size = 1000;
    Rng rng(7);
    std::size_t nulls = 0, total = 0;
    for (int k = 0; k < 10; ++k) {
        const FmBatch b = draw_batch(data, cfg, rng);
        for (const auto& c : b.cond) nulls += c.is_null;
        total += b.size();
        for (double s : b.sigma) CHECK((s >= 0.0 && s <= 1.0));
    }
    const double p = 0.1, frac = static_cast<double>(nulls) / static_cast<double>(total);
    CHECK(std::abs(frac - p) <= 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(total)));
}

TEST_CASE("generate with a constant field integrates exactly") {
    const Shape s{2, 1, 2};
    const Latent c(s, std::vector<double>{1.0, -2.0, 0.5, 0.0});
    const FieldSpec f = make_constant_shift(c, {Latent(s)});
    Rng rng(42);
    const Latent eps = gaussian_latent(s, rng);
    CHECK(sftest::max_abs_diff(generate(f, Condition{{1.0}}, 50, 42), eps - c) <= 1e-12);
    CHECK(sftest::max_abs_diff(generate(f, Condition{{1.0}}, 1, 42), eps - c) <= 1e-15);
    CHECK_THROWS_AS(generate(f, Condition{{1.0}}, 0, 42), ConfigError);
}

TEST_CASE("one generation step is a single Euler update from sigma 1") {
    const Shape s{2, 1, 1};
    const FieldSpec f = make_mlp_field(s, 2, {8}, Activation::tanh, 11);
    const Condition c = sftest::one_hot(2, 1);
    Rng rng(5);
    const Latent eps = gaussian_latent(s, rng);
    CHECK(generate(f, c, 1, 5) == eps - eval(f, eps, 1.0, c));
    CHECK(generate(f, c, 30, 5) == generate(f, c, 30, 5));
    const auto many = generate_many(f, c, 10, 8, 3);
    CHECK(many.size() == 8);
    CHECK(many[3] == generate(f, c, 10, derive_seed(3, 3)));
}

TEST_CASE("loss csv format") {
    const auto path = std::filesystem::temp_directory_path() / "splitflow_test_loss" / "loss.csv";
    write_loss_csv({1.5, 0.25}, path);
    CHECK(detail::read_text(path) == "# splitflow loss-curve v1\nstep,loss\n0,1.5\n1,0.25\n");
    std::filesystem::remove_all(path.parent_path());
}
