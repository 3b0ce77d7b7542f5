// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "splitflow/edit_engine.hpp"
#include "support.hpp"

using namespace splitflow;
using sftest::columns;
using sftest::max_abs_diff;
using sftest::one_hot;

namespace {

const Shape kShape{2, 2, 3};

struct ShiftSetup {
    Latent c_null, c_src, c_tgt, c_a, c_b;
    FieldSpec field;
};

// Conditions: e0 = source, e1 = target, e2/e3 = two sub-targets.
ShiftSetup shift_setup(std::uint64_t seed) {
    Rng rng(seed);
    ShiftSetup s;
    s.c_null = sftest::random_latent(kShape, rng);
    s.c_src = sftest::random_latent(kShape, rng);
    s.c_tgt = sftest::random_latent(kShape, rng);
    s.c_a = sftest::random_latent(kShape, rng);
    s.c_b = sftest::random_latent(kShape, rng);
    s.field = sftest::one_hot_shift_field(s.c_null, {s.c_src, s.c_tgt, s.c_a, s.c_b});
    return s;
}

EditConfig unit_scales() {
    EditConfig c;
    c.cfg_src = c.cfg_tgt = c.cfg_sub = 1.0;
    c.seed = 17;
    return c;
}

}  // namespace

TEST_CASE("velocity_delta examples") {
    const ShiftSetup s = shift_setup(1);
    Rng rng(2);
    const Latent x = sftest::random_latent(kShape, rng), y = sftest::random_latent(kShape, rng);
    const Condition src = one_hot(4, 0), tgt = one_hot(4, 1);

    CHECK(velocity_delta(s.field, x, x, 0.4, src, src, 3.5, 3.5).max_abs() == 0.0);
    CHECK(max_abs_diff(velocity_delta(s.field, x, y, 0.4, tgt, src, 1.0, 1.0), s.c_tgt - s.c_src) <= 1e-12);

    const double st = 13.5, ss = 3.5;
    const Latent expect = st * s.c_tgt - ss * s.c_src + (ss - st) * s.c_null;
    CHECK(max_abs_diff(velocity_delta(s.field, x, y, 0.4, tgt, src, st, ss), expect) <= 1e-11);
    CHECK_THROWS_AS(velocity_delta(s.field, x, Latent(Shape{1, 2, 3}), 0.4, tgt, src, st, ss), DimensionError);
}

TEST_CASE("schedule validation") {
    CHECK_NOTHROW(EditSchedule{}.validate());
    CHECK_THROWS_AS((EditSchedule{50, 33, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((EditSchedule{50, 28, 28}.validate()), ConfigError);
    CHECK_THROWS_AS((EditSchedule{50, 51, 28}.validate()), ConfigError);
    CHECK_THROWS_AS((EditSchedule{0, 0, 0}.validate()), ConfigError);
    CHECK(EditSchedule{}.sigma_start() == doctest::Approx(0.66));

    const ShiftSetup s = shift_setup(3);
    const Latent x0(kShape);
    CHECK_THROWS_AS(flowedit_run(s.field, x0, one_hot(4, 0), one_hot(4, 1), EditSchedule{10, 4, 5}, EditConfig{}),
                    ConfigError);
    const std::vector<Condition> subs{one_hot(4, 1)};
    CHECK_THROWS_AS(splitflow_run(s.field, x0, one_hot(4, 0), subs, one_hot(4, 1), EditSchedule{10, 11, 5},
                                  EditConfig{}),
                    ConfigError);
}

TEST_CASE("flowedit constant-field closed form") {
    const ShiftSetup s = shift_setup(4);
    Rng rng(5);
    const Latent x0 = sftest::random_latent(kShape, rng);
    for (int T : {10, 50, 200}) {
        const EditSchedule sch{T, (2 * T) / 3, T / 2};
        const Latent out = flowedit_run(s.field, x0, one_hot(4, 0), one_hot(4, 1), sch, unit_scales());
        const Latent expect = x0 + sch.sigma_start() * (s.c_src - s.c_tgt);
        CHECK(max_abs_diff(out, expect) <= 1e-6);
    }
}

TEST_CASE("flowedit null edit and determinism") {
    const FieldSpec f = make_mlp_field(kShape, 4, {16}, Activation::tanh, 8);
    Rng rng(6);
    const Latent x0 = sftest::random_latent(kShape, rng);
    EditConfig cfg;
    cfg.seed = 9;
    cfg.cfg_tgt = cfg.cfg_src;  // a null edit is a fixed point only under equal guidance
    RunReport rep;
    const Latent same = flowedit_run(f, x0, one_hot(4, 2), one_hot(4, 2), EditSchedule{}, cfg, &rep);
    CHECK(max_abs_diff(same, x0) <= 1e-6);
    CHECK(rep.eval_count == 33);
    CHECK(rep.method == "baseline");

    const Latent a = flowedit_run(f, x0, one_hot(4, 0), one_hot(4, 1), EditSchedule{}, cfg);
    const Latent b = flowedit_run(f, x0, one_hot(4, 0), one_hot(4, 1), EditSchedule{}, cfg);
    CHECK(a == b);
    cfg.seed = 10;
    CHECK_FALSE(flowedit_run(f, x0, one_hot(4, 0), one_hot(4, 1), EditSchedule{}, cfg) == a);
}

TEST_CASE("decomposition_step examples") {
    const ShiftSetup s = shift_setup(7);
    Rng rng(8);
    const Latent x0 = sftest::random_latent(kShape, rng);
    const Condition src = one_hot(4, 0), tgt = one_hot(4, 1);
    const int T = 50;

    SUBCASE("degenerate decomposition tracks the target flow") {
        const FieldSpec f = make_mlp_field(kShape, 4, {12}, Activation::tanh, 2);
        const std::vector<Condition> subs{tgt};
        EditState st{x0, {x0}, 0, 0};
        for (int i = 33; i > 28; --i) {
            const std::vector<Latent> eps{step_noise(kShape, 1, i, 0)};
            st = decomposition_step(f, std::move(st), x0, src, subs, tgt, i / double(T), -1.0 / T, eps, EditConfig{});
            CHECK(max_abs_diff(st.x_fe, st.x_fe_sub[0]) <= 1e-10);
        }
        CHECK(st.eval_count == 10);
    }

    SUBCASE("constant sub-fields telescope per flow") {
        const std::vector<Condition> subs{one_hot(4, 2), one_hot(4, 3)};
        for (bool fidelity : {false, true}) {
            EditConfig cfg = unit_scales();
            cfg.fidelity_enhanced = fidelity;
            EditState st{x0, {x0, x0}, 0, 0};
            const int m = 6;
            for (int i = 40; i > 40 - m; --i) {
                const std::vector<Latent> eps{step_noise(kShape, 3, i, 0)};
                st = decomposition_step(s.field, std::move(st), x0, src, subs, tgt, i / double(T), -1.0 / T, eps, cfg);
            }
            const double moved = m * (1.0 / T);
            CHECK(max_abs_diff(st.x_fe_sub[0], x0 + moved * (s.c_src - s.c_a)) <= 1e-12);
            CHECK(max_abs_diff(st.x_fe_sub[1], x0 + moved * (s.c_src - s.c_b)) <= 1e-12);
            CHECK(max_abs_diff(st.x_fe, x0 + moved * (s.c_src - s.c_tgt)) <= 1e-12);
        }
    }

    SUBCASE("errors") {
        const std::vector<Condition> none;
        const std::vector<Latent> eps{x0};
        CHECK_THROWS_AS(decomposition_step(s.field, EditState{x0, {}, 0, 0}, x0, src, none, tgt, 0.5, -0.02, eps,
                                           EditConfig{}),
                        ConfigError);
        EditConfig separate;
        separate.share_eps_across_flows = false;
        const std::vector<Condition> one{tgt};
        CHECK_THROWS_AS(decomposition_step(s.field, EditState{x0, {x0}, 0, 0}, x0, src, one, tgt, 0.5, -0.02, eps,
                                           separate),
                        ConfigError);
    }
}

TEST_CASE("ltp examples") {
    const Shape s{2, 1, 2};
    const Latent target = columns(s, {1, 0});
    const std::vector<Latent> subs{columns(s, {3, 0}), columns(s, {0, 4})};
    const LtpResult r = ltp(subs, target);
    CHECK(max_abs_diff(r.projected[0], columns(s, {3, 0})) <= 1e-15);
    CHECK(r.projected[1].max_abs() == 0.0);
    CHECK(max_abs_diff(r.x_proj, columns(s, {1.5, 0})) <= 1e-15);

    Rng rng(9);
    const Latent t = sftest::random_latent(kShape, rng), x = sftest::random_latent(kShape, rng);
    const std::vector<Latent> same{t, t, t};
    CHECK(max_abs_diff(ltp(same, t).x_proj, t) <= 1e-10);
    const std::vector<Latent> one{x};
    CHECK(max_abs_diff(ltp(one, t).x_proj, project_onto(x, t)) <= 1e-15);
    CHECK_THROWS_AS(ltp(std::vector<Latent>{}, t), ConfigError);
}

TEST_CASE("vfa examples") {
    const Shape s{2, 1, 1};
    SUBCASE("two aligned, one opposed") {
        const VfaResult r = aggregate_velocities({columns(s, {1, 0}), columns(s, {1, 0}), columns(s, {-1, 0})});
        CHECK(r.weights[0][0] == doctest::Approx(0.4683).epsilon(1e-4));
        CHECK(r.weights[1][0] == doctest::Approx(0.4683).epsilon(1e-4));
        CHECK(r.weights[2][0] == doctest::Approx(0.0634).epsilon(1e-3));
        CHECK(r.v_bar[0] == doctest::Approx(0.8732).epsilon(1e-4));
        CHECK(r.v_bar[1] == 0.0);
        // exact oracle: softmax(0, 0, -2)
        const double z = 2.0 + std::exp(-2.0);
        CHECK(r.weights[0][0] == doctest::Approx(1.0 / z).epsilon(1e-14));
        CHECK(r.v_bar[0] == doctest::Approx((2.0 - std::exp(-2.0)) / z).epsilon(1e-14));
    }
    SUBCASE("identical fields give uniform weights") {
        Rng rng(10);
        const Latent g = sftest::random_latent(kShape, rng);
        const VfaResult r = aggregate_velocities({g, g, g, g});
        for (const auto& w : r.weights)
            for (std::size_t l = 0; l < w.size(); ++l) CHECK(w[l] == doctest::Approx(0.25).epsilon(1e-14));
        CHECK(max_abs_diff(r.v_bar, g) <= 1e-14);
        const VfaResult one = aggregate_velocities({g});
        CHECK(one.weights[0][0] == 1.0);
        CHECK(max_abs_diff(one.v_bar, g) <= 1e-15);
    }
    SUBCASE("all-zero deltas are a fixed point") {
        const VfaResult r = aggregate_velocities({Latent(kShape), Latent(kShape)});
        CHECK(r.v_bar.max_abs() == 0.0);
        CHECK(r.weights[0][0] == doctest::Approx(0.5));
    }
    SUBCASE("evaluated at projected latents") {
        const ShiftSetup st = shift_setup(11);
        const std::vector<Condition> subs{one_hot(4, 2), one_hot(4, 3)};
        Rng rng(12);
        const std::vector<Latent> proj{sftest::random_latent(kShape, rng), sftest::random_latent(kShape, rng)};
        const Latent xs = sftest::random_latent(kShape, rng), x0 = sftest::random_latent(kShape, rng);
        const VfaResult r = vfa(st.field, proj, xs, x0, 0.5, subs, one_hot(4, 0), unit_scales());
        CHECK(max_abs_diff(r.deltas[0], st.c_a - st.c_src) <= 1e-12);
        CHECK(max_abs_diff(r.deltas[1], st.c_b - st.c_src) <= 1e-12);
        CHECK(r.deltas.size() == 2);
        CHECK_THROWS_AS(vfa(st.field, std::vector<Latent>{}, xs, x0, 0.5, std::vector<Condition>{}, one_hot(4, 0),
                            EditConfig{}),
                        ConfigError);
    }
    CHECK_THROWS_AS(aggregate_velocities({}), ConfigError);
}

TEST_CASE("aggregate_update examples") {
    const Shape s{1, 1, 1};
    CHECK(aggregate_update(Latent(s, 1.0), Latent(s, 2.0), 0.02)[0] == doctest::Approx(1.04).epsilon(1e-15));
    CHECK(aggregate_update(Latent(s, 1.0), Latent(s, 2.0), 0.0)[0] == 1.0);
    CHECK(aggregate_update(Latent(s, 1.0), Latent(s, 0.0), 0.3)[0] == 1.0);
    CHECK_THROWS_AS(aggregate_update(Latent(s), Latent(Shape{2, 1, 1}), 0.1), DimensionError);
}

TEST_CASE("splitflow collapses to the baseline") {
    Rng rng(13);
    const Latent x0 = sftest::random_latent(kShape, rng);
    const Condition src = one_hot(4, 0), tgt = one_hot(4, 1);
    EditConfig cfg;
    cfg.seed = 21;

    SUBCASE("single sub-condition equal to the target") {
        const FieldSpec f = make_mlp_field(kShape, 4, {16, 16}, Activation::tanh, 4);
        const std::vector<Condition> subs{tgt};
        const Latent base = flowedit_run(f, x0, src, tgt, EditSchedule{}, cfg);
        for (Aggregation a : {Aggregation::ltp_vfa, Aggregation::ltp, Aggregation::avg}) {
            cfg.aggregation = a;
            CHECK(max_abs_diff(splitflow_run(f, x0, src, subs, tgt, EditSchedule{}, cfg), base) <= 1e-8);
        }
    }
    SUBCASE("constant sub-fields equal to the target field") {
        const ShiftSetup st = shift_setup(14);
        // all sub-conditions map to the target shift
        const FieldSpec f = sftest::one_hot_shift_field(st.c_null, {st.c_src, st.c_tgt, st.c_tgt, st.c_tgt});
        const std::vector<Condition> subs{one_hot(4, 1), one_hot(4, 2), one_hot(4, 3)};
        const Latent base = flowedit_run(f, x0, src, tgt, EditSchedule{}, cfg);
        CHECK(max_abs_diff(splitflow_run(f, x0, src, subs, tgt, EditSchedule{}, cfg), base) <= 1e-8);
    }
}

TEST_CASE("splitflow step accounting and report") {
    const FieldSpec f = make_mlp_field(kShape, 4, {8}, Activation::tanh, 5);
    Rng rng(15);
    const Latent x0 = sftest::random_latent(kShape, rng);
    const std::vector<Condition> subs{one_hot(4, 1), one_hot(4, 2), one_hot(4, 3)};
    EditConfig cfg;
    RunReport rep;
    splitflow_run(f, x0, one_hot(4, 0), subs, one_hot(4, 1), EditSchedule{}, cfg, &rep);
    CHECK(rep.eval_count == 48);
    CHECK(expected_eval_count(3, EditSchedule{}) == 48);
    CHECK(rep.aggregation_eval_count == 3);
    CHECK(rep.num_sub_flows == 3);
    CHECK(rep.weights.size() == 3);
    REQUIRE(rep.steps.size() == 33);
    CHECK(rep.steps[0].phase == "decomposition");
    CHECK(rep.steps[0].delta_norms.size() == 4);
    CHECK(rep.steps[5].phase == "aggregation");
    CHECK(rep.steps[5].i == 28);
    CHECK(rep.steps[6].phase == "unified");
    CHECK(rep.steps.back().i == 1);
    CHECK(rep.steps.back().eval_count == 48);
    double wsum = 0.0;
    for (const auto& w : rep.weights) {
        CHECK(w.min >= 0.0);
        CHECK(w.max <= 1.0);
        wsum += w.mean;
    }
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));

    const auto j = rep.to_json();
    CHECK(j.at("eval_count") == 48);
    CHECK(j.at("steps").size() == 33);

    const std::vector<Condition> four{one_hot(4, 0), one_hot(4, 1), one_hot(4, 2), one_hot(4, 3)};
    CHECK_THROWS_AS(splitflow_run(f, x0, one_hot(4, 0), four, one_hot(4, 1), EditSchedule{}, cfg), ConfigError);
    cfg.max_sub_prompts = 4;
    splitflow_run(f, x0, one_hot(4, 0), four, one_hot(4, 1), EditSchedule{40, 30, 20}, cfg, &rep);
    CHECK(rep.eval_count == expected_eval_count(4, EditSchedule{40, 30, 20}));
    CHECK(rep.eval_count == 70);
}

TEST_CASE("splitflow is deterministic and detects non-finite latents") {
    const FieldSpec f = make_mlp_field(kShape, 4, {8}, Activation::tanh, 6);
    Rng rng(16);
    const Latent x0 = sftest::random_latent(kShape, rng);
    const std::vector<Condition> subs{one_hot(4, 2), one_hot(4, 3)};
    EditConfig cfg;
    cfg.share_eps_across_flows = false;
    const Latent a = splitflow_run(f, x0, one_hot(4, 0), subs, one_hot(4, 1), EditSchedule{}, cfg);
    CHECK(a == splitflow_run(f, x0, one_hot(4, 0), subs, one_hot(4, 1), EditSchedule{}, cfg));

    Latent bad(kShape, std::numeric_limits<double>::infinity());
    const FieldSpec inf_field = make_constant_shift(bad, std::vector<Latent>(4, Latent(kShape)));
    try {
        splitflow_run(inf_field, x0, one_hot(4, 0), subs, one_hot(4, 1), EditSchedule{}, cfg);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(e.step() == 33);
    }
}

TEST_CASE("check_vfa_inequality examples") {
    const VfaMargins same = check_vfa_inequality({{0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}});
    CHECK(same.margin == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(same.lhs == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.rhs == doctest::Approx(1.0).epsilon(1e-12));

    const VfaMargins orth = check_vfa_inequality({{1.0, 0.0}, {0.0, 1.0}});
    CHECK(std::abs(orth.margin) <= 1e-15);
    CHECK(orth.weights[0] == doctest::Approx(0.5));

    const VfaMargins three = check_vfa_inequality({{1.0, 0.0}, {1.0, 0.0}, {-1.0, 0.0}});
    CHECK(three.lhs == doctest::Approx(0.2911).epsilon(1e-4));
    CHECK(three.rhs == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
    CHECK(three.margin == doctest::Approx(0.1800).epsilon(1e-3));
    CHECK(three.gibbs >= 0.0);
    CHECK(three.jensen >= 0.0);
    CHECK(three.scores == std::vector<double>{1.0, 1.0, -1.0});

    CHECK(check_vfa_inequality({{1.0, 0.0, 0.0}}).margin == 0.0);
    CHECK_THROWS_AS(check_vfa_inequality({{1.0, 1.0}}), DomainError);
    CHECK_THROWS_AS(check_vfa_inequality({}), DomainError);
}

TEST_CASE("aggregation names") {
    CHECK(to_string(aggregation_from_string("ltp+vfa")) == "ltp+vfa");
    CHECK(aggregation_from_string("avg") == Aggregation::avg);
    CHECK(aggregation_from_string("ltp") == Aggregation::ltp);
    CHECK_THROWS_AS(aggregation_from_string("mean"), ConfigError);
}
