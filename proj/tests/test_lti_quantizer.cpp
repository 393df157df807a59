#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "efc/benchmark_data.hpp"
#include "efc/lti.hpp"
#include "efc/quantizer.hpp"
#include "support.hpp"

using namespace efc;
using efc::testing::random_stable;
using efc::testing::random_trace;
using efc::testing::scalar;

namespace {

SignalTrace constant_trace(std::size_t steps, const Vector& v) { return SignalTrace(std::vector<Vector>(steps, v)); }

} // namespace

// ---- lti_core ------------------------------------------------------------------------------

TEST(Simulate, ZeroSystemGivesZeroOutputs) {
    std::mt19937_64 rng(1);
    const StateSpace z = StateSpace::zero(3, 2, 2);
    const auto sim = simulate(z, random_trace(rng, 20, 2), 20);
    for (const auto& u : sim.outputs.samples) EXPECT_EQ(u.norm(), 0.0);
}

TEST(Simulate, ReactorOpenLoopDiverges) {
    StateSpace plant = benchmark::reactor();
    plant.x0 = benchmark::initial_state();
    const auto sim = simulate(plant, constant_trace(200, Vector::Zero(1)), 200);
    const double n0 = sim.states[0].norm();
    EXPECT_GT(sim.states[199].norm(), 100.0 * n0);
    EXPECT_GT(sim.states[199].norm(), sim.states[100].norm());
}

TEST(Simulate, MatchesExplicitOutput) {
    std::mt19937_64 rng(2);
    StateSpace sys = random_stable(rng, 3, 2, 2);
    sys.x0 = efc::testing::random_matrix(rng, 3, 1);
    const SignalTrace in = random_trace(rng, 100, 2);
    const auto sim = simulate(sys, in, 100);
    for (std::size_t k = 0; k < 100; ++k) {
        EXPECT_LT((sim.outputs[k] - explicit_output(sys, in, k)).cwiseAbs().maxCoeff(), 1e-9) << "k=" << k;
    }
}

TEST(Simulate, RejectsShortTraceAndWrongWidth) {
    const StateSpace sys = scalar(0.5, 1, 1, 0);
    EXPECT_THROW(simulate(sys, constant_trace(3, Vector::Ones(1)), 4), Error);
    EXPECT_THROW(simulate(sys, constant_trace(3, Vector::Ones(2)), 3), Error);
}

TEST(ExplicitOutput, EmptySumAtZero) {
    std::mt19937_64 rng(3);
    StateSpace sys = random_stable(rng, 2, 1, 1);
    sys.x0 = Vector::Constant(2, 0.7);
    const SignalTrace in = random_trace(rng, 1, 1);
    EXPECT_NEAR((explicit_output(sys, in, 0) - (sys.c * sys.x0 + sys.d * in[0])).norm(), 0.0, 1e-15);
}

TEST(ExplicitOutput, ScalarHandValue) {
    const StateSpace sys = scalar(0.5, 1, 1, 0);
    EXPECT_DOUBLE_EQ(explicit_output(sys, constant_trace(3, Vector::Ones(1)), 2)(0), 1.5);
}

TEST(SpectralRadius, Examples) {
    EXPECT_EQ(spectral_radius(Matrix::Zero(3, 3)), 0.0);
    EXPECT_TRUE(is_schur(Matrix::Zero(3, 3)));
    EXPECT_GT(spectral_radius(benchmark::reactor().a), 1.0);
    EXPECT_FALSE(is_schur(benchmark::reactor().a));
    Matrix tri(2, 2);
    tri << 0.3, 5.0, 0.0, 0.9;
    EXPECT_NEAR(spectral_radius(tri), 0.9, 1e-12);
}

TEST(IntegerSchur, Examples) {
    Matrix shift = Matrix::Zero(4, 4);
    for (Index i = 1; i < 4; ++i) shift(i, i - 1) = 1;
    EXPECT_EQ(integer_schur_check(shift), IntegerStability::stable_nilpotent);
    EXPECT_EQ(integer_schur_check(Matrix::Identity(3, 3)), IntegerStability::unstable);
    EXPECT_THROW(integer_schur_check(Matrix::Constant(2, 2, 0.5)), Error);
}

TEST(IntegerSchur, AgreesWithEigenvalues) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> entry(-2, 2);
    std::bernoulli_distribution strict(0.5);
    int nilpotent = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const Index n = 1 + trial % 4;
        Matrix a(n, n);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) a(i, j) = entry(rng);
        if (strict(rng)) {
            // similarity by a unimodular matrix keeps integers and nilpotency
            a = a.triangularView<Eigen::StrictlyLower>().toDenseMatrix();
            Matrix u = Matrix::Identity(n, n);
            if (n > 1) u(0, n - 1) = entry(rng);
            Matrix ui = Matrix::Identity(n, n);
            if (n > 1) ui(0, n - 1) = -u(0, n - 1);
            a = u * a * ui;
        }
        const bool nil = integer_schur_check(a) == IntegerStability::stable_nilpotent;
        nilpotent += nil;
        EXPECT_EQ(nil, spectral_radius(a) < 1.0 - 1e-6) << a;
    }
    EXPECT_GT(nilpotent, 50);
}

TEST(Markov, Examples) {
    const StateSpace sys = scalar(0.5, 1, 1, 2);
    const auto m0 = markov_parameters(sys, 0);
    ASSERT_EQ(m0.size(), 1u);
    EXPECT_EQ(m0[0](0, 0), 2.0);
    const auto m2 = markov_parameters(sys, 2);
    ASSERT_EQ(m2.size(), 3u);
    EXPECT_DOUBLE_EQ(m2[0](0, 0), 2.0);
    EXPECT_DOUBLE_EQ(m2[1](0, 0), 1.0);
    EXPECT_DOUBLE_EQ(m2[2](0, 0), 0.5);
}

TEST(Markov, EqualsImpulseResponse) {
    std::mt19937_64 rng(5);
    const StateSpace sys = random_stable(rng, 4, 2, 3);
    const auto mk = markov_parameters(sys, 6);
    for (Index col = 0; col < 2; ++col) {
        std::vector<Vector> imp(7, Vector::Zero(2));
        imp[0](col) = 1.0;
        const auto sim = simulate(sys, SignalTrace(imp), 7);
        for (std::size_t j = 0; j < 7; ++j) EXPECT_LT((sim.outputs[j] - mk[j].col(col)).norm(), 1e-12);
    }
}

TEST(HinfNorm, Examples) {
    EXPECT_EQ(hinf_norm(StateSpace::zero(2, 1, 1)), 0.0);
    Matrix d(2, 2);
    d << 3, 1, 0, 2;
    const StateSpace g(Matrix::Zero(1, 1), Matrix::Zero(1, 2), Matrix::Zero(2, 1), d);
    EXPECT_NEAR(hinf_norm(g), Eigen::JacobiSVD<Matrix>(d).singularValues()(0), 1e-12);
    EXPECT_NEAR(hinf_norm(scalar(0.5, 1, 1, 0)), 2.0, 1e-9);
}

TEST(HinfNorm, BoundsSampledGain) {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 5; ++i) {
        const StateSpace sys = random_stable(rng, 3, 2, 2, 0.5, 0.95);
        const double h = hinf_norm(sys, 1024);
        for (int s = 0; s <= 200; ++s) EXPECT_LE(frequency_gain(sys, M_PI * s / 200.0), h * (1 + 1e-9));
    }
}

TEST(SeriesDifference, MatchSeparateSimulations) {
    std::mt19937_64 rng(7);
    const StateSpace g1 = random_stable(rng, 2, 1, 2);
    const StateSpace g2 = random_stable(rng, 3, 2, 1);
    const StateSpace g3 = random_stable(rng, 2, 1, 2);
    const SignalTrace in = random_trace(rng, 30, 1);
    const auto s1 = simulate(g1, in, 30);
    const auto s12 = simulate(g2, s1.outputs, 30);
    const auto ser = simulate(series(g1, g2), in, 30);
    const auto s3 = simulate(g3, in, 30);
    const auto dif = simulate(difference(g1, g3), in, 30);
    for (std::size_t k = 0; k < 30; ++k) {
        EXPECT_LT((ser.outputs[k] - s12.outputs[k]).norm(), 1e-10);
        EXPECT_LT((dif.outputs[k] - (s1.outputs[k] - s3.outputs[k])).norm(), 1e-10);
    }
}

// ---- quantizer -----------------------------------------------------------------------------

TEST(Quantize, Examples) {
    EXPECT_EQ(quantize(0.516, 100), 52);
    EXPECT_EQ(quantize(0.0, 100), 0);
    EXPECT_EQ(quantize(0.0, 1), 0);
    EXPECT_EQ(quantize(-0.005, 100), -1);
    EXPECT_EQ(quantize(0.005, 100), 1);
    EXPECT_THROW(quantize(1.0, 0.5), Error);
    EXPECT_THROW(quantize(NAN, 10), Error);
}

TEST(Quantize, HalfStepBoundOnGrid) {
    for (double s : {1.0, 3.0, 10.0, 100.0, 1024.0, 12345.0}) {
        for (int i = -5000; i <= 5000; ++i) {
            const double x = i * 0.00173;
            const double z = static_cast<double>(quantize(x, s));
            EXPECT_LE(std::fabs(x - z / s), 0.5 / s * (1 + 1e-12)) << x << " " << s;
        }
    }
}

TEST(ZqWrap, Examples) {
    const BigInt q = 1000;
    EXPECT_EQ(zq_wrap(q, q).representative, 0);
    EXPECT_EQ(zq_wrap(500, q).representative, -500);
    EXPECT_EQ(zq_wrap(499, q).representative, 499);
    EXPECT_EQ(zq_wrap(-501, q).representative, 499);
    EXPECT_EQ(zq_wrap(7, BigInt(7)).representative, 0);
    EXPECT_EQ(zq_wrap(4, BigInt(7)).representative, -3);
}

TEST(ZqWrap, AdditionAndProductCommuteWithWrapping) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::int64_t> d(-(std::int64_t{1} << 60), std::int64_t{1} << 60);
    for (BigInt q : {BigInt(2), BigInt(97), BigInt(1) << 20, (BigInt(1) << 61) - 1}) {
        for (int i = 0; i < 500; ++i) {
            const BigInt a = d(rng), b = d(rng);
            EXPECT_EQ((zq_wrap(a, q) + zq_wrap(b, q)).representative, zq_wrap(a + b, q).representative);
            EXPECT_EQ((zq_wrap(a, q) * zq_wrap(b, q)).representative, zq_wrap(a * b, q).representative);
            const BigInt r = zq_wrap(a, q).representative;
            EXPECT_TRUE(r >= zq_min(q) && r <= zq_max(q));
        }
    }
}

TEST(ScalingProfile, Constraints) {
    EXPECT_NO_THROW(ScalingProfile::uniform(100, BigInt(1) << 40));
    ScalingProfile p;
    p.s = {10, 10, 10, 10, 10, 1, 1, 1};
    EXPECT_NO_THROW(p.validate());
    p.s = {10, 10, 5, 10, 10, 1, 1, 1};
    EXPECT_THROW(p.validate(), Error); // s0 != s2 s5
    p.s = {10, 10, 10, 10, 20, 1, 1, 1};
    EXPECT_THROW(p.validate(), Error); // s1 s4 != s2 s3
    p.s = {1, 1, 1, 1, 1, 1, 0.5, 1};
    EXPECT_THROW(p.validate(), Error);
}

TEST(IntegerController, ZeroSystem) {
    IntegerController c(StateSpace::zero(3, 2, 1), ScalingProfile::uniform(100, BigInt(1) << 64));
    for (const auto* m : {&c.a_bar(), &c.b_bar(), &c.c_bar(), &c.d_bar()})
        for (i128 v : m->data) EXPECT_EQ(v, 0);
    for (int k = 0; k < 5; ++k) {
        const IntegerStep s = c.step(Vector::Constant(2, 3.7));
        EXPECT_FALSE(s.overflowed);
        for (i128 v : s.v) EXPECT_EQ(v, 0);
    }
}

TEST(IntegerController, MatricesWithinHalfStep) {
    std::mt19937_64 rng(9);
    const StateSpace sys = random_stable(rng, 4, 2, 2);
    const IntegerController c(sys, ScalingProfile::uniform(1000, BigInt(1) << 64));
    EXPECT_LE((c.a_bar().to_real(1000) - sys.a).cwiseAbs().maxCoeff(), 0.5 / 1000 + 1e-15);
    EXPECT_LE((c.b_bar().to_real(1000) - sys.b).cwiseAbs().maxCoeff(), 0.5 / 1000 + 1e-15);
    EXPECT_LE((c.c_bar().to_real(1000) - sys.c).cwiseAbs().maxCoeff(), 0.5 / 1000 + 1e-15);
    EXPECT_LE((c.d_bar().to_real(1000) - sys.d).cwiseAbs().maxCoeff(), 0.5 / 1000 + 1e-15);
}

TEST(IntegerController, ScalarOverflowMatchesBigIntegerOracle) {
    const StateSpace sys = scalar(0.9, 1, 1, 0);
    const ScalingProfile p = ScalingProfile::uniform(100, BigInt(1) << 16);
    IntegerController c(sys, p);
    // z(k+1) = 90 z + 100 * round(100^{k+1}); v = 100 z; overflow when anything leaves Z_q
    BigInt z = 0;
    const BigInt q = p.q;
    std::optional<int> oracle_first;
    for (int k = 0; k < 10 && !oracle_first; ++k) {
        BigInt y = 1;
        for (int i = 0; i <= k; ++i) y *= 100;
        const BigInt v = 100 * z;
        const BigInt zn = 90 * z + 100 * y;
        auto outside = [&](const BigInt& x) { return x < zq_min(q) || x > zq_max(q); };
        if (outside(y) || outside(v) || outside(90 * z) || outside(100 * y) || outside(zn)) oracle_first = k;
        z = zn;
    }
    ASSERT_TRUE(oracle_first.has_value());
    int first = -1;
    for (int k = 0; k < 10; ++k) {
        if (c.step(Vector::Ones(1)).overflowed) {
            first = k;
            break;
        }
    }
    EXPECT_EQ(first, *oracle_first);
}

TEST(Recover, Examples) {
    ScalingProfile p;
    p.s = {1, 1, 1, 1, 1, 1, 1, 1};
    EXPECT_EQ(recover({7}, 0, p, RecoveryKind::input)(0), 7.0);
    EXPECT_EQ(recover({0, 0}, 5, ScalingProfile::uniform(10, BigInt(1) << 40), RecoveryKind::input).norm(), 0.0);
    const ScalingProfile u = ScalingProfile::uniform(10, BigInt(1) << 40);
    EXPECT_DOUBLE_EQ(recover({12345}, 2, u, RecoveryKind::input)(0), 12345.0 / 10000.0);
    EXPECT_DOUBLE_EQ(recover({12345}, 2, u, RecoveryKind::state)(0), 12345.0 / 1000.0);
}

TEST(Recover, RoundTripBound) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> x(-50, 50);
    ScalingProfile p;
    p.s = {10, 3, 10, 3, 10, 1, 1, 1};
    p.q = BigInt(1) << 100;
    p.validate();
    for (std::uint64_t k = 0; k < 6; ++k) {
        const double scale = std::pow(3.0, static_cast<double>(k + 1)) * 10;
        for (int i = 0; i < 200; ++i) {
            const double v = x(rng);
            const i128 z = quantize(v, scale);
            EXPECT_LE(std::fabs(recover({z}, k, p, RecoveryKind::input)(0) - v), 0.5 / scale * (1 + 1e-12));
        }
    }
}

TEST(IntegerController, RecoveryWithinPropagatedBound) {
    std::mt19937_64 rng(11);
    for (int run = 0; run < 20; ++run) {
        StateSpace sys = random_stable(rng, 3, 2, 1);
        sys.x0 = efc::testing::random_matrix(rng, 3, 1);
        const ScalingProfile p = ScalingProfile::uniform(run % 2 ? 10.0 : 100.0, BigInt(1) << 120);
        IntegerController c(sys, p);
        RecoveryBoundTracker tracker(sys, c);
        Vector x = sys.x0;
        const SignalTrace in = random_trace(rng, 8, 2);
        for (std::uint64_t k = 0; k < 8; ++k) {
            const Vector& y = in[k];
            const Vector u = sys.c * x + sys.d * y;
            const Vector x_tilde = recover(c.state(), k, p, RecoveryKind::state);
            const Vector bound = tracker.output_bound(x_tilde, y, k);
            const IntegerStep s = c.step(y);
            ASSERT_FALSE(s.overflowed);
            const Vector ur = recover(s.v, k, p, RecoveryKind::input);
            for (Index i = 0; i < u.size(); ++i) EXPECT_LE(std::fabs(ur(i) - u(i)), bound(i)) << "run " << run << " k " << k;
            tracker.advance(x_tilde, y, k);
            x = sys.a * x + sys.b * y;
        }
    }
}

TEST(OverflowHorizon, NilpotentWithUnitS1IsUnbounded) {
    Matrix a = Matrix::Zero(3, 3);
    a(1, 0) = 1;
    a(2, 1) = 1;
    const StateSpace sys(a, Matrix::Ones(3, 1), Matrix::Ones(1, 3), Matrix::Ones(1, 1));
    ScalingProfile p;
    p.s = {1, 1, 1, 1, 1, 1, 1, 1};
    p.q = BigInt(1) << 20;
    const OverflowHorizon h = overflow_horizon(IntegerController(sys, p), 100.0);
    EXPECT_TRUE(h.unbounded);
}

TEST(OverflowHorizon, SmallFiniteAndConservative) {
    const StateSpace sys = scalar(0.5, 0.7, 1.2, 0.3);
    ScalingProfile p;
    p.s = {10, 10, 10, 10, 10, 1, 1, 1};
    p.q = BigInt(1) << 10;
    const IntegerController c(sys, p);
    const OverflowHorizon h = overflow_horizon(c, 1.0);
    ASSERT_FALSE(h.unbounded);
    EXPECT_LT(h.steps, 5u);
    // worst-case exhaustive check with y in {-1, 1}: no overflow before h.steps
    const std::size_t depth = h.steps + 2;
    for (unsigned mask = 0; mask < (1u << depth); ++mask) {
        IntegerController run(sys, p);
        for (std::size_t k = 0; k < depth; ++k) {
            const double y = (mask >> k) & 1 ? 1.0 : -1.0;
            const bool ovf = run.step(Vector::Constant(1, y)).overflowed;
            if (k < h.steps) EXPECT_FALSE(ovf) << "mask " << mask << " k " << k;
        }
    }
}

TEST(OverflowHorizon, DoublingQNeverShortens) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 10; ++i) {
        const StateSpace sys = random_stable(rng, 2, 1, 1);
        std::uint64_t last = 0;
        for (int bits = 20; bits <= 60; ++bits) {
            const OverflowHorizon h = overflow_horizon(IntegerController(sys, ScalingProfile::uniform(10, BigInt(1) << bits)), 2.0);
            ASSERT_FALSE(h.unbounded);
            EXPECT_GE(h.steps, last);
            last = h.steps;
        }
    }
}
