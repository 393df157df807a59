#include <gtest/gtest.h>

#include <random>

#include "efc/baselines.hpp"
#include "efc/benchmark_data.hpp"
#include "efc/encrypted_fir.hpp"
#include "efc/he/certify.hpp"
#include "fir_oracle.hpp"
#include "support.hpp"

using namespace efc;
using efc::testing::random_matrix;
using efc::testing::random_stable;
using efc::testing::random_trace;
using efc::testing::scalar;
using efc::testing::ExactRun;
using efc::testing::run_exact;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorCode::invalid_argument;
}

FirFilter optimized() { return benchmark::optimized_n2(); }

} // namespace

// ---- encrypted_fir -------------------------------------------------------------------------

TEST(EncodeTaps, PublishedN2TapsAtScale100) {
    const IntegerFir f = quantize_taps(optimized(), 100);
    ASSERT_EQ(f.taps.size(), 3u);
    const std::int64_t want[3][2] = {{-4893, -233}, {5093, 17}, {-881, 4}};
    for (int j = 0; j < 3; ++j)
        for (int c = 0; c < 2; ++c) EXPECT_EQ(static_cast<std::int64_t>(f.taps[j](0, c)), want[j][c]);

    const he::HeParams p = he::params_for(256, std::uint64_t{1} << 29);
    const auto partial = encode_taps<he::Ciphertext>(f, TapMode::partial, p, static_cast<he::BfvEncryptor*>(nullptr));
    for (int j = 0; j < 3; ++j)
        for (int c = 0; c < 2; ++c) EXPECT_EQ(partial.plain[j][c], he::Plaintext::constant(256, want[j][c]));

    he::BfvScheme s(p, 1);
    const auto full = encode_taps<he::Ciphertext>(f, TapMode::full, p, &s.encryptor());
    for (int j = 0; j < 3; ++j)
        for (int c = 0; c < 2; ++c) EXPECT_EQ(s.decrypt_value(full.cipher[j][c]), want[j][c]);
}

TEST(EncodeTaps, ZeroFilterAndRoundTrip) {
    const FirFilter zero({Matrix::Zero(2, 3), Matrix::Zero(2, 3)});
    const he::HeParams p = he::default_params();
    he::BfvScheme s(p, 2);
    const auto z = encode_taps<he::Ciphertext>(quantize_taps(zero, 100), TapMode::full, p, &s.encryptor());
    for (const auto& row : z.cipher)
        for (const auto& c : row) EXPECT_EQ(s.decrypt_value(c), 0);

    std::mt19937_64 rng(3);
    const FirFilter f({random_matrix(rng, 2, 2), random_matrix(rng, 2, 2), random_matrix(rng, 2, 2)});
    const IntegerFir fi = quantize_taps(f, 1000);
    const auto enc = encode_taps<he::Ciphertext>(fi, TapMode::full, p, &s.encryptor());
    for (std::size_t j = 0; j < 3; ++j)
        for (Index i = 0; i < 2; ++i)
            for (Index c = 0; c < 2; ++c)
                EXPECT_EQ(s.decrypt_value(enc.cipher[j][static_cast<std::size_t>(i * 2 + c)]), quantize(f.taps[j](i, c), 1000));
}

TEST(EncodeTaps, HeadroomViolationsAreRefused) {
    const IntegerFir f = quantize_taps(optimized(), 100);
    EXPECT_EQ(headroom_bound(f, 10, 200), BigInt(3) * 2 * 5093 * 2000);
    EXPECT_EQ(code_of([&] { check_headroom(f, 10, 200, std::uint64_t{1} << 20); }), ErrorCode::headroom_exceeded);
    EXPECT_NO_THROW(check_headroom(f, 10, 200, std::uint64_t{1} << 29));
    const he::HeParams small = he::params_for(256, 4096);
    EXPECT_EQ(code_of([&] { (void)encode_taps<he::Ciphertext>(f, TapMode::partial, small, static_cast<he::BfvEncryptor*>(nullptr)); }),
              ErrorCode::headroom_exceeded);
    EXPECT_EQ(code_of([&] { (void)quantize_input(Vector::Constant(1, 300), 10, 4096); }), ErrorCode::headroom_exceeded);
}

TEST(EncryptedStep, ZeroHistoryDecryptsToZero) {
    for (TapMode mode : {TapMode::partial, TapMode::full}) {
        // full mode multiplies two ciphertexts and only certifies up to t = 2^22
        const he::HeParams p = he::params_for(256, std::uint64_t{1} << (mode == TapMode::full ? 22 : 29));
        he::BfvScheme s(p, 4);
        const IntegerFir fi = quantize_taps(optimized(), mode == TapMode::full ? 4 : 100);
        const auto taps = encode_taps<he::Ciphertext>(fi, mode, p, &s.encryptor());
        EncryptedHistory<he::Ciphertext> hist(2, 2, s.evaluator().zero());
        const auto v = encrypted_step(s.evaluator(), taps, hist, encrypt_input(s.encryptor(), std::vector<std::int64_t>{0, 0}));
        ASSERT_EQ(v.size(), 1u);
        EXPECT_EQ(s.decrypt_value(v[0]), 0);
        EXPECT_EQ(v[0].size(), 2u);
    }
}

TEST(EncryptedStep, PartialModeBfvMatchesIntegerConvolution) {
    he::BfvScheme s(he::params_for(256, std::uint64_t{1} << 29), 5);
    const ExactRun r = run_exact(s.evaluator(), s.encryptor(), s.decryptor(), optimized(), TapMode::partial, 100, 10, 200, 200, 6);
    EXPECT_EQ(r.steps, 200u);
    EXPECT_EQ(r.mismatches, 0u);
    EXPECT_EQ(r.outside_bound, 0u);
}

TEST(EncryptedStep, FullModeBfvMatchesIntegerConvolution) {
    he::BfvScheme s(he::params_for(256, std::uint64_t{1} << 22), 7);
    const ExactRun r = run_exact(s.evaluator(), s.encryptor(), s.decryptor(), optimized(), TapMode::full, 4, 3, 200, 200, 8);
    EXPECT_EQ(r.mismatches, 0u);
    EXPECT_EQ(r.outside_bound, 0u);
    const ExactRun w = run_exact(s.evaluator(), s.encryptor(), s.decryptor(), benchmark::window_n7(), TapMode::full, 4, 3, 20, 50, 9);
    EXPECT_EQ(w.mismatches, 0u);
    EXPECT_EQ(w.outside_bound, 0u);
}

TEST(EncryptedStep, MockLongRunStaysExact) {
    const he::MockBackend m(he::params_for(256, std::uint64_t{1} << 29));
    he::MockBackend enc = m;
    const ExactRun r = run_exact(m, enc, m, optimized(), TapMode::partial, 100, 10, 200, 10000, 10);
    EXPECT_EQ(r.mismatches, 0u);
    EXPECT_EQ(r.outside_bound, 0u);
}

TEST(EncryptedStep, RandomMimoFilters) {
    const he::MockBackend m(he::params_for(256, std::uint64_t{1} << 40));
    he::MockBackend enc = m;
    std::mt19937_64 rng(11);
    for (int i = 0; i < 10; ++i) {
        std::vector<Matrix> taps;
        const Index l = 1 + i % 3, mo = 1 + (i / 3) % 2;
        for (int j = 0; j < 1 + i % 5; ++j) taps.push_back(random_matrix(rng, mo, l));
        for (TapMode mode : {TapMode::partial, TapMode::full}) {
            const ExactRun r = run_exact(m, enc, m, FirFilter(taps), mode, 1000, 100, 5, 60, 12 + i);
            EXPECT_EQ(r.mismatches, 0u);
            EXPECT_EQ(r.outside_bound, 0u);
        }
    }
}

TEST(PrecomputedStep, MatchesEncryptedStepExactly) {
    he::BfvScheme s(he::params_for(256, std::uint64_t{1} << 29), 13);
    const ExactRun r = run_exact(s.evaluator(), s.encryptor(), s.decryptor(), optimized(), TapMode::partial, 100, 10, 200, 100, 14, true);
    EXPECT_EQ(r.mismatches, 0u);

    // online phase: lm multiplications
    const he::MockBackend m(he::params_for(256, std::uint64_t{1} << 40));
    std::mt19937_64 rng(15);
    for (Index l : {1, 2, 3})
        for (Index mo : {1, 2}) {
            const FirFilter f({random_matrix(rng, mo, l), random_matrix(rng, mo, l), random_matrix(rng, mo, l)});
            const IntegerFir fi = quantize_taps(f, 100);
            for (TapMode mode : {TapMode::partial, TapMode::full}) {
                const auto taps = encode_taps<he::MockCiphertext>(fi, mode, m.params(), &m);
                EncryptedHistory<he::MockCiphertext> a(2, l, m.zero()), b(2, l, m.zero());
                for (int k = 0; k < 5; ++k) {
                    std::vector<std::int64_t> y(static_cast<std::size_t>(l), k - 2);
                    HomomorphicOps online, full_ops;
                    const auto deferred = deferred_sum(m, taps, b);
                    const auto v1 = precomputed_step(m, taps, b, deferred, encrypt_input(m, y), &online);
                    const auto v2 = encrypted_step(m, taps, a, encrypt_input(m, y), &full_ops);
                    EXPECT_EQ(online.multiplications, static_cast<std::uint64_t>(l * mo));
                    EXPECT_EQ(full_ops.multiplications, static_cast<std::uint64_t>(3 * l * mo));
                    for (std::size_t i = 0; i < v1.size(); ++i) EXPECT_EQ(m.decrypt(v1[i]), m.decrypt(v2[i]));
                }
            }
        }
}

TEST(PrecomputedStep, OrderZeroDeferredIsZero) {
    const he::MockBackend m(he::default_params());
    const IntegerFir fi = quantize_taps(FirFilter({Matrix::Constant(1, 1, 0.5)}), 10);
    const auto taps = encode_taps<he::MockCiphertext>(fi, TapMode::partial, m.params(), &m);
    EncryptedHistory<he::MockCiphertext> h(0, 1, m.zero());
    h.push({m.encrypt_value(9)});
    const auto d = deferred_sum(m, taps, h);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(m.decrypt_value(d[0]), 0);
}

TEST(DepthAudit, OneInBothModesForAllShapes) {
    for (std::size_t order : {0u, 1u, 2u, 7u, 16u})
        for (Index l : {1, 2, 3})
            for (Index mo : {1, 2}) {
                EXPECT_EQ(depth_audit(order, l, mo, TapMode::partial), 1);
                EXPECT_EQ(depth_audit(order, l, mo, TapMode::full), 1);
            }
}

TEST(DecryptRecover, ZeroAndConstantScale) {
    EXPECT_EQ(recover_fir({0, 0}, 100, 10).norm(), 0.0);
    EXPECT_DOUBLE_EQ(recover_fir({12345}, 100, 10)(0), 12.345);
    const he::MockBackend m(he::default_params());
    EXPECT_DOUBLE_EQ(decrypt_recover(m, std::vector<he::MockCiphertext>{m.encrypt_value(-500)}, 10, 10)(0), -5.0);
}

// ---- baselines -----------------------------------------------------------------------------

TEST(ResetController, PeriodOneHoldsResetState) {
    std::mt19937_64 rng(20);
    const StateSpace sys = random_stable(rng, 3, 2, 1);
    const Vector xr = random_matrix(rng, 3, 1);
    ResetController rc(sys, 1, xr);
    for (int k = 0; k < 10; ++k) {
        const Vector y = random_matrix(rng, 2, 1);
        EXPECT_LE((rc.step(y) - (sys.c * xr + sys.d * y)).norm(), 1e-15);
        EXPECT_EQ(rc.state(), xr);
    }
    EXPECT_THROW(ResetController(sys, 0), Error);
}

TEST(ResetController, FirstPeriodAndLongPeriodEqualSimulate) {
    std::mt19937_64 rng(21);
    StateSpace sys = random_stable(rng, 3, 2, 2);
    sys.x0 = random_matrix(rng, 3, 1);
    const SignalTrace in = random_trace(rng, 50, 2);
    const auto sim = simulate(sys, in, 50);
    ResetController first(sys, 10), endless(sys, 1'000'000);
    for (std::size_t k = 0; k < 50; ++k) {
        const Vector a = first.step(in[k]);
        const Vector b = endless.step(in[k]);
        if (k < 10) EXPECT_EQ(a, sim.outputs[k]);
        EXPECT_EQ(b, sim.outputs[k]);
    }
}

TEST(ResetController, MatchesExplicitForm) {
    std::mt19937_64 rng(22);
    for (std::uint64_t period : {1u, 3u, 8u}) {
        StateSpace sys = random_stable(rng, 3, 1, 2);
        sys.x0 = random_matrix(rng, 3, 1);
        const SignalTrace in = random_trace(rng, 40, 1);
        ResetController rc(sys, period);
        for (std::size_t k = 0; k < 40; ++k) EXPECT_LE((rc.step(in[k]) - reset_explicit_output(sys, sys.x0, period, in, k)).norm(), 1e-9);
    }
}

TEST(ResetEquivalence, RandomControllersPeriodEight) {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 50; ++i) {
        const StateSpace sys = random_stable(rng, 1 + i % 5, 1 + i % 2, 1 + i % 3);
        const EquivalenceReport r = reset_fir_equivalence_check(sys, 8, 80, 100 + i);
        EXPECT_LE(r.max_dev_first_period, 1e-9);
        EXPECT_LE(r.max_dev_before_reset, 1e-9);
        EXPECT_GT(r.max_dev_elsewhere, 1e-9);
        EXPECT_GE(r.checked_equal_steps, 8u + 9u);
    }
}

TEST(ResetEquivalence, CompanionController) {
    const EquivalenceReport r = reset_fir_equivalence_check(benchmark::companion_controller(), 8, 200, 7);
    EXPECT_LE(r.max_dev_first_period, 1e-9);
    EXPECT_LE(r.max_dev_before_reset, 1e-9);
}

namespace {

StateSpace refresh_controller() {
    Matrix a(2, 2);
    a << 0.5, 0.2, -0.1, 0.3;
    return {a, Matrix::Constant(2, 1, 0.4), Matrix::Constant(1, 2, 0.7), Matrix::Constant(1, 1, 0.1)};
}

ScalingProfile refresh_profile(std::uint64_t t) {
    ScalingProfile p = ScalingProfile::uniform(10, BigInt(t));
    return p;
}

} // namespace

TEST(Refresh, LongPeriodBehavesAsIntegerController) {
    const he::HeParams p = he::params_for(256, std::uint64_t{1} << 40);
    const he::MockBackend m(p);
    const StateSpace ctrl = refresh_controller();
    const ScalingProfile prof = refresh_profile(p.t);
    RefreshOptions o;
    o.y_max = 1.0;
    auto session = external_refresh_session(ctrl, prof, 7, m, m, m, o);
    IntegerController ic(ctrl, prof);
    std::mt19937_64 rng(24);
    std::uniform_real_distribution<double> u(-1, 1);
    for (std::uint64_t k = 0; k < 6; ++k) {
        const Vector y = Vector::Constant(1, u(rng));
        const RefreshStep s = session->step(y);
        const IntegerStep is = ic.step(y);
        ASSERT_FALSE(is.overflowed);
        EXPECT_EQ(s.u, recover(is.v, k, prof, RecoveryKind::input));
        EXPECT_FALSE(s.refreshed);
    }
}

TEST(Refresh, TenPeriodsTrackPlaintextWithinBound) {
    const he::HeParams p = he::params_for(256, std::uint64_t{1} << 29);
    he::BfvScheme s(p, 25);
    const StateSpace ctrl = refresh_controller();
    const ScalingProfile prof = refresh_profile(p.t);
    const std::uint64_t period = 5;
    RefreshOptions o;
    o.y_max = 1.0;
    auto session = external_refresh_session(ctrl, prof, period, s.evaluator(), s.encryptor(), s.decryptor(), o);
    IntegerController ic(ctrl, prof);
    RecoveryBoundTracker tracker(ctrl, ic);
    std::mt19937_64 rng(26);
    std::uniform_real_distribution<double> u(-1, 1);
    Vector x = ctrl.x0;
    std::size_t refreshes = 0;
    for (std::uint64_t k = 0; k < 10 * period; ++k) {
        const Vector y = Vector::Constant(1, u(rng));
        const std::uint64_t local = k % period;
        const Vector mag = x.cwiseAbs() + tracker.state_bound();
        const Vector bound = tracker.output_bound(mag, y, local);
        const RefreshStep st = session->step(y);
        const Vector plain = ctrl.c * x + ctrl.d * y;
        EXPECT_LE(std::fabs(st.u(0) - plain(0)), bound(0)) << "k=" << k;
        tracker.advance(mag, y, local);
        x = ctrl.a * x + ctrl.b * y;
        if (st.refreshed) {
            ++refreshes;
            tracker.reinitialized(x.cwiseAbs() + tracker.state_bound());
        }
    }
    EXPECT_EQ(refreshes, 10u);
    EXPECT_EQ(session->sent_by_cloud(loop::MessageType::state_refresh_down), 2u * 10u);
    EXPECT_EQ(session->sent_by_plant(loop::MessageType::state_refresh_up), 2u * 9u);
    EXPECT_EQ(session->sent_by_plant(loop::MessageType::sensor_data), 10u * period);
}

TEST(Refresh, PeriodBeyondOverflowHorizonIsRefused) {
    const he::HeParams p = he::params_for(256, std::uint64_t{1} << 20);
    const he::MockBackend m(p);
    RefreshOptions o;
    o.y_max = 1.0;
    EXPECT_EQ(code_of([&] { (void)external_refresh_session(refresh_controller(), refresh_profile(p.t), 50, m, m, m, o); }),
              ErrorCode::overflow);
}

TEST(Refresh, DroppedRefreshHalts) {
    const he::HeParams p = he::params_for(256, std::uint64_t{1} << 40);
    const he::MockBackend m(p);
    for (bool downlink : {true, false}) {
        RefreshOptions o;
        o.y_max = 1.0;
        o.timeout = loop::Millis(300);
        loop::LossyTransport::Policy drop;
        drop.drop_indices = {1};
        (downlink ? o.downlink_loss : o.uplink_loss) = drop;
        auto session = external_refresh_session(refresh_controller(), refresh_profile(p.t), 3, m, m, m, o);
        const Vector y = Vector::Constant(1, 0.5);
        std::optional<ErrorCode> code;
        std::size_t completed = 0;
        for (int k = 0; k < 20 && !code; ++k) {
            try {
                (void)session->step(y);
                ++completed;
            } catch (const Error& e) {
                code = e.code();
            }
        }
        ASSERT_TRUE(code.has_value()) << (downlink ? "downlink" : "uplink");
        EXPECT_EQ(*code, ErrorCode::transport_failure);
        EXPECT_TRUE(session->halted());
        EXPECT_LE(completed, 7u);
        EXPECT_EQ(code_of([&] { (void)session->step(y); }), ErrorCode::transport_failure);
    }
}
