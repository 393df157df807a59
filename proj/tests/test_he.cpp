#include <gtest/gtest.h>

#include <random>

#include "efc/encrypted_fir.hpp"
#include "efc/he/certify.hpp"
#include "efc/he/wire.hpp"

using namespace efc;
using namespace efc::he;

namespace {

Plaintext random_plain(std::mt19937_64& rng, const HeParams& p, std::int64_t bound = 0) {
    const std::int64_t lo = bound ? -bound : plain_min(p.t);
    const std::int64_t hi = bound ? bound : plain_max(p.t);
    std::uniform_int_distribution<std::int64_t> d(lo, hi);
    Plaintext out{std::vector<std::int64_t>(p.ring_dim)};
    for (auto& c : out.coeffs) c = d(rng);
    return out;
}

std::int64_t wrap_t(i128 v, std::uint64_t t) { return static_cast<std::int64_t>(wrap128(v, static_cast<i128>(t))); }

Plaintext reduce_t(const std::vector<Wide>& v, std::uint64_t t) {
    Plaintext p{std::vector<std::int64_t>(v.size())};
    for (std::size_t i = 0; i < v.size(); ++i) {
        Wide r = v[i] % Wide(t);
        if (r < 0) r += t;
        p.coeffs[i] = centered(static_cast<std::uint64_t>(r), t);
    }
    return p;
}

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

} // namespace

TEST(Keygen, DeterministicUnderSeed) {
    const HeParams p = default_params();
    const KeyMaterial a = keygen(p, 42), b = keygen(p, 42), c = keygen(p, 43);
    EXPECT_EQ(a.secret.s, b.secret.s);
    ASSERT_EQ(a.relin.parts.size(), b.relin.parts.size());
    for (std::size_t i = 0; i < a.relin.parts.size(); ++i) EXPECT_EQ(a.relin.parts[i], b.relin.parts[i]);
    EXPECT_NE(a.secret.s, c.secret.s);
    EXPECT_THROW(keygen(HeParams{}, 1), Error);
}

TEST(Bfv, RoundTripRandomPlaintexts) {
    BfvScheme s(default_params(), 1);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 1000; ++i) {
        const Plaintext p = random_plain(rng, s.params());
        ASSERT_EQ(s.decrypt(s.encrypt(p)), p) << i;
    }
}

TEST(Bfv, ZeroAndRandomization) {
    BfvScheme s(default_params(), 3);
    const auto z = s.encrypt_value(0);
    EXPECT_EQ(s.decrypt_value(z), 0);
    EXPECT_NE(s.encrypt_value(5), s.encrypt_value(5));
}

TEST(Bfv, ExhaustiveSmallModulus) {
    for (std::uint64_t t : {2u, 3u, 16u, 257u}) {
        BfvScheme s(params_for(64, t), 4);
        for (std::int64_t v = plain_min(t); v <= plain_max(t); ++v) {
            Plaintext p{std::vector<std::int64_t>(64, v)};
            ASSERT_EQ(s.decrypt(s.encrypt(p)), p) << "t=" << t << " v=" << v;
        }
    }
}

TEST(Bfv, AddExamples) {
    BfvScheme s(default_params(), 5);
    const auto& ev = s.evaluator();
    EXPECT_EQ(s.decrypt_value(ev.add(s.encrypt_value(3), s.encrypt_value(4))), 7);
    const auto a = s.encrypt_value(-91);
    EXPECT_EQ(s.decrypt_value(ev.add(a, s.encrypt_value(0))), -91);
    EXPECT_EQ(s.decrypt_value(ev.add_plain(a, Plaintext::constant(256, 100))), 9);
}

TEST(Bfv, RandomAddsMatchPlaintextAdder) {
    BfvScheme s(default_params(), 6);
    const auto& ev = s.evaluator();
    const std::uint64_t t = s.params().t;
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::int64_t> d(plain_min(t), plain_max(t));
    for (int i = 0; i < 10000; ++i) {
        const std::int64_t a = d(rng), b = d(rng);
        ASSERT_EQ(s.decrypt_value(ev.add(s.encrypt_value(a), s.encrypt_value(b))), wrap_t(i128(a) + b, t)) << a << " " << b;
    }
    for (int i = 0; i < 20; ++i) {
        const Plaintext a = random_plain(rng, s.params()), b = random_plain(rng, s.params());
        Plaintext want = a;
        for (std::size_t j = 0; j < want.coeffs.size(); ++j) want.coeffs[j] = wrap_t(i128(a.coeffs[j]) + b.coeffs[j], t);
        EXPECT_EQ(s.decrypt(ev.add(s.encrypt(a), s.encrypt(b))), want);
        EXPECT_EQ(s.decrypt(ev.add_plain(s.encrypt(a), b)), want);
    }
}

TEST(Bfv, MulExamplesAndNegacyclicProducts) {
    BfvScheme s(default_params(), 8);
    const auto& ev = s.evaluator();
    const std::uint64_t t = s.params().t;
    EXPECT_EQ(s.decrypt_value(ev.mul(s.encrypt_value(3), s.encrypt_value(4))), 12);
    EXPECT_EQ(s.decrypt_value(ev.mul_plain(s.encrypt_value(3), Plaintext::constant(256, -4))), -12);
    std::mt19937_64 rng(9);
    for (int i = 0; i < 10; ++i) {
        const Plaintext a = random_plain(rng, s.params(), 30), b = random_plain(rng, s.params(), 30);
        const Plaintext want = reduce_t(negacyclic_exact(a.coeffs, b.coeffs), t);
        EXPECT_EQ(s.decrypt(ev.mul(s.encrypt(a), s.encrypt(b))), want);
        EXPECT_EQ(s.decrypt(ev.mul_plain(s.encrypt(a), b)), want);
    }
    std::uniform_int_distribution<std::int64_t> d(plain_min(t), plain_max(t));
    for (int i = 0; i < 200; ++i) {
        const std::int64_t a = d(rng), b = d(rng);
        ASSERT_EQ(s.decrypt_value(ev.mul(s.encrypt_value(a), s.encrypt_value(b))), wrap_t(i128(a) * b, t));
    }
}

TEST(Bfv, RelinearizationAcrossGrid) {
    std::mt19937_64 rng(10);
    for (std::uint32_t n : {128u, 256u}) {
        for (std::uint64_t w : {16u, 256u}) {
            BfvScheme s(params_for(n, std::uint64_t{1} << 20, w), 11 + n + w);
            const auto& ev = s.evaluator();
            const std::uint64_t t = s.params().t;
            std::uniform_int_distribution<std::int64_t> d(plain_min(t), plain_max(t));
            for (int i = 0; i < 50; ++i) {
                const std::int64_t a = d(rng), b = d(rng);
                const Ciphertext raw = ev.mul_raw(s.encrypt_value(a), s.encrypt_value(b));
                EXPECT_EQ(raw.size(), 3u);
                const Ciphertext rl = ev.relinearize(raw);
                EXPECT_EQ(rl.size(), 2u);
                ASSERT_EQ(s.decrypt_value(rl), wrap_t(i128(a) * b, t)) << "n=" << n << " w=" << w;
            }
        }
    }
}

TEST(Bfv, DepthTwoRefusedUnderOneLevel) {
    BfvScheme s(default_params(), 12);
    const auto& ev = s.evaluator();
    const auto ab = ev.mul(s.encrypt_value(2), s.encrypt_value(3));
    EXPECT_EQ(ab.level, 1);
    EXPECT_EQ(code_of([&] { (void)ev.mul(ab, s.encrypt_value(4)); }), ErrorCode::level_exceeded);
    // plaintext products do not consume a level
    EXPECT_EQ(ev.mul_plain(ab, Plaintext::constant(256, 2)).level, 1);
    EXPECT_EQ(s.decrypt_value(ev.add(ab, s.encrypt_value(1))), 7);
}

TEST(Bfv, NoiseGrowsUnderOperations) {
    BfvScheme s(default_params(), 13);
    const auto& ev = s.evaluator();
    const auto& dec = s.decryptor();
    std::mt19937_64 rng(14);
    for (int i = 0; i < 20; ++i) {
        const auto a = s.encrypt(random_plain(rng, s.params(), 1000));
        const auto b = s.encrypt(random_plain(rng, s.params(), 1000));
        const double na = dec.noise_bits(a), nb = dec.noise_bits(b);
        EXPECT_GE(dec.noise_bits(ev.add(a, a)), na);
        EXPECT_GE(dec.noise_bits(ev.mul(a, b)), std::max(na, nb));
        EXPECT_GE(dec.noise_bits(ev.mul_plain(a, Plaintext::constant(256, 1000))), na);
        EXPECT_LT(dec.noise_bits(a), dec.budget_bits());
    }
}

TEST(Bfv, DeterministicCiphertextStreams) {
    BfvScheme a(default_params(), 15), b(default_params(), 15);
    for (int i = 0; i < 10; ++i) {
        const auto ca = a.encrypt_value(i), cb = b.encrypt_value(i);
        EXPECT_EQ(to_bytes(ca), to_bytes(cb));
    }
}

TEST(Bfv, CanaryCatchesNoiseOverflow) {
    BfvScheme s(default_params(), 16);
    Ciphertext c = s.encrypt_value(5);
    std::mt19937_64 rng(17);
    c.polys[0] = he::detail::sample_uniform(rng, 256, s.params().q_c);
    EXPECT_EQ(code_of([&] { (void)s.decryptor().decrypt_value(c, true); }), ErrorCode::noise_overflow);
}

TEST(Bfv, NttMatchesSchoolbook) {
    const HeParams p = default_params();
    const BfvContext fast(p, true), slow(p, false);
    ASSERT_TRUE(fast.has_ntt());
    ASSERT_FALSE(slow.has_ntt());
    std::mt19937_64 rng(18);
    for (int i = 0; i < 10; ++i) {
        const Poly a = he::detail::sample_uniform(rng, 256, p.q_c), b = he::detail::sample_uniform(rng, 256, p.q_c);
        EXPECT_EQ(fast.multiply(a, b), slow.multiply(a, b));
    }
}

TEST(Mock, MirrorsBfvExamples) {
    const MockBackend m(default_params());
    EXPECT_EQ(m.decrypt_value(m.add(m.encrypt_value(3), m.encrypt_value(4))), 7);
    EXPECT_EQ(m.decrypt_value(m.mul(m.encrypt_value(3), m.encrypt_value(4))), 12);
    EXPECT_EQ(m.decrypt_value(m.encrypt_value(0)), 0);
    const auto ab = m.mul(m.encrypt_value(2), m.encrypt_value(3));
    EXPECT_EQ(code_of([&] { (void)m.mul(ab, m.encrypt_value(4)); }), ErrorCode::level_exceeded);
}

TEST(Mock, FlagsMagnitudeWhereBfvWraps) {
    const HeParams p = params_for(64, 257);
    const MockBackend m(p);
    BfvScheme s(p, 19);
    const auto& ev = s.evaluator();
    // 20 * 20 = 400 leaves [-128, 128]
    EXPECT_EQ(code_of([&] { (void)m.mul(m.encrypt_value(20), m.encrypt_value(20)); }), ErrorCode::overflow);
    const std::int64_t real = s.decrypt_value(ev.mul(s.encrypt_value(20), s.encrypt_value(20)));
    EXPECT_NE(real, 400);
    EXPECT_EQ(real, wrap_t(400, 257));
    EXPECT_EQ(code_of([&] { (void)m.encrypt_value(129); }), ErrorCode::overflow);
    EXPECT_NO_THROW((void)m.encrypt_value(128));
}

TEST(Mock, CircuitDepths) {
    const auto d = circuit_depths();
    EXPECT_EQ(d[0], 1);
    EXPECT_EQ(d[1], 1);
    EXPECT_EQ(d[2], 2);
}

TEST(Mock, RandomDepthOneCircuitsAgreeWithBfv) {
    const HeParams p = default_params();
    BfvScheme s(p, 20);
    const auto& ev = s.evaluator();
    const MockBackend m(p);
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<std::int64_t> val(-100, 100);
    std::uniform_int_distribution<int> op(0, 3);
    for (int circuit = 0; circuit < 10000; ++circuit) {
        const int inputs = 1 + circuit % 8;
        std::vector<Ciphertext> real;
        std::vector<MockCiphertext> mock;
        for (int i = 0; i < inputs; ++i) {
            const std::int64_t v = val(rng);
            real.push_back(s.encrypt_value(v));
            mock.push_back(m.encrypt_value(v));
        }
        Ciphertext acc_r = ev.zero();
        MockCiphertext acc_m = m.zero();
        for (int i = 0; i < inputs; ++i) {
            const auto j = static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(inputs));
            const Plaintext c = Plaintext::constant(p.ring_dim, val(rng));
            switch (op(rng)) {
            case 0:
                acc_r = ev.add(acc_r, real[i]);
                acc_m = m.add(acc_m, mock[i]);
                break;
            case 1:
                acc_r = ev.add(acc_r, ev.mul_plain(real[i], c));
                acc_m = m.add(acc_m, m.mul_plain(mock[i], c));
                break;
            case 2:
                acc_r = ev.add(acc_r, ev.mul(real[i], real[j]));
                acc_m = m.add(acc_m, m.mul(mock[i], mock[j]));
                break;
            default:
                acc_r = ev.add_plain(acc_r, c);
                acc_m = m.add_plain(acc_m, c);
                break;
            }
        }
        ASSERT_EQ(s.decrypt(acc_r), m.decrypt(acc_m)) << "circuit " << circuit;
        ASSERT_LE(MockBackend::level(acc_m), 1);
    }
}

TEST(Wire, RoundTripAndLayout) {
    const HeParams p = default_params();
    BfvScheme s(p, 22);
    const Ciphertext c = s.evaluator().mul(s.encrypt_value(3), s.encrypt_value(5));
    const Bytes b = to_bytes(c);
    ASSERT_EQ(b.size(), 4u + 2u + 2u * 256u * 8u);
    EXPECT_EQ(b[0] | (b[1] << 8) | (b[2] << 16) | (b[3] << 24), static_cast<int>(b.size() - 4));
    EXPECT_EQ(b[4], 2);
    EXPECT_EQ(b[5], 1);
    std::uint64_t first = 0;
    for (int i = 0; i < 8; ++i) first |= std::uint64_t{b[6 + i]} << (8 * i);
    EXPECT_EQ(first, c.polys[0][0]);
    EXPECT_EQ(from_bytes<Ciphertext>(b, p), c);

    const MockBackend m(p);
    const MockCiphertext mc = m.encrypt_value(-77);
    const MockCiphertext back = from_bytes<MockCiphertext>(to_bytes(mc), p);
    EXPECT_EQ(back.values, mc.values);
    EXPECT_EQ(back.level, mc.level);

    Bytes bad = b;
    bad.push_back(0);
    EXPECT_EQ(code_of([&] { (void)from_bytes<Ciphertext>(bad, p); }), ErrorCode::protocol_error);
    bad = b;
    bad[5] = 2;
    EXPECT_EQ(code_of([&] { (void)from_bytes<Ciphertext>(bad, p); }), ErrorCode::protocol_error);
}

TEST(Certify, DefaultParamsHaveMargin) {
    const Certification c = certify(default_params(), 16, 23);
    EXPECT_TRUE(c.ok()) << c.margin_bits();
    EXPECT_TRUE(c.decrypted_correctly);
    Workload w;
    w.fan_in = 3;
    w.tap_bound = 5100;
    w.input_bound = 2000;
    w.ciphertext_taps = false;
    const Certification partial = search_params(256, std::uint64_t{1} << 29, w, 24);
    EXPECT_EQ(partial.params.t, std::uint64_t{1} << 29);
    EXPECT_TRUE(partial.ok());
}

TEST(Params, Validation) {
    HeParams p = default_params();
    EXPECT_NO_THROW(p.validate());
    p.ring_dim = 100;
    EXPECT_THROW(p.validate(), Error);
    p = default_params();
    p.levels = 0;
    EXPECT_THROW(p.validate(), Error);
    p = default_params();
    p.t = p.q_c + 1;
    EXPECT_THROW(p.validate(), Error);
    EXPECT_NE(std::string(toy_marker()).find("TOY"), std::string::npos);
}
