#pragma once

// Textbook BFV over Z_q[X]/(X^n + 1) with coefficient packing, one multiplicative level per
// unit of HeParams::levels and base-w relinearization.
//
// Encryption is symmetric (secret key). Relinearization material is the only key handed to the
// evaluating party.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "efc/error.hpp"
#include "efc/he/params.hpp"
#include "efc/he/poly.hpp"

namespace efc::he {

struct Plaintext {
    std::vector<std::int64_t> coeffs; ///< centered Z_t

    static Plaintext constant(std::size_t n, std::int64_t v) {
        Plaintext p{std::vector<std::int64_t>(n, 0)};
        p.coeffs[0] = v;
        return p;
    }

    [[nodiscard]] bool is_constant() const {
        return std::all_of(coeffs.begin() + (coeffs.empty() ? 0 : 1), coeffs.end(), [](std::int64_t c) { return c == 0; });
    }

    friend bool operator==(const Plaintext&, const Plaintext&) = default;
};

inline void check_plaintext(const Plaintext& p, const HeParams& params) {
    require(p.coeffs.size() == params.ring_dim, ErrorCode::dimension_mismatch, "plaintext length differs from ring dimension");
    for (auto c : p.coeffs) {
        require(c >= plain_min(params.t) && c <= plain_max(params.t), ErrorCode::overflow,
                "plaintext coefficient outside centered Z_t");
    }
}

struct Ciphertext {
    std::vector<Poly> polys;
    int level = 0;

    [[nodiscard]] std::size_t size() const { return polys.size(); }
    friend bool operator==(const Ciphertext&, const Ciphertext&) = default;
};

struct SecretKey {
    std::vector<std::int8_t> s; ///< ternary
};

struct RelinKey {
    std::vector<std::array<Poly, 2>> parts; ///< (-a_i s + e_i + w^i s^2, a_i)
};

struct KeyMaterial {
    HeParams params;
    std::uint64_t seed = 0;
    SecretKey secret;
    RelinKey relin;
};

/// Parameters plus precomputed transform tables; shared read-only by all roles.
class BfvContext {
public:
    explicit BfvContext(HeParams p, bool allow_ntt = true) : params_(std::move(p)) {
        params_.validate();
        if (allow_ntt) ntt_ = NttTables::build(params_.ring_dim, params_.q_c);
    }

    [[nodiscard]] const HeParams& params() const { return params_; }
    [[nodiscard]] bool has_ntt() const { return ntt_.has_value(); }
    [[nodiscard]] const NttTables* ntt() const { return ntt_ ? &*ntt_ : nullptr; }

    [[nodiscard]] Poly multiply(const Poly& a, const Poly& b) const {
        return ntt_ ? ntt_->multiply(a, b) : negacyclic_schoolbook(a, b, params_.q_c);
    }

    [[nodiscard]] Poly lift(const Plaintext& p) const {
        Poly r(params_.ring_dim);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = reduce(p.coeffs[i], params_.q_c);
        return r;
    }

    /// Delta * m mod q
    [[nodiscard]] Poly encode_scaled(const Plaintext& p) const {
        const std::uint64_t q = params_.q_c;
        const std::uint64_t d = params_.delta();
        Poly r(params_.ring_dim);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = mul_mod(reduce(p.coeffs[i], q), d, q);
        return r;
    }

private:
    HeParams params_;
    std::optional<NttTables> ntt_;
};

namespace detail {

inline Poly sample_uniform(std::mt19937_64& rng, std::size_t n, std::uint64_t q) {
    std::uniform_int_distribution<std::uint64_t> dist(0, q - 1);
    Poly r(n);
    for (auto& c : r) c = dist(rng);
    return r;
}

inline std::vector<std::int64_t> sample_binomial(std::mt19937_64& rng, std::size_t n, int eta) {
    std::vector<std::int64_t> r(n);
    for (auto& c : r) {
        int v = 0;
        int left = eta;
        while (left > 0) {
            const int take = std::min(left, 32);
            const std::uint64_t bits = rng();
            const std::uint64_t mask = take == 32 ? 0xffffffffULL : ((std::uint64_t{1} << take) - 1);
            v += std::popcount(bits & mask) - std::popcount((bits >> 32) & mask);
            left -= take;
        }
        c = v;
    }
    return r;
}

inline Poly to_poly(const std::vector<std::int64_t>& v, std::uint64_t q) {
    Poly r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r[i] = reduce(v[i], q);
    return r;
}

inline Poly secret_poly(const SecretKey& sk, std::uint64_t q) {
    Poly r(sk.s.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = reduce(sk.s[i], q);
    return r;
}

/// round(t * d / q) mod q, halves away from zero
inline std::uint64_t scale_round(const Wide& d, std::uint64_t t, std::uint64_t q) {
    const Wide num = d * Wide(t);
    const Wide qq(q);
    const bool neg = num < 0;
    const Wide mag = neg ? Wide(-num) : num;
    Wide r = (2 * mag + qq) / (2 * qq);
    if (neg) r = -r;
    r %= qq;
    if (r < 0) r += qq;
    return r.convert_to<std::uint64_t>();
}

} // namespace detail

inline KeyMaterial keygen(const HeParams& params, std::uint64_t seed) {
    params.validate();
    const BfvContext ctx(params);
    std::mt19937_64 rng(seed);
    const std::size_t n = params.ring_dim;
    const std::uint64_t q = params.q_c;

    KeyMaterial km;
    km.params = params;
    km.seed = seed;
    km.secret.s.resize(n);
    std::uniform_int_distribution<int> tern(-1, 1);
    for (auto& c : km.secret.s) c = static_cast<std::int8_t>(tern(rng));

    const Poly s = detail::secret_poly(km.secret, q);
    const Poly s2 = ctx.multiply(s, s);
    const int digits = params.digits();
    std::uint64_t power = 1;
    for (int i = 0; i < digits; ++i) {
        Poly a = detail::sample_uniform(rng, n, q);
        const Poly e = detail::to_poly(detail::sample_binomial(rng, n, params.binomial_eta()), q);
        Poly b = poly_add(poly_sub(e, ctx.multiply(a, s), q), poly_scale(s2, power, q), q);
        km.relin.parts.push_back({std::move(b), std::move(a)});
        power = mul_mod(power, params.decomposition_base % q, q);
    }
    return km;
}

class BfvEncryptor {
public:
    BfvEncryptor(std::shared_ptr<const BfvContext> ctx, SecretKey sk, std::uint64_t seed)
        : ctx_(std::move(ctx)), s_(detail::secret_poly(sk, ctx_->params().q_c)), rng_(seed) {
        require(sk.s.size() == ctx_->params().ring_dim, ErrorCode::dimension_mismatch, "secret key length differs from ring dimension");
    }

    [[nodiscard]] Ciphertext encrypt(const Plaintext& p) {
        const HeParams& prm = ctx_->params();
        check_plaintext(p, prm);
        const std::uint64_t q = prm.q_c;
        Poly a = detail::sample_uniform(rng_, prm.ring_dim, q);
        const Poly e = detail::to_poly(detail::sample_binomial(rng_, prm.ring_dim, prm.binomial_eta()), q);
        Poly c0 = poly_add(poly_sub(e, ctx_->multiply(a, s_), q), ctx_->encode_scaled(p), q);
        return {{std::move(c0), std::move(a)}, 0};
    }

    [[nodiscard]] Ciphertext encrypt_value(std::int64_t v) { return encrypt(Plaintext::constant(ctx_->params().ring_dim, v)); }

private:
    std::shared_ptr<const BfvContext> ctx_;
    Poly s_;
    std::mt19937_64 rng_;
};

class BfvDecryptor {
public:
    BfvDecryptor(std::shared_ptr<const BfvContext> ctx, const SecretKey& sk) : ctx_(std::move(ctx)) {
        require(sk.s.size() == ctx_->params().ring_dim, ErrorCode::dimension_mismatch, "secret key length differs from ring dimension");
        s_ = detail::secret_poly(sk, ctx_->params().q_c);
        s2_ = ctx_->multiply(s_, s_);
    }

    [[nodiscard]] Plaintext decrypt(const Ciphertext& c) const {
        const HeParams& prm = ctx_->params();
        const Poly x = phase(c);
        Plaintext p{std::vector<std::int64_t>(prm.ring_dim)};
        for (std::size_t i = 0; i < x.size(); ++i) {
            const u128 m = (u128(x[i]) * prm.t + prm.q_c / 2) / prm.q_c;
            p.coeffs[i] = centered(static_cast<std::uint64_t>(m % prm.t), prm.t);
        }
        return p;
    }

    /// Decrypts and requires every coefficient past the payload to be zero. A noise overflow
    /// scrambles all coefficients, so nonzero padding reveals it with high probability.
    [[nodiscard]] Plaintext decrypt_checked(const Ciphertext& c, std::size_t payload) const {
        Plaintext p = decrypt(c);
        for (std::size_t i = payload; i < p.coeffs.size(); ++i) {
            require(p.coeffs[i] == 0, ErrorCode::noise_overflow, "decryption canary is nonzero: noise exceeded the budget");
        }
        return p;
    }

    [[nodiscard]] std::int64_t decrypt_value(const Ciphertext& c, bool checked = true) const {
        return checked ? decrypt_checked(c, 1).coeffs[0] : decrypt(c).coeffs[0];
    }

    /// log2 of the largest invariant noise |t x - q m| over all coefficients
    [[nodiscard]] double noise_bits(const Ciphertext& c) const {
        const HeParams& prm = ctx_->params();
        const Poly x = phase(c);
        double worst = 0.0;
        for (auto xi : x) {
            const u128 num = u128(xi) * prm.t;
            const u128 m = (num + prm.q_c / 2) / prm.q_c;
            const u128 qm = m * prm.q_c;
            const u128 diff = num > qm ? num - qm : qm - num;
            worst = std::max(worst, static_cast<double>(diff));
        }
        return std::log2(worst + 1.0);
    }

    /// decryption stays correct while noise_bits < budget_bits
    [[nodiscard]] double budget_bits() const { return std::log2(static_cast<double>(ctx_->params().q_c) / 2.0); }

private:
    [[nodiscard]] Poly phase(const Ciphertext& c) const {
        const HeParams& prm = ctx_->params();
        require(c.size() >= 2 && c.size() <= 3, ErrorCode::invalid_argument, "ciphertext must hold 2 or 3 polynomials");
        for (const auto& p : c.polys) require(p.size() == prm.ring_dim, ErrorCode::dimension_mismatch, "ciphertext polynomial has wrong length");
        Poly x = poly_add(c.polys[0], ctx_->multiply(c.polys[1], s_), prm.q_c);
        if (c.size() == 3) x = poly_add(x, ctx_->multiply(c.polys[2], s2_), prm.q_c);
        return x;
    }

    std::shared_ptr<const BfvContext> ctx_;
    Poly s_;
    Poly s2_;
};

/// Homomorphic operations. Holds only public material.
class BfvEvaluator {
public:
    using Ct = Ciphertext;

    BfvEvaluator(std::shared_ptr<const BfvContext> ctx, RelinKey rk) : ctx_(std::move(ctx)), rk_(std::move(rk)) {
        const HeParams& prm = ctx_->params();
        require(static_cast<int>(rk_.parts.size()) == prm.digits(), ErrorCode::invalid_argument, "relinearization key has wrong digit count");
        if (const NttTables* t = ctx_->ntt()) {
            for (const auto& part : rk_.parts) {
                std::array<Poly, 2> f = part;
                t->forward(f[0]);
                t->forward(f[1]);
                rk_ntt_.push_back(std::move(f));
            }
        }
    }

    [[nodiscard]] const HeParams& params() const { return ctx_->params(); }
    [[nodiscard]] const BfvContext& context() const { return *ctx_; }

    /// Transparent encryption of zero (no noise); used for empty history slots.
    [[nodiscard]] Ciphertext zero(int level = 0) const {
        return {{Poly(params().ring_dim, 0), Poly(params().ring_dim, 0)}, level};
    }

    [[nodiscard]] Ciphertext add(const Ciphertext& a, const Ciphertext& b) const {
        check(a);
        check(b);
        const std::uint64_t q = params().q_c;
        const Ciphertext& big = a.size() >= b.size() ? a : b;
        const Ciphertext& small = a.size() >= b.size() ? b : a;
        Ciphertext r{big.polys, std::max(a.level, b.level)};
        for (std::size_t i = 0; i < small.size(); ++i) r.polys[i] = poly_add(r.polys[i], small.polys[i], q);
        return r;
    }

    [[nodiscard]] Ciphertext add_plain(const Ciphertext& a, const Plaintext& p) const {
        check(a);
        check_plaintext(p, params());
        Ciphertext r = a;
        r.polys[0] = poly_add(r.polys[0], ctx_->encode_scaled(p), params().q_c);
        return r;
    }

    [[nodiscard]] Ciphertext mul_plain(const Ciphertext& a, const Plaintext& p) const {
        check(a);
        check_plaintext(p, params());
        const std::uint64_t q = params().q_c;
        Ciphertext r = a;
        if (p.is_constant()) {
            const std::uint64_t c = reduce(p.coeffs[0], q);
            for (auto& poly : r.polys) poly = poly_scale(poly, c, q);
        } else {
            const Poly m = ctx_->lift(p);
            for (auto& poly : r.polys) poly = ctx_->multiply(poly, m);
        }
        return r;
    }

    /// Tensor product scaled by t/q; three polynomials, not yet relinearized.
    [[nodiscard]] Ciphertext mul_raw(const Ciphertext& a, const Ciphertext& b) const {
        check(a);
        check(b);
        require(a.size() == 2 && b.size() == 2, ErrorCode::invalid_argument, "multiplication needs relinearized operands");
        const int level = std::max(a.level, b.level) + 1;
        require(level <= params().levels, ErrorCode::level_exceeded,
                "multiplication would reach level " + std::to_string(level) + " above L = " + std::to_string(params().levels));
        const std::uint64_t q = params().q_c;
        const std::uint64_t t = params().t;
        const auto a0 = centered_coeffs(a.polys[0], q);
        const auto a1 = centered_coeffs(a.polys[1], q);
        const auto b0 = centered_coeffs(b.polys[0], q);
        const auto b1 = centered_coeffs(b.polys[1], q);
        const auto d0 = negacyclic_exact(a0, b0);
        auto d1 = negacyclic_exact(a0, b1);
        const auto d1b = negacyclic_exact(a1, b0);
        const auto d2 = negacyclic_exact(a1, b1);
        const std::size_t n = params().ring_dim;
        Ciphertext r{{Poly(n), Poly(n), Poly(n)}, level};
        for (std::size_t i = 0; i < n; ++i) {
            d1[i] += d1b[i];
            r.polys[0][i] = detail::scale_round(d0[i], t, q);
            r.polys[1][i] = detail::scale_round(d1[i], t, q);
            r.polys[2][i] = detail::scale_round(d2[i], t, q);
        }
        return r;
    }

    [[nodiscard]] Ciphertext relinearize(const Ciphertext& a) const {
        check(a);
        if (a.size() == 2) return a;
        const HeParams& prm = params();
        const std::uint64_t q = prm.q_c;
        const std::size_t n = prm.ring_dim;
        const int bits = prm.base_bits();
        const std::uint64_t mask = prm.decomposition_base - 1;
        const NttTables* t = ctx_->ntt();
        Poly acc0(n, 0);
        Poly acc1(n, 0);
        for (std::size_t i = 0; i < rk_.parts.size(); ++i) {
            Poly digit(n);
            const int shift = static_cast<int>(i) * bits;
            for (std::size_t j = 0; j < n; ++j) digit[j] = shift < 64 ? (a.polys[2][j] >> shift) & mask : 0;
            if (t) {
                t->forward(digit);
                for (std::size_t j = 0; j < n; ++j) {
                    acc0[j] = add_mod(acc0[j], mul_mod(digit[j], rk_ntt_[i][0][j], q), q);
                    acc1[j] = add_mod(acc1[j], mul_mod(digit[j], rk_ntt_[i][1][j], q), q);
                }
            } else {
                acc0 = poly_add(acc0, negacyclic_schoolbook(digit, rk_.parts[i][0], q), q);
                acc1 = poly_add(acc1, negacyclic_schoolbook(digit, rk_.parts[i][1], q), q);
            }
        }
        if (t) {
            t->inverse(acc0);
            t->inverse(acc1);
        }
        return {{poly_add(a.polys[0], acc0, q), poly_add(a.polys[1], acc1, q)}, a.level};
    }

    [[nodiscard]] Ciphertext mul(const Ciphertext& a, const Ciphertext& b) const { return relinearize(mul_raw(a, b)); }

    [[nodiscard]] static int depth(const Ciphertext& c) { return c.level; }

private:
    void check(const Ciphertext& c) const {
        require(c.size() >= 2 && c.size() <= 3, ErrorCode::invalid_argument, "ciphertext must hold 2 or 3 polynomials");
        require(c.level >= 0 && c.level <= params().levels, ErrorCode::level_exceeded, "ciphertext level outside [0, L]");
        for (const auto& p : c.polys) {
            require(p.size() == params().ring_dim, ErrorCode::dimension_mismatch, "ciphertext belongs to different parameters");
        }
    }

    std::shared_ptr<const BfvContext> ctx_;
    RelinKey rk_;
    std::vector<std::array<Poly, 2>> rk_ntt_;
};

/// Bundles all roles for local use (tests, benches, offline tools).
class BfvScheme {
public:
    BfvScheme(const HeParams& params, std::uint64_t seed, bool allow_ntt = true)
        : ctx_(std::make_shared<const BfvContext>(params, allow_ntt)), keys_(keygen(params, seed)),
          enc_(ctx_, keys_.secret, seed ^ 0x9e3779b97f4a7c15ULL), dec_(ctx_, keys_.secret), eval_(ctx_, keys_.relin) {}

    [[nodiscard]] Ciphertext encrypt(const Plaintext& p) { return enc_.encrypt(p); }
    [[nodiscard]] Ciphertext encrypt_value(std::int64_t v) { return enc_.encrypt_value(v); }
    [[nodiscard]] Plaintext decrypt(const Ciphertext& c) const { return dec_.decrypt(c); }
    [[nodiscard]] std::int64_t decrypt_value(const Ciphertext& c) const { return dec_.decrypt_value(c); }

    [[nodiscard]] const BfvEvaluator& evaluator() const { return eval_; }
    [[nodiscard]] const BfvDecryptor& decryptor() const { return dec_; }
    [[nodiscard]] BfvEncryptor& encryptor() { return enc_; }
    [[nodiscard]] const KeyMaterial& keys() const { return keys_; }
    [[nodiscard]] const HeParams& params() const { return ctx_->params(); }
    [[nodiscard]] std::shared_ptr<const BfvContext> context() const { return ctx_; }

private:
    std::shared_ptr<const BfvContext> ctx_;
    KeyMaterial keys_;
    BfvEncryptor enc_;
    BfvDecryptor dec_;
    BfvEvaluator eval_;
};

} // namespace efc::he
