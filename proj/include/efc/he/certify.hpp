#pragma once

// Parameter search: t is a power of two, q_c the largest NTT-friendly prime below 2^63 with
// q_c = 1 mod t (so the q mod t error term of the product stays at 1). Candidates are
// certified by running worst-case depth-1 sum-of-products circuits and measuring the
// invariant noise against the decryption budget.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>

#include "efc/error.hpp"
#include "efc/he/bfv.hpp"
#include "efc/he/params.hpp"

namespace efc::he {

inline constexpr std::uint64_t kTargetPlainModulus = std::uint64_t{1} << 20;
inline constexpr double kRequiredMarginBits = 4.0;

/// Largest prime q < 2^63 with q = 1 mod step.
inline std::uint64_t prime_below_2_63(std::uint64_t step) {
    require(step >= 2 && step < (std::uint64_t{1} << 62), ErrorCode::invalid_argument, "prime step out of range");
    for (std::uint64_t c = ((std::uint64_t{1} << 63) - 2) / step; c > 0; --c) {
        const std::uint64_t q = c * step + 1;
        if (is_prime(q)) return q;
    }
    fail(ErrorCode::infeasible, "no prime of the requested form below 2^63");
}

inline HeParams params_for(std::uint32_t ring_dim, std::uint64_t t, std::uint64_t base = 256) {
    HeParams p;
    p.ring_dim = ring_dim;
    p.t = t;
    p.decomposition_base = base;
    p.q_c = prime_below_2_63(std::lcm(t, 2 * std::uint64_t{ring_dim}));
    p.validate();
    return p;
}

inline HeParams default_params() { return params_for(256, kTargetPlainModulus); }

/// Shape of the circuit to certify: fan_in products summed into one output. Operands are
/// drawn at the given magnitude bounds; zero means the whole of Z_t.
struct Workload {
    std::size_t fan_in = 16;
    std::int64_t tap_bound = 0;
    std::int64_t input_bound = 0;
    bool ciphertext_taps = true;  ///< full mode (ciphertext x ciphertext, one relinearization)
    bool plaintext_taps = true;   ///< partial mode (plaintext x ciphertext)
};

struct Certification {
    HeParams params;
    Workload workload;
    int trials = 0;
    double noise_bits = 0.0;  ///< worst measured invariant noise, log2
    double budget_bits = 0.0; ///< log2(q/2)
    bool decrypted_correctly = true;

    [[nodiscard]] double margin_bits() const { return budget_bits - noise_bits; }
    [[nodiscard]] bool ok(double required = kRequiredMarginBits) const { return decrypted_correctly && margin_bits() >= required; }
};

/// Runs the workload's circuits with operands at their magnitude bounds and measures the
/// invariant noise of the results.
inline Certification certify(const HeParams& params, const Workload& w, std::uint64_t seed, int trials = 4) {
    require(w.fan_in >= 1, ErrorCode::invalid_argument, "fan-in must be positive");
    require(w.tap_bound >= 0 && w.input_bound >= 0, ErrorCode::invalid_argument, "operand bounds must be non-negative");
    BfvScheme scheme(params, seed);
    const auto& ev = scheme.evaluator();
    std::mt19937_64 rng(seed + 1);
    const std::int64_t lo = plain_min(params.t);
    const std::int64_t hi = plain_max(params.t);
    std::uniform_int_distribution<int> coin(0, 1);
    auto extreme = [&](std::int64_t bound) {
        if (bound > 0) {
            require(bound <= hi, ErrorCode::headroom_exceeded, "operand bound does not fit in Z_t");
            return coin(rng) ? bound : -bound;
        }
        return coin(rng) ? hi - static_cast<std::int64_t>(rng() % 16) : lo + static_cast<std::int64_t>(rng() % 16);
    };
    auto wrap = [&](i128 v) {
        const i128 t = static_cast<i128>(params.t);
        i128 r = v % t;
        if (r < 0) r += t;
        return centered(static_cast<std::uint64_t>(r), params.t);
    };
    auto correct = [](const Plaintext& p, std::int64_t want) {
        if (p.coeffs[0] != want) return false;
        return std::all_of(p.coeffs.begin() + 1, p.coeffs.end(), [](std::int64_t c) { return c == 0; });
    };

    Certification cert{params, w, trials, 0.0, scheme.decryptor().budget_bits(), true};
    for (int trial = 0; trial < trials; ++trial) {
        Ciphertext full = ev.zero(std::min(1, params.levels));
        Ciphertext partial = ev.zero();
        i128 want = 0;
        for (std::size_t j = 0; j < w.fan_in; ++j) {
            const std::int64_t a = extreme(w.tap_bound);
            const std::int64_t b = extreme(w.input_bound);
            const Ciphertext cb = scheme.encrypt_value(b);
            if (w.ciphertext_taps) full = ev.add(full, ev.mul_raw(scheme.encrypt_value(a), cb));
            if (w.plaintext_taps) partial = ev.add(partial, ev.mul_plain(cb, Plaintext::constant(params.ring_dim, a)));
            want = wrap(want + i128(a) * b);
        }
        if (w.ciphertext_taps) {
            full = ev.relinearize(full);
            cert.noise_bits = std::max(cert.noise_bits, scheme.decryptor().noise_bits(full));
            cert.decrypted_correctly &= correct(scheme.decrypt(full), static_cast<std::int64_t>(want));
        }
        if (w.plaintext_taps) {
            cert.noise_bits = std::max(cert.noise_bits, scheme.decryptor().noise_bits(partial));
            cert.decrypted_correctly &= correct(scheme.decrypt(partial), static_cast<std::int64_t>(want));
        }
    }
    return cert;
}

/// Full-range operands in both modes.
inline Certification certify(const HeParams& params, std::size_t fan_in, std::uint64_t seed, int trials = 4) {
    Workload w;
    w.fan_in = fan_in;
    return certify(params, w, seed, trials);
}

/// Smallest power-of-two t >= max(2^20, t_min) that certifies. Noise grows with t, so the
/// search stops at the first failure.
inline Certification search_params(std::uint32_t ring_dim, std::uint64_t t_min, const Workload& w, std::uint64_t seed,
                                   double required_margin = kRequiredMarginBits) {
    std::uint64_t t = kTargetPlainModulus;
    while (t < t_min) {
        require(t < (std::uint64_t{1} << 40), ErrorCode::infeasible, "required plaintext modulus is beyond 2^40");
        t <<= 1;
    }
    const Certification cert = certify(params_for(ring_dim, t), w, seed);
    if (!cert.ok(required_margin)) {
        fail(ErrorCode::infeasible, "t = " + std::to_string(t) + " leaves " + std::to_string(cert.margin_bits()) +
                                        " bits of noise margin at fan-in " + std::to_string(w.fan_in) + " (need " +
                                        std::to_string(required_margin) + ")");
    }
    return cert;
}

inline Certification search_params(std::uint32_t ring_dim, std::uint64_t t_min, std::size_t fan_in, std::uint64_t seed,
                                   double required_margin = kRequiredMarginBits) {
    Workload w;
    w.fan_in = fan_in;
    return search_params(ring_dim, t_min, w, seed, required_margin);
}

} // namespace efc::he
