#pragma once

#include <random>

#include "efc/encrypted_fir.hpp"

namespace efc::testing {

struct ExactRun {
    std::size_t steps = 0;
    std::size_t mismatches = 0;
    std::size_t outside_bound = 0;
};

/// Runs encrypted_step (and, when asked, the precomputed variant) on random inputs and compares
/// every decrypted value with the exact integer convolution.
template <class Eval, class Enc, class Dec>
ExactRun run_exact(const Eval& ev, Enc& enc, const Dec& dec, const FirFilter& filter, TapMode mode, double s6, double s7, double y_max,
                   std::size_t steps, std::uint64_t seed, bool precompute = false) {
    using Ct = typename Eval::Ct;
    const he::HeParams& p = ev.params();
    const IntegerFir fi = quantize_taps(filter, s6);
    check_headroom(fi, s7, y_max, p.t);
    const auto taps = encode_taps<Ct>(fi, mode, p, &enc);
    EncryptedHistory<Ct> hist(fi.order(), fi.inputs(), ev.zero());
    InputHistory plain(fi.order(), fi.inputs());
    std::vector<std::vector<std::int64_t>> yint;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-y_max, y_max);
    ExactRun r;
    for (std::size_t k = 0; k < steps; ++k) {
        Vector y(fi.inputs());
        for (Index i = 0; i < y.size(); ++i) y(i) = u(rng);
        const auto q = quantize_input(y, s7, p.t);
        yint.insert(yint.begin(), q);
        if (yint.size() > fi.taps.size()) yint.pop_back();
        plain.push(y);
        std::vector<Ct> v;
        if (precompute) {
            const auto deferred = deferred_sum(ev, taps, hist);
            v = precomputed_step(ev, taps, hist, deferred, encrypt_input(enc, q));
        } else {
            v = encrypted_step(ev, taps, hist, encrypt_input(enc, q));
        }
        const auto want = integer_convolution(fi, yint);
        std::vector<std::int64_t> got;
        for (std::size_t i = 0; i < v.size(); ++i) {
            got.push_back(dec.decrypt_value(v[i]));
            if (BigInt(got.back()) != want[i]) ++r.mismatches;
        }
        const Vector rec = recover_fir(got, s6, s7);
        const Vector bound = fir_recovery_bound(fi, plain, s7);
        const Vector ref = evaluate_fir(filter, plain);
        for (Index i = 0; i < rec.size(); ++i)
            if (std::fabs(rec(i) - ref(i)) > bound(i)) ++r.outside_bound;
        ++r.steps;
    }
    return r;
}

} // namespace efc::testing
