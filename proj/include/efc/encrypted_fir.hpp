#pragma once

// Homomorphic evaluation of the quantized FIR law
//
//   v_f(k) = sum_j round(s6 F_j) round(s7 y(k-j)),   u_f(k) ~ v_f(k) / (s6 s7)
//
// Each tap entry times input entry is one homomorphic product; outputs are accumulated with
// homomorphic additions. Backends: he::BfvEvaluator or he::MockBackend.

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "efc/bigint.hpp"
#include "efc/error.hpp"
#include "efc/fir.hpp"
#include "efc/he/bfv.hpp"
#include "efc/he/certify.hpp"
#include "efc/he/mock.hpp"
#include "efc/quantizer.hpp"

namespace efc {

enum class TapMode { partial, full };

inline const char* to_string(TapMode m) { return m == TapMode::partial ? "partial" : "full"; }

inline TapMode tap_mode_from_string(const std::string& s) {
    if (s == "partial") return TapMode::partial;
    if (s == "full") return TapMode::full;
    fail(ErrorCode::schema_error, "mode must be \"partial\" or \"full\", got \"" + s + "\"");
}

/// round(s6 F_j) for every tap.
struct IntegerFir {
    std::vector<IntMatrix<i128>> taps;
    double s6 = 1.0;

    [[nodiscard]] std::size_t order() const { return taps.size() - 1; }
    [[nodiscard]] Index inputs() const { return taps.front().cols; }
    [[nodiscard]] Index outputs() const { return taps.front().rows; }

    [[nodiscard]] i128 max_abs() const {
        i128 best = 0;
        for (const auto& t : taps)
            for (auto v : t.data) best = std::max(best, abs128(v));
        return best;
    }
};

inline IntegerFir quantize_taps(const FirFilter& f, double s6) {
    IntegerFir out;
    out.s6 = s6;
    for (const auto& t : f.taps) out.taps.push_back(quantize_matrix(t, s6));
    return out;
}

/// (N+1) l max|round(s6 F)| max|round(s7 y)|
inline BigInt headroom_bound(const IntegerFir& f, double s7, double y_max) {
    require(y_max >= 0, ErrorCode::invalid_argument, "y_max must be non-negative");
    const BigInt y_int = abs(quantize_big(y_max, s7));
    return BigInt(f.taps.size()) * BigInt(f.inputs()) * to_big(f.max_abs()) * y_int;
}

inline void check_headroom(const IntegerFir& f, double s7, double y_max, std::uint64_t t) {
    const BigInt bound = headroom_bound(f, s7, y_max);
    require(2 * bound < BigInt(t), ErrorCode::headroom_exceeded,
            "sum bound " + bound.str() + " does not fit below t/2 (t = " + std::to_string(t) + ")");
}

template <class Ct>
struct EncryptedTaps {
    TapMode mode = TapMode::partial;
    IntegerFir integers;
    std::vector<std::vector<he::Plaintext>> plain; ///< [j][row * l + col], partial mode
    std::vector<std::vector<Ct>> cipher;           ///< [j][row * l + col], full mode

    [[nodiscard]] std::size_t order() const { return integers.order(); }
    [[nodiscard]] Index inputs() const { return integers.inputs(); }
    [[nodiscard]] Index outputs() const { return integers.outputs(); }
};

/// Partial mode keeps the taps as plaintexts; full mode encrypts them once with `enc`
/// (anything with encrypt(const Plaintext&)).
template <class Ct, class Encryptor>
EncryptedTaps<Ct> encode_taps(const IntegerFir& f, TapMode mode, const he::HeParams& params, Encryptor* enc) {
    EncryptedTaps<Ct> out;
    out.mode = mode;
    out.integers = f;
    for (const auto& t : f.taps) {
        std::vector<he::Plaintext> row;
        for (auto v : t.data) {
            require(2 * abs128(v) < static_cast<i128>(params.t), ErrorCode::headroom_exceeded, "quantized tap does not fit in Z_t");
            row.push_back(he::Plaintext::constant(params.ring_dim, static_cast<std::int64_t>(v)));
        }
        if (mode == TapMode::full) {
            require(enc != nullptr, ErrorCode::invalid_argument, "full mode needs an encryptor for the taps");
            std::vector<Ct> cts;
            for (const auto& p : row) cts.push_back(enc->encrypt(p));
            out.cipher.push_back(std::move(cts));
        } else {
            out.plain.push_back(std::move(row));
        }
    }
    return out;
}

/// Ciphertexts of round(s7 y(k-j)) for j = 0..N, one per input component; slots before the
/// first sample hold zero ciphertexts.
template <class Ct>
class EncryptedHistory {
public:
    EncryptedHistory(std::size_t order, Index width, Ct zero) : capacity_(order + 1), width_(width), zero_(std::move(zero)) {}

    void push(std::vector<Ct> y) {
        require(static_cast<Index>(y.size()) == width_, ErrorCode::dimension_mismatch, "encrypted input has wrong width");
        buf_.push_front(std::move(y));
        if (buf_.size() > capacity_) buf_.pop_back();
        ++k_;
    }

    [[nodiscard]] const Ct& at(std::size_t lag, Index component) const {
        return lag < buf_.size() ? buf_[lag][static_cast<std::size_t>(component)] : zero_;
    }

    [[nodiscard]] std::uint64_t step_index() const { return k_; }
    [[nodiscard]] std::size_t capacity() const { return capacity_; }
    [[nodiscard]] Index width() const { return width_; }

private:
    std::size_t capacity_;
    Index width_;
    Ct zero_;
    std::deque<std::vector<Ct>> buf_;
    std::uint64_t k_ = 0;
};

struct HomomorphicOps {
    std::uint64_t multiplications = 0;
    std::uint64_t additions = 0;
};

namespace detail {

// sum over lags [first, last] of taps_j (x) hist.at(j + shift); outputs stay unrelinearized
template <class Eval, class Ct>
std::vector<Ct> accumulate(const Eval& ev, const EncryptedTaps<Ct>& taps, const EncryptedHistory<Ct>& hist, std::size_t first,
                           std::size_t last, std::ptrdiff_t shift, HomomorphicOps& ops) {
    const Index l = taps.inputs();
    const Index m = taps.outputs();
    std::vector<Ct> out;
    for (Index i = 0; i < m; ++i) {
        Ct acc = ev.zero(taps.mode == TapMode::full ? 1 : 0);
        bool first_term = true;
        for (std::size_t j = first; j <= last && j <= taps.order(); ++j) {
            const auto lag = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) + shift);
            for (Index c = 0; c < l; ++c) {
                const auto idx = static_cast<std::size_t>(i * l + c);
                Ct term = taps.mode == TapMode::full ? ev.mul_raw(taps.cipher[j][idx], hist.at(lag, c))
                                                     : ev.mul_plain(hist.at(lag, c), taps.plain[j][idx]);
                ++ops.multiplications;
                if (first_term) {
                    acc = std::move(term);
                    first_term = false;
                } else {
                    acc = ev.add(acc, term);
                    ++ops.additions;
                }
            }
        }
        out.push_back(std::move(acc));
    }
    return out;
}

} // namespace detail

/// Pushes enc_y (= Enc(round(s7 y(k)))) and returns Enc(v_f(k)), one ciphertext per output.
template <class Eval, class Ct>
std::vector<Ct> encrypted_step(const Eval& ev, const EncryptedTaps<Ct>& taps, EncryptedHistory<Ct>& hist, std::vector<Ct> enc_y,
                               HomomorphicOps* ops = nullptr) {
    require(hist.capacity() == taps.order() + 1 && hist.width() == taps.inputs(), ErrorCode::dimension_mismatch,
            "history does not match the taps");
    hist.push(std::move(enc_y));
    HomomorphicOps local;
    auto out = detail::accumulate(ev, taps, hist, 0, taps.order(), 0, local);
    for (auto& c : out) c = ev.relinearize(c);
    if (ops) *ops = local;
    return out;
}

/// sum_{j>=1} taps_j (x) y(k-j), computed from the history before y(k) is pushed.
template <class Eval, class Ct>
std::vector<Ct> deferred_sum(const Eval& ev, const EncryptedTaps<Ct>& taps, const EncryptedHistory<Ct>& hist,
                             HomomorphicOps* ops = nullptr) {
    require(hist.capacity() == taps.order() + 1 && hist.width() == taps.inputs(), ErrorCode::dimension_mismatch,
            "history does not match the taps");
    HomomorphicOps local;
    std::vector<Ct> out;
    if (taps.order() == 0) {
        for (Index i = 0; i < taps.outputs(); ++i) out.push_back(ev.zero());
    } else {
        out = detail::accumulate(ev, taps, hist, 1, taps.order(), -1, local);
    }
    if (ops) *ops = local;
    return out;
}

/// Online part: F_0 term plus one addition per output. Pushes enc_y.
template <class Eval, class Ct>
std::vector<Ct> precomputed_step(const Eval& ev, const EncryptedTaps<Ct>& taps, EncryptedHistory<Ct>& hist,
                                 const std::vector<Ct>& deferred, std::vector<Ct> enc_y, HomomorphicOps* ops = nullptr) {
    require(static_cast<Index>(deferred.size()) == taps.outputs(), ErrorCode::dimension_mismatch, "deferred sum has wrong width");
    hist.push(std::move(enc_y));
    HomomorphicOps local;
    auto out = detail::accumulate(ev, taps, hist, 0, 0, 0, local);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = ev.relinearize(ev.add(out[i], deferred[i]));
        ++local.additions;
    }
    if (ops) *ops = local;
    return out;
}

/// round(s7 y) per component, as the sensor computes it before encryption.
inline std::vector<std::int64_t> quantize_input(const Vector& y, double s7, std::uint64_t t) {
    std::vector<std::int64_t> out;
    for (Index i = 0; i < y.size(); ++i) {
        const i128 v = quantize(y(i), s7);
        require(2 * abs128(v) < static_cast<i128>(t), ErrorCode::headroom_exceeded, "scaled input does not fit in Z_t");
        out.push_back(static_cast<std::int64_t>(v));
    }
    return out;
}

template <class Encryptor>
auto encrypt_input(Encryptor& enc, const std::vector<std::int64_t>& y) {
    using Ct = decltype(enc.encrypt_value(std::int64_t{}));
    std::vector<Ct> out;
    for (auto v : y) out.push_back(enc.encrypt_value(v));
    return out;
}

/// u = v / (s6 s7); the scale does not depend on k.
inline Vector recover_fir(const std::vector<std::int64_t>& v, double s6, double s7) {
    Vector u(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) u(static_cast<Index>(i)) = static_cast<double>(v[i]) / (s6 * s7);
    return u;
}

template <class Decryptor, class Ct>
Vector decrypt_recover(const Decryptor& dec, const std::vector<Ct>& v, double s6, double s7) {
    std::vector<std::int64_t> ints;
    for (const auto& c : v) ints.push_back(dec.decrypt_value(c));
    return recover_fir(ints, s6, s7);
}

/// Exact sum_j round(s6 F_j) y_int(k-j); y_hist[j] = round(s7 y(k-j)).
inline std::vector<BigInt> integer_convolution(const IntegerFir& f, const std::vector<std::vector<std::int64_t>>& y_hist) {
    std::vector<BigInt> v(static_cast<std::size_t>(f.outputs()), 0);
    for (std::size_t j = 0; j < f.taps.size() && j < y_hist.size(); ++j) {
        for (Index i = 0; i < f.outputs(); ++i)
            for (Index c = 0; c < f.inputs(); ++c)
                v[static_cast<std::size_t>(i)] += to_big(f.taps[j](i, c)) * BigInt(y_hist[j][static_cast<std::size_t>(c)]);
    }
    return v;
}

/// Per-component bound on |u_f(k) - v(k)/(s6 s7)| from tap and input rounding:
/// sum_j sum_c |y_c(k-j)| / (2 s6) + |round(s6 F)| / (2 s6 s7).
inline Vector fir_recovery_bound(const IntegerFir& f, const InputHistory& h, double s7) {
    Vector b = Vector::Zero(f.outputs());
    for (std::size_t j = 0; j <= f.order(); ++j) {
        const Vector y = h.at(j);
        for (Index i = 0; i < f.outputs(); ++i)
            for (Index c = 0; c < f.inputs(); ++c) {
                const double tap = static_cast<double>(abs128(f.taps[j](i, c))) / f.s6;
                b(i) += std::fabs(y(c)) / (2.0 * f.s6) + tap / (2.0 * s7) + 1.0 / (4.0 * f.s6 * s7);
            }
    }
    return b.array() * (1.0 + 1e-12) + 1e-12;
}

/// What a sensor/cloud pair needs to agree on before the first sample.
struct FirSessionConfig {
    FirFilter filter;
    TapMode mode = TapMode::partial;
    double s6 = 100.0;
    double s7 = 10.0;
    double y_max = 200.0;   ///< design bound on |y|_inf used for the headroom rule
    bool precompute = false; ///< cloud accumulates the j >= 1 terms between samples
};

/// Operand bounds of the session's circuit, for certification.
inline he::Workload fir_workload(const IntegerFir& f, double s7, double y_max, TapMode mode) {
    he::Workload w;
    w.fan_in = f.taps.size() * static_cast<std::size_t>(f.inputs());
    const i128 tap = std::max<i128>(f.max_abs(), 1);
    const i128 in = std::max<i128>(abs128(quantize(y_max, s7)), 1);
    require(tap < (i128(1) << 62) && in < (i128(1) << 62), ErrorCode::headroom_exceeded, "operand bounds beyond 62 bits");
    w.tap_bound = static_cast<std::int64_t>(tap);
    w.input_bound = static_cast<std::int64_t>(in);
    w.ciphertext_taps = mode == TapMode::full;
    w.plaintext_taps = mode == TapMode::partial;
    return w;
}

/// Smallest certified power-of-two t that satisfies the headroom rule for this session.
inline he::Certification select_session_params(const FirSessionConfig& cfg, std::uint32_t ring_dim, std::uint64_t seed) {
    const IntegerFir f = quantize_taps(cfg.filter, cfg.s6);
    const BigInt bound = headroom_bound(f, cfg.s7, cfg.y_max);
    require(bound < (BigInt(1) << 40), ErrorCode::infeasible, "headroom bound " + bound.str() + " needs t beyond 2^41");
    const auto t_min = static_cast<std::uint64_t>(2 * bound + 1);
    return he::search_params(ring_dim, t_min, fir_workload(f, cfg.s7, cfg.y_max, cfg.mode), seed);
}

/// Largest multiplicative depth of encrypted_step at the given sizes, measured on the mock backend.
inline int depth_audit(std::size_t order, Index l, Index m, TapMode mode) {
    he::HeParams p;
    p.ring_dim = 1;
    p.t = std::uint64_t{1} << 40;
    p.q_c = std::uint64_t{1} << 62;
    const he::MockBackend mock(p);
    IntegerFir f;
    f.s6 = 1.0;
    for (std::size_t j = 0; j <= order; ++j) {
        IntMatrix<i128> t(m, l);
        for (auto& v : t.data) v = static_cast<i128>(j % 5) + 1;
        f.taps.push_back(t);
    }
    auto taps = encode_taps<he::MockCiphertext>(f, mode, p, &mock);
    EncryptedHistory<he::MockCiphertext> hist(order, l, mock.zero());
    int depth = 0;
    for (std::size_t k = 0; k < order + 2; ++k) {
        std::vector<std::int64_t> y(static_cast<std::size_t>(l), static_cast<std::int64_t>(k % 3) + 1);
        for (const auto& c : encrypted_step(mock, taps, hist, encrypt_input(mock, y))) depth = std::max(depth, he::MockBackend::depth(c));
    }
    return depth;
}

/// Depths of (z1+z2)(z3+z4), z1 z2 + z3 z4 and (z1 z2)(z3+z4) on a two-level mock.
inline std::array<int, 3> circuit_depths() {
    he::HeParams p;
    p.ring_dim = 1;
    p.t = std::uint64_t{1} << 40;
    p.q_c = std::uint64_t{1} << 62;
    p.levels = 2;
    const he::MockBackend mock(p);
    const auto z1 = mock.encrypt_value(3), z2 = mock.encrypt_value(-5), z3 = mock.encrypt_value(7), z4 = mock.encrypt_value(2);
    const auto a = mock.mul(mock.add(z1, z2), mock.add(z3, z4));
    const auto b = mock.add(mock.mul(z1, z2), mock.mul(z3, z4));
    const auto c = mock.mul(mock.mul(z1, z2), mock.add(z3, z4));
    return {he::MockBackend::depth(a), he::MockBackend::depth(b), he::MockBackend::depth(c)};
}

} // namespace efc
