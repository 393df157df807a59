#pragma once

// FIR approximations of linear dynamic controllers:
//
//   u_f(k) = sum_{j=0}^{N} F_j y(k-j),   y(j) = 0 for j < 0

#include <algorithm>
#include <cstdint>
#include <deque>
#include <utility>
#include <vector>

#include "efc/error.hpp"
#include "efc/lti.hpp"

namespace efc {

struct FirFilter {
    std::vector<Matrix> taps; ///< F_0 .. F_N

    FirFilter() = default;
    explicit FirFilter(std::vector<Matrix> t) : taps(std::move(t)) {
        require(!taps.empty(), ErrorCode::invalid_argument, "FIR filter needs at least one tap");
        for (const auto& f : taps) {
            require(f.rows() == taps.front().rows() && f.cols() == taps.front().cols(),
                    ErrorCode::dimension_mismatch, "all FIR taps must share dimensions");
        }
    }

    [[nodiscard]] std::size_t order() const { return taps.size() - 1; }
    [[nodiscard]] Index inputs() const { return taps.front().cols(); }
    [[nodiscard]] Index outputs() const { return taps.front().rows(); }
};

/// Holds y(k), y(k-1), ..., y(k-N); anything older than the first push reads as zero.
class InputHistory {
public:
    InputHistory(std::size_t order, Index width) : capacity_(order + 1), width_(width) {}

    void push(const Vector& y) {
        require(y.size() == width_, ErrorCode::dimension_mismatch, "history input has wrong width");
        buf_.push_front(y);
        if (buf_.size() > capacity_) buf_.pop_back();
    }

    /// y(k - lag)
    [[nodiscard]] Vector at(std::size_t lag) const {
        return lag < buf_.size() ? buf_[lag] : Vector(Vector::Zero(width_));
    }

    [[nodiscard]] std::size_t capacity() const { return capacity_; }
    [[nodiscard]] Index width() const { return width_; }

private:
    std::size_t capacity_;
    Index width_;
    std::deque<Vector> buf_;
};

/// F_0 = D, F_j = C A^{j-1} B. Callers should check is_schur(ctrl.a) first; the truncated
/// tail only vanishes for Schur stable controllers.
inline FirFilter window_fir(const StateSpace& ctrl, std::size_t order) {
    return FirFilter(markov_parameters(ctrl, order));
}

/// Block-shift realization. The states hold y(k-1), ..., y(k-N). N = 0 yields a pure gain
/// with one inert state.
inline StateSpace fir_to_statespace(const FirFilter& f) {
    const std::size_t n_taps = f.order();
    if (n_taps == 0) return StateSpace::gain(f.taps[0]);
    const Index l = f.inputs();
    const Index m = f.outputs();
    const Index n = static_cast<Index>(n_taps) * l;
    Matrix a = Matrix::Zero(n, n);
    for (Index blk = 1; blk < static_cast<Index>(n_taps); ++blk) {
        a.block(blk * l, (blk - 1) * l, l, l).setIdentity();
    }
    Matrix b = Matrix::Zero(n, l);
    b.topRows(l).setIdentity();
    Matrix c(m, n);
    for (std::size_t j = 1; j <= n_taps; ++j) c.block(0, static_cast<Index>(j - 1) * l, m, l) = f.taps[j];
    return {a, b, c, f.taps[0]};
}

/// Inverse of fir_to_statespace on the (C_f, D_f) blocks.
inline FirFilter taps_from_blocks(const Matrix& c_f, const Matrix& d_f, std::size_t order) {
    std::vector<Matrix> taps{d_f};
    const Index l = d_f.cols();
    for (std::size_t j = 1; j <= order; ++j) taps.push_back(c_f.block(0, static_cast<Index>(j - 1) * l, d_f.rows(), l));
    return FirFilter(std::move(taps));
}

inline Vector evaluate_fir(const FirFilter& f, const InputHistory& h) {
    require(h.width() == f.inputs(), ErrorCode::dimension_mismatch, "history width does not match the filter");
    Vector u = Vector::Zero(f.outputs());
    for (std::size_t j = 1; j <= f.order(); ++j) u += f.taps[j] * h.at(j);
    // same association as precompute_split, so immediate + deferred matches bit for bit
    return Vector(f.taps[0] * h.at(0)) + u;
}

struct PrecomputeSplit {
    Vector immediate; ///< F_0 y(k), needs y(k)
    Vector deferred;  ///< sum_{j>=1} F_j y(k-j), available before y(k) arrives
};

inline PrecomputeSplit precompute_split(const FirFilter& f, const InputHistory& h) {
    require(h.width() == f.inputs(), ErrorCode::dimension_mismatch, "history width does not match the filter");
    PrecomputeSplit s{f.taps[0] * h.at(0), Vector::Zero(f.outputs())};
    for (std::size_t j = 1; j <= f.order(); ++j) s.deferred += f.taps[j] * h.at(j);
    return s;
}

struct InverseWeight {
    StateSpace system;
    bool regularized = false; ///< D was singular or non-square; a ridge pseudo-inverse was used
};

/// Causal inverse (A - B D^-1 C, B D^-1, -D^-1 C, D^-1).
inline InverseWeight causal_inverse_weight(const StateSpace& ctrl, double ridge = 1e-6) {
    const Matrix& d = ctrl.d;
    Matrix d_inv;
    bool regularized = false;
    if (d.rows() == d.cols()) {
        Eigen::FullPivLU<Matrix> lu(d);
        const Eigen::JacobiSVD<Matrix> svd(d);
        const auto& sv = svd.singularValues();
        const bool well_conditioned = sv.size() > 0 && sv(sv.size() - 1) > 1e-12 * std::max(1.0, sv(0));
        if (lu.isInvertible() && well_conditioned) d_inv = lu.inverse();
    }
    if (d_inv.size() == 0) {
        regularized = true;
        const Index l = d.cols();
        d_inv = (d.transpose() * d + ridge * Matrix::Identity(l, l)).ldlt().solve(d.transpose());
    }
    StateSpace inv(ctrl.a - ctrl.b * d_inv * ctrl.c, ctrl.b * d_inv, -d_inv * ctrl.c, d_inv);
    return {std::move(inv), regularized};
}

/// Weighted approximation error e = (FIR - IIR) G_w w with states (x_w, x, x_f).
/// The feedthrough is (D_f - D) D_w.
inline StateSpace assemble_error_system(const StateSpace& iir, const FirFilter& f, const StateSpace& weight) {
    require(weight.outputs() == iir.inputs(), ErrorCode::dimension_mismatch, "weight output must feed the controller");
    require(f.inputs() == iir.inputs() && f.outputs() == iir.outputs(), ErrorCode::dimension_mismatch,
            "filter and controller widths differ");
    const StateSpace fir = fir_to_statespace(f);
    const Index nw = weight.states();
    const Index n = iir.states();
    const Index nf = fir.states();
    const Index ne = nw + n + nf;

    Matrix a = Matrix::Zero(ne, ne);
    a.block(0, 0, nw, nw) = weight.a;
    a.block(nw, 0, n, nw) = iir.b * weight.c;
    a.block(nw, nw, n, n) = iir.a;
    a.block(nw + n, 0, nf, nw) = fir.b * weight.c;
    a.block(nw + n, nw + n, nf, nf) = fir.a;

    Matrix b(ne, weight.inputs());
    b << weight.b, iir.b * weight.d, fir.b * weight.d;

    Matrix c(iir.outputs(), ne);
    c << (fir.d - iir.d) * weight.c, -iir.c, fir.c;

    Matrix d = (fir.d - iir.d) * weight.d;
    return {a, b, c, d};
}

struct OpCount {
    std::uint64_t multiplications = 0;
    std::uint64_t additions = 0;

    friend bool operator==(const OpCount&, const OpCount&) = default;
};

struct OpCounts {
    OpCount fir;
    OpCount iir;
};

/// FIR: lm(N+1) multiplications, m(N+l-1) additions.
/// Integer IIR: (l+n)(m+n) multiplications, (l+n)(m+n-1) additions.
inline OpCounts opcounts(std::uint64_t order, std::uint64_t l, std::uint64_t m, std::uint64_t n) {
    require(l > 0 && m > 0 && n > 0, ErrorCode::invalid_argument, "dimensions must be positive");
    return {{l * m * (order + 1), m * (order + l - 1)}, {(l + n) * (m + n), (l + n) * (m + n - 1)}};
}

/// FIR orders strictly below this value need fewer operations than the IIR controller.
inline double efficient_order_bound(std::uint64_t l, std::uint64_t m, std::uint64_t n) {
    require(l > 0 && m > 0 && n > 0, ErrorCode::invalid_argument, "dimensions must be positive");
    const auto ld = static_cast<double>(l);
    const auto md = static_cast<double>(m);
    const auto nd = static_cast<double>(n);
    const double by_mults = (ld * nd + md * nd + nd * nd) / (ld * md);
    const double by_adds = (ld * nd + nd * nd - ld - nd) / md + nd + 1.0;
    return std::min(by_mults, by_adds);
}

} // namespace efc
