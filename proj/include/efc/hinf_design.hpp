#pragma once

// H-infinity optimal FIR taps via the bounded-real lemma.
//
// With the weighted error system (A_e, B_e, C_e, D_e) from assemble_error_system, |e|_inf < gamma
// holds iff some P > 0 satisfies
//
//   [ A_e'P A_e - P    A_e'P B_e            C_e' ]
//   [ B_e'P A_e        B_e'P B_e - gamma I  D_e' ]  < 0.
//   [ C_e              D_e                  -gamma I ]
//
// A_e and B_e do not depend on the taps while C_e and D_e are affine in (C_f, D_f), so the whole
// condition is an LMI in (P, C_f, D_f) at fixed gamma.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "efc/error.hpp"
#include "efc/fir.hpp"
#include "efc/lmi.hpp"
#include "efc/lti.hpp"

namespace efc {

struct HinfDesign {
    FirFilter filter;
    Matrix certificate; ///< P
    double gamma = 0.0;
    double lmi_max_eig = 0.0;
    double audit = 0.0; ///< hinf_norm of the resulting error system
};

struct HinfOptions {
    lmi::Options solver{};
    std::size_t audit_grid = 2048;
    double audit_factor = 1.01;
};

namespace detail {

class FirLmi {
public:
    FirLmi(const StateSpace& iir, const StateSpace& weight, std::size_t order)
        : iir_(iir), weight_(weight), order_(order) {
        require(is_schur(iir.a), ErrorCode::unstable_system, "H-infinity FIR design needs a Schur stable controller");
        require(is_schur(weight.a), ErrorCode::unstable_system, "H-infinity FIR design needs a Schur stable weight");
        require(weight.outputs() == iir.inputs(), ErrorCode::dimension_mismatch, "weight output must feed the controller");
        const Index l = iir.inputs();
        const Index m = iir.outputs();
        std::vector<Matrix> zero_taps(order + 1, Matrix::Zero(m, l));
        base_ = assemble_error_system(iir, FirFilter(zero_taps), weight);
        ne_ = base_.states();
        p_ = weight.inputs();
        m_ = m;
        nw_ = weight.states();
        n_ = iir.states();
        cf_cols_ = order == 0 ? 0 : static_cast<Index>(order) * l;
    }

    [[nodiscard]] Index p_vars() const { return ne_ * (ne_ + 1) / 2; }
    [[nodiscard]] Index vars() const { return p_vars() + m_ * cf_cols_ + m_ * iir_.inputs(); }
    [[nodiscard]] Index dim() const { return ne_ + p_ + m_; }

    [[nodiscard]] lmi::Problem problem(double gamma) const {
        const Index d = dim();
        const Index r2 = ne_;
        const Index r3 = ne_ + p_;
        lmi::Problem prob;
        prob.f0 = Matrix::Zero(d, d);
        prob.f0.block(r2, r2, p_, p_) = -gamma * Matrix::Identity(p_, p_);
        prob.f0.block(r3, r3, m_, m_) = -gamma * Matrix::Identity(m_, m_);
        prob.f0.block(r3, 0, m_, ne_) = base_.c;
        prob.f0.block(r3, r2, m_, p_) = base_.d;
        prob.f0.block(0, r3, ne_, m_) = base_.c.transpose();
        prob.f0.block(r2, r3, p_, m_) = base_.d.transpose();

        Matrix w(ne_, ne_ + p_);
        w << base_.a, base_.b;
        prob.terms.reserve(static_cast<std::size_t>(vars()));
        for (Index i = 0; i < ne_; ++i) {
            for (Index j = i; j < ne_; ++j) {
                Matrix f = Matrix::Zero(d, d);
                const Matrix wi = w.row(i).transpose();
                const Matrix wj = w.row(j).transpose();
                if (i == j) {
                    f.topLeftCorner(ne_ + p_, ne_ + p_) = wi * wi.transpose();
                    f(i, i) -= 1.0;
                } else {
                    f.topLeftCorner(ne_ + p_, ne_ + p_) = wi * wj.transpose() + wj * wi.transpose();
                    f(i, j) -= 1.0;
                    f(j, i) -= 1.0;
                }
                prob.terms.push_back(std::move(f));
            }
        }
        const Index fir_col0 = nw_ + n_;
        for (Index r = 0; r < m_; ++r) {
            for (Index c = 0; c < cf_cols_; ++c) {
                Matrix f = Matrix::Zero(d, d);
                f(r3 + r, fir_col0 + c) = 1.0;
                f(fir_col0 + c, r3 + r) = 1.0;
                prob.terms.push_back(std::move(f));
            }
        }
        const Index l = iir_.inputs();
        for (Index r = 0; r < m_; ++r) {
            for (Index c = 0; c < l; ++c) {
                Matrix f = Matrix::Zero(d, d);
                f.block(r3 + r, 0, 1, nw_) = weight_.c.row(c);
                f.block(r3 + r, r2, 1, p_) = weight_.d.row(c);
                f.block(0, r3 + r, nw_, 1) = weight_.c.row(c).transpose();
                f.block(r2, r3 + r, p_, 1) = weight_.d.row(c).transpose();
                prob.terms.push_back(std::move(f));
            }
        }
        return prob;
    }

    [[nodiscard]] Matrix certificate(const Vector& x) const {
        Matrix p(ne_, ne_);
        Index idx = 0;
        for (Index i = 0; i < ne_; ++i)
            for (Index j = i; j < ne_; ++j) {
                p(i, j) = x(idx);
                p(j, i) = x(idx);
                ++idx;
            }
        return p;
    }

    [[nodiscard]] FirFilter filter(const Vector& x) const {
        const Index l = iir_.inputs();
        Index idx = p_vars();
        Matrix c_f = Matrix::Zero(m_, cf_cols_);
        for (Index r = 0; r < m_; ++r)
            for (Index c = 0; c < cf_cols_; ++c) c_f(r, c) = x(idx++);
        Matrix d_f(m_, l);
        for (Index r = 0; r < m_; ++r)
            for (Index c = 0; c < l; ++c) d_f(r, c) = x(idx++);
        return taps_from_blocks(c_f, d_f, order_);
    }

    /// Decision vector holding the given taps and P = 0.
    [[nodiscard]] Vector encode(const FirFilter& f) const {
        Vector x = Vector::Zero(vars());
        Index idx = p_vars();
        const Index l = iir_.inputs();
        for (Index r = 0; r < m_; ++r)
            for (Index c = 0; c < cf_cols_; ++c) x(idx++) = f.taps[static_cast<std::size_t>(1 + c / l)](r, c % l);
        for (Index r = 0; r < m_; ++r)
            for (Index c = 0; c < l; ++c) x(idx++) = f.taps[0](r, c);
        return x;
    }

    [[nodiscard]] double scale() const {
        double s = 1.0;
        s = std::max(s, base_.c.cwiseAbs().maxCoeff());
        s = std::max(s, base_.d.cwiseAbs().maxCoeff());
        return s;
    }

    [[nodiscard]] const StateSpace& iir() const { return iir_; }
    [[nodiscard]] const StateSpace& weight() const { return weight_; }
    [[nodiscard]] std::size_t order() const { return order_; }

private:
    StateSpace iir_;
    StateSpace weight_;
    std::size_t order_;
    StateSpace base_;
    Index ne_ = 0, p_ = 0, m_ = 0, nw_ = 0, n_ = 0, cf_cols_ = 0;
};

struct Attempt {
    lmi::Status status = lmi::Status::not_converged;
    std::optional<HinfDesign> design;
    Vector x;
};

inline Attempt attempt(const FirLmi& lmi_form, double gamma, const Vector& start, const HinfOptions& opts) {
    lmi::Options so = opts.solver;
    so.margin = opts.solver.margin * lmi_form.scale();
    const lmi::Problem prob = lmi_form.problem(gamma);
    Attempt out;
    lmi::Result r;
    // The norm ball only certifies infeasibility inside it; widen it while it is binding.
    for (int widen = 0; widen < 3; ++widen) {
        r = lmi::solve_feasibility(prob, start, so);
        const bool ball_binding = r.x.size() > 0 && r.x.norm() > 0.5 * so.radius;
        if (r.status == lmi::Status::feasible || (r.status == lmi::Status::infeasible && !ball_binding)) break;
        so.radius *= 100.0;
    }
    out.status = r.status;
    out.x = r.x;
    if (r.status != lmi::Status::feasible) return out;
    HinfDesign d;
    d.filter = lmi_form.filter(r.x);
    d.certificate = lmi_form.certificate(r.x);
    d.gamma = gamma;
    d.lmi_max_eig = r.max_eig;
    d.audit = hinf_norm(assemble_error_system(lmi_form.iir(), d.filter, lmi_form.weight()), opts.audit_grid);
    out.design = std::move(d);
    return out;
}

} // namespace detail

/// Taps with |weighted FIR - IIR error|_inf < gamma, or Error(infeasible) / Error(solver_failure).
inline HinfDesign hinf_fir_design(const StateSpace& iir, const StateSpace& weight, std::size_t order, double gamma,
                                  const HinfOptions& opts = {}) {
    require(gamma > 0.0 && std::isfinite(gamma), ErrorCode::invalid_argument, "gamma must be positive");
    const detail::FirLmi form(iir, weight, order);
    const Vector start = form.encode(window_fir(iir, order));
    detail::Attempt a = detail::attempt(form, gamma, start, opts);
    if (a.status == lmi::Status::infeasible) {
        fail(ErrorCode::infeasible, "FIR design LMI infeasible at gamma=" + std::to_string(gamma));
    }
    if (a.status == lmi::Status::not_converged || !a.design) {
        fail(ErrorCode::solver_failure, "LMI solver did not converge at gamma=" + std::to_string(gamma));
    }
    if (!(a.design->audit < gamma * opts.audit_factor)) {
        fail(ErrorCode::solver_failure, "a posteriori H-infinity audit failed: " + std::to_string(a.design->audit) +
                                            " >= " + std::to_string(gamma * opts.audit_factor));
    }
    return std::move(*a.design);
}

struct GammaSearch {
    double gamma = 0.0;
    HinfDesign design;
    int feasibility_solves = 0;
};

/// Geometric bisection on gamma down to relative width 1e-3. The cap defaults to four times the
/// weighted error of the window design (at least 1).
inline GammaSearch minimize_gamma(const StateSpace& iir, const StateSpace& weight, std::size_t order,
                                  std::optional<double> cap = std::nullopt, const HinfOptions& opts = {},
                                  double relative_width = 1e-3) {
    const detail::FirLmi form(iir, weight, order);
    const FirFilter window = window_fir(iir, order);
    const double window_residual = hinf_norm(assemble_error_system(iir, window, weight), opts.audit_grid);
    const double upper_cap = cap.value_or(std::max(1.0, 4.0 * window_residual));
    require(upper_cap > 0.0, ErrorCode::invalid_argument, "gamma cap must be positive");

    GammaSearch out;
    Vector warm = form.encode(window);
    auto solve = [&](double gamma) {
        ++out.feasibility_solves;
        detail::Attempt a = detail::attempt(form, gamma, warm, opts);
        if (a.status == lmi::Status::feasible && a.design && a.design->audit < gamma * opts.audit_factor) {
            warm = a.x;
            return a.design;
        }
        return std::optional<HinfDesign>{};
    };

    double hi = upper_cap;
    std::optional<HinfDesign> best;
    const double guess = window_residual * 1.01;
    if (guess > 0.0 && guess < upper_cap) {
        best = solve(guess);
        if (best) hi = guess;
    }
    if (!best) best = solve(hi);
    if (!best) fail(ErrorCode::infeasible, "no feasible gamma below the cap " + std::to_string(upper_cap));

    double lo = 1e-4 * upper_cap;
    if (lo < hi) {
        if (auto at_floor = solve(lo)) {
            out.gamma = lo;
            out.design = std::move(*at_floor);
            return out;
        }
    } else {
        lo = hi / (1.0 + relative_width);
    }
    while (hi / lo > 1.0 + relative_width) {
        const double mid = std::sqrt(hi * lo);
        if (auto d = solve(mid)) {
            hi = mid;
            best = std::move(d);
        } else {
            lo = mid;
        }
    }
    out.gamma = hi;
    out.design = std::move(*best);
    return out;
}

} // namespace efc
