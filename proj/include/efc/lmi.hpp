#pragma once

// Small dense LMI feasibility solver.
//
// Finds x with F(x) = F0 + sum_i x_i F_i negative definite by minimizing the auxiliary bound s in
// F(x) <= s I with a logarithmic-barrier Newton method. A norm ball |x| <= R keeps the iterates
// bounded. The barrier gap s - nu/t is a certified lower bound on the optimal s, so the method
// reports infeasibility as soon as that bound clears the required margin.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "efc/error.hpp"
#include "efc/lti.hpp"

namespace efc::lmi {

struct Problem {
    Matrix f0;
    std::vector<Matrix> terms; ///< symmetric coefficient matrices, one per decision variable

    [[nodiscard]] Index dim() const { return f0.rows(); }
    [[nodiscard]] Index vars() const { return static_cast<Index>(terms.size()); }

    [[nodiscard]] Matrix evaluate(const Vector& x) const {
        Matrix f = f0;
        for (Index i = 0; i < vars(); ++i) {
            if (x(i) != 0.0) f.noalias() += x(i) * terms[static_cast<std::size_t>(i)];
        }
        return f;
    }
};

enum class Status { feasible, infeasible, not_converged };

inline const char* to_string(Status s) {
    switch (s) {
    case Status::feasible: return "feasible";
    case Status::infeasible: return "infeasible";
    case Status::not_converged: return "not_converged";
    }
    return "unknown";
}

struct Options {
    double margin = 1e-8;       ///< accept when max eig F(x) <= -margin
    double radius = 1e3;        ///< |x| <= radius
    double barrier_growth = 8.0;
    double initial_weight = 1.0; ///< barrier weight t at the start, relative to 1/(|s0| + 1)
    int max_newton = 100;
    int max_outer = 60;
};

struct Result {
    Status status = Status::not_converged;
    Vector x;
    double max_eig = std::numeric_limits<double>::infinity();
    double lower_bound = -std::numeric_limits<double>::infinity(); ///< certified bound on min s
    int newton_steps = 0;
};

inline double max_eigenvalue(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

namespace detail {

struct Point {
    Vector x;
    double s = 0.0;
};

class Barrier {
public:
    Barrier(const Problem& p, const Options& o) : p_(p), o_(o), d_(p.dim()), k_(p.vars()) {
        g_.resize(d_ * d_, k_ + 1);
    }

    // returns false when the point lies outside the domain
    bool value(const Point& z, double t, double& out) const {
        Matrix slack = z.s * Matrix::Identity(d_, d_) - p_.evaluate(z.x);
        Eigen::LLT<Matrix> llt(slack);
        if (llt.info() != Eigen::Success) return false;
        const double ball = o_.radius * o_.radius - z.x.squaredNorm();
        if (ball <= 0) return false;
        double logdet = 0.0;
        const auto& l = llt.matrixLLT();
        for (Index i = 0; i < d_; ++i) {
            const double diag = l(i, i);
            if (!(diag > 0)) return false;
            logdet += 2.0 * std::log(diag);
        }
        out = t * z.s - logdet - std::log(ball);
        return std::isfinite(out);
    }

    // Newton direction and decrement for t*s + barrier at z.
    bool newton(const Point& z, double t, Vector& dir, double& decrement) {
        Matrix slack = z.s * Matrix::Identity(d_, d_) - p_.evaluate(z.x);
        Eigen::LLT<Matrix> llt(slack);
        if (llt.info() != Eigen::Success) return false;
        const auto tri = llt.matrixL();
        // G_a = L^-1 A_a L^-T with S = A_0 + sum z_a A_a, A_i = -F_i, A_s = I
        Matrix work(d_, d_);
        Vector grad(k_ + 1);
        for (Index a = 0; a <= k_; ++a) {
            if (a < k_) {
                work = -p_.terms[static_cast<std::size_t>(a)];
            } else {
                work.setIdentity();
            }
            tri.solveInPlace(work);
            Matrix wt = work.transpose();
            tri.solveInPlace(wt);
            grad(a) = -wt.trace();
            g_.col(a) = Eigen::Map<const Vector>(wt.data(), d_ * d_);
        }
        Matrix hess = g_.transpose() * g_;

        const double ball = o_.radius * o_.radius - z.x.squaredNorm();
        grad.head(k_) += 2.0 * z.x / ball;
        hess.topLeftCorner(k_, k_) += (2.0 / ball) * Matrix::Identity(k_, k_) + (4.0 / (ball * ball)) * z.x * z.x.transpose();
        grad(k_) += t;

        double reg = 1e-14 * (hess.diagonal().cwiseAbs().maxCoeff() + 1.0);
        for (int attempt = 0; attempt < 8; ++attempt) {
            Eigen::LDLT<Matrix> ldlt(hess + reg * Matrix::Identity(k_ + 1, k_ + 1));
            if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
                dir = -ldlt.solve(grad);
                if (dir.allFinite()) {
                    decrement = -grad.dot(dir);
                    grad_ = grad;
                    return decrement >= 0.0 || attempt == 7;
                }
            }
            reg *= 100.0;
        }
        return false;
    }

    [[nodiscard]] const Vector& gradient() const { return grad_; }

private:
    const Problem& p_;
    const Options& o_;
    Index d_;
    Index k_;
    Matrix g_;
    Vector grad_;
};

} // namespace detail

inline Result solve_feasibility(const Problem& problem, const Vector& start, const Options& opts = {}) {
    const Index k = problem.vars();
    const Index d = problem.dim();
    require(start.size() == k, ErrorCode::dimension_mismatch, "starting point has wrong length");
    for (const auto& f : problem.terms) {
        require(f.rows() == d && f.cols() == d, ErrorCode::dimension_mismatch, "LMI term has wrong size");
    }

    Result res;
    detail::Point z{start, 0.0};
    if (z.x.norm() >= 0.5 * opts.radius) z.x *= 0.5 * opts.radius / z.x.norm();
    const double nu = static_cast<double>(d) + 1.0;

    auto accept = [&](const Vector& x) {
        const double eig = max_eigenvalue(problem.evaluate(x));
        if (eig <= -opts.margin) {
            res.status = Status::feasible;
            res.x = x;
            res.max_eig = eig;
            return true;
        }
        return false;
    };

    if (accept(z.x)) return res;
    z.s = max_eigenvalue(problem.evaluate(z.x)) + 1.0;

    detail::Barrier barrier(problem, opts);
    double t = opts.initial_weight / (std::fabs(z.s) + 1.0);
    Vector dir;
    for (int outer = 0; outer < opts.max_outer; ++outer) {
        double last_dec = 0.0;
        // centering
        for (int it = 0; it < opts.max_newton; ++it) {
            double dec = 0.0;
            if (!barrier.newton(z, t, dir, dec)) {
                res.x = z.x;
                return res;
            }
            ++res.newton_steps;
            last_dec = dec;
            if (dec * 0.5 < 1e-7) break;
            double f0 = 0.0;
            barrier.value(z, t, f0);
            double step = 1.0;
            detail::Point next;
            bool moved = false;
            for (int ls = 0; ls < 60; ++ls) {
                next.x = z.x + step * dir.head(k);
                next.s = z.s + step * dir(k);
                double f1 = 0.0;
                if (barrier.value(next, t, f1) && f1 <= f0 - 0.25 * step * dec) {
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!moved) break;
            z = next;
            if (z.s < -opts.margin && accept(z.x)) return res;
        }
        // near the central path the gap exceeds nu/t by at most a factor (1 + sqrt(decrement))
        res.lower_bound = z.s - (nu / t) * (1.0 + std::sqrt(last_dec)) - std::sqrt(last_dec) / t;
        if (res.lower_bound > -opts.margin) {
            res.status = Status::infeasible;
            res.x = z.x;
            res.max_eig = max_eigenvalue(problem.evaluate(z.x));
            return res;
        }
        if (nu / t < 1e-3 * opts.margin) break;
        t *= opts.barrier_growth;
    }
    res.x = z.x;
    res.max_eig = max_eigenvalue(problem.evaluate(z.x));
    return res;
}

} // namespace efc::lmi
