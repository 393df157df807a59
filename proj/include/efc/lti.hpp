#pragma once

// Dense discrete-time LTI algebra.
//
//   x(k+1) = A x(k) + B y(k),   u(k) = C x(k) + D y(k),   x(0) = x0

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <utility>
#include <vector>

#include "efc/bigint.hpp"
#include "efc/error.hpp"

namespace efc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct StateSpace {
    Matrix a;
    Matrix b;
    Matrix c;
    Matrix d;
    Vector x0;

    StateSpace() = default;

    StateSpace(Matrix a_, Matrix b_, Matrix c_, Matrix d_, Vector x0_ = Vector())
        : a(std::move(a_)), b(std::move(b_)), c(std::move(c_)), d(std::move(d_)), x0(std::move(x0_)) {
        if (x0.size() == 0) x0 = Vector::Zero(a.rows());
        validate();
    }

    /// A static gain u = D y, realized with one inert state.
    static StateSpace gain(const Matrix& d) {
        return {Matrix::Zero(1, 1), Matrix::Zero(1, d.cols()), Matrix::Zero(d.rows(), 1), d};
    }

    static StateSpace zero(Index n, Index l, Index m) {
        return {Matrix::Zero(n, n), Matrix::Zero(n, l), Matrix::Zero(m, n), Matrix::Zero(m, l)};
    }

    [[nodiscard]] Index states() const { return a.rows(); }
    [[nodiscard]] Index inputs() const { return b.cols(); }
    [[nodiscard]] Index outputs() const { return c.rows(); }

    void validate() const {
        const Index n = a.rows();
        require(n >= 1 && a.cols() == n, ErrorCode::dimension_mismatch, "state matrix must be square and non-empty");
        require(b.rows() == n && b.cols() >= 1, ErrorCode::dimension_mismatch, "input matrix has wrong row count");
        require(c.cols() == n && c.rows() >= 1, ErrorCode::dimension_mismatch, "output matrix has wrong column count");
        require(d.rows() == c.rows() && d.cols() == b.cols(), ErrorCode::dimension_mismatch,
                "feedthrough matrix does not match input/output widths");
        require(x0.size() == n, ErrorCode::dimension_mismatch, "initial state has wrong length");
    }
};

struct SignalTrace {
    double dt = 0.1;
    std::vector<Vector> samples;

    SignalTrace() = default;
    explicit SignalTrace(std::vector<Vector> s, double dt_ = 0.1) : dt(dt_), samples(std::move(s)) {
        require(dt > 0, ErrorCode::invalid_argument, "sampling period must be positive");
        for (const auto& v : samples) {
            require(v.size() == samples.front().size(), ErrorCode::dimension_mismatch,
                    "all trace samples must have the same width");
        }
    }

    [[nodiscard]] std::size_t size() const { return samples.size(); }
    [[nodiscard]] Index width() const { return samples.empty() ? 0 : samples.front().size(); }
    const Vector& operator[](std::size_t k) const { return samples[k]; }
};

struct Simulation {
    SignalTrace states;
    SignalTrace outputs;
};

inline Simulation simulate(const StateSpace& sys, const SignalTrace& inputs, std::size_t steps) {
    require(steps <= inputs.size(), ErrorCode::invalid_argument, "more steps requested than inputs provided");
    require(steps == 0 || inputs.width() == sys.inputs(), ErrorCode::dimension_mismatch,
            "input width does not match the system");
    std::vector<Vector> xs;
    std::vector<Vector> us;
    xs.reserve(steps);
    us.reserve(steps);
    Vector x = sys.x0;
    for (std::size_t k = 0; k < steps; ++k) {
        const Vector& y = inputs[k];
        xs.push_back(x);
        us.push_back(sys.c * x + sys.d * y);
        x = sys.a * x + sys.b * y;
    }
    return {SignalTrace(std::move(xs), inputs.dt), SignalTrace(std::move(us), inputs.dt)};
}

/// C A^k x0 + sum_{j<k} C A^j B y(k-1-j) + D y(k)
inline Vector explicit_output(const StateSpace& sys, const SignalTrace& inputs, std::size_t k) {
    require(k < inputs.size(), ErrorCode::invalid_argument, "step index beyond input trace");
    require(inputs.width() == sys.inputs(), ErrorCode::dimension_mismatch, "input width does not match the system");
    Matrix ca = sys.c; // C A^j
    Vector u = sys.d * inputs[k];
    for (std::size_t j = 0; j < k; ++j) {
        u += ca * sys.b * inputs[k - 1 - j];
        ca = ca * sys.a;
    }
    u += ca * sys.x0;
    return u;
}

inline Eigen::VectorXcd eigenvalues(const Matrix& a) {
    require(a.rows() == a.cols(), ErrorCode::dimension_mismatch, "eigenvalues need a square matrix");
    if (a.rows() == 0) return {};
    Eigen::EigenSolver<Matrix> solver(a, false);
    require(solver.info() == Eigen::Success, ErrorCode::solver_failure, "eigenvalue iteration did not converge");
    return solver.eigenvalues();
}

inline double spectral_radius(const Matrix& a) {
    const auto ev = eigenvalues(a);
    double r = 0.0;
    for (Index i = 0; i < ev.size(); ++i) r = std::max(r, std::abs(ev[i]));
    return r;
}

inline constexpr double kSchurTolerance = 1e-9;

inline bool is_schur(const Matrix& a) { return spectral_radius(a) < 1.0 - kSchurTolerance; }

enum class IntegerStability { stable_nilpotent, unstable };

/// Exact test: an integer matrix is Schur stable iff it is nilpotent, i.e. a^n = 0.
inline IntegerStability integer_schur_check(const Matrix& a) {
    require(a.rows() == a.cols(), ErrorCode::dimension_mismatch, "integer Schur check needs a square matrix");
    const Index n = a.rows();
    std::vector<BigInt> base(static_cast<std::size_t>(n * n));
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            const double v = a(i, j);
            require(std::isfinite(v) && v == std::round(v), ErrorCode::invalid_argument,
                    "integer Schur check needs integer entries");
            base[static_cast<std::size_t>(i * n + j)] = big_from_integral_double(v);
        }
    }
    auto at = [n](std::vector<BigInt>& m, Index i, Index j) -> BigInt& {
        return m[static_cast<std::size_t>(i * n + j)];
    };
    std::vector<BigInt> power = base;
    for (Index p = 1; p < n; ++p) {
        std::vector<BigInt> next(power.size());
        for (Index i = 0; i < n; ++i) {
            for (Index k = 0; k < n; ++k) {
                const BigInt& lhs = at(power, i, k);
                if (lhs == 0) continue;
                for (Index j = 0; j < n; ++j) at(next, i, j) += lhs * at(base, k, j);
            }
        }
        power = std::move(next);
    }
    for (const auto& v : power) {
        if (v != 0) return IntegerStability::unstable;
    }
    return IntegerStability::stable_nilpotent;
}

/// (D, CB, CAB, ..., C A^{count-1} B)
inline std::vector<Matrix> markov_parameters(const StateSpace& sys, std::size_t count) {
    std::vector<Matrix> out;
    out.reserve(count + 1);
    out.push_back(sys.d);
    Matrix ca = sys.c;
    for (std::size_t j = 0; j < count; ++j) {
        out.push_back(ca * sys.b);
        ca = ca * sys.a;
    }
    return out;
}

/// Largest singular value of C (e^{i theta} I - A)^{-1} B + D.
inline double frequency_gain(const StateSpace& sys, double theta) {
    using Complex = std::complex<double>;
    const Index n = sys.states();
    const Eigen::MatrixXcd zi = Eigen::MatrixXcd::Identity(n, n) * std::polar(1.0, theta) - sys.a.cast<Complex>();
    const Eigen::MatrixXcd resolvent = zi.partialPivLu().solve(sys.b.cast<Complex>());
    const Eigen::MatrixXcd g = sys.c.cast<Complex>() * resolvent + sys.d.cast<Complex>();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(g);
    return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

namespace detail {

inline double golden_maximize(const StateSpace& sys, double lo, double hi) {
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - ratio * (hi - lo);
    double x2 = lo + ratio * (hi - lo);
    double f1 = frequency_gain(sys, x1);
    double f2 = frequency_gain(sys, x2);
    while (hi - lo > 1e-12) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = frequency_gain(sys, x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = frequency_gain(sys, x1);
        }
    }
    return std::max({f1, f2, frequency_gain(sys, lo), frequency_gain(sys, hi)});
}

} // namespace detail

/// Grid measurement of the H-infinity norm over theta in [0, pi], refined by golden-section
/// search around the largest grid peaks. A lower bound that converges with grid density.
inline double hinf_norm(const StateSpace& sys, std::size_t grid_points = 512) {
    require(grid_points >= 64, ErrorCode::invalid_argument, "hinf_norm needs at least 64 grid points");
    require(is_schur(sys.a), ErrorCode::unstable_system, "hinf_norm requires a Schur stable system");
    const double step = std::numbers::pi / static_cast<double>(grid_points - 1);
    std::vector<double> gains(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i) gains[i] = frequency_gain(sys, step * static_cast<double>(i));

    double best = *std::max_element(gains.begin(), gains.end());
    // local maxima of the grid, strongest first
    std::vector<std::size_t> peaks;
    for (std::size_t i = 0; i < grid_points; ++i) {
        const bool left = i == 0 || gains[i] >= gains[i - 1];
        const bool right = i + 1 == grid_points || gains[i] >= gains[i + 1];
        if (left && right) peaks.push_back(i);
    }
    std::sort(peaks.begin(), peaks.end(), [&](std::size_t x, std::size_t y) { return gains[x] > gains[y]; });
    if (peaks.size() > 3) peaks.resize(3);
    for (std::size_t i : peaks) {
        const double lo = step * static_cast<double>(i == 0 ? 0 : i - 1);
        const double hi = step * static_cast<double>(std::min(i + 1, grid_points - 1));
        best = std::max(best, detail::golden_maximize(sys, lo, hi));
    }
    return best;
}

/// Series connection: first feeds second.
inline StateSpace series(const StateSpace& first, const StateSpace& second) {
    require(first.outputs() == second.inputs(), ErrorCode::dimension_mismatch, "series connection width mismatch");
    const Index n1 = first.states();
    const Index n2 = second.states();
    Matrix a = Matrix::Zero(n1 + n2, n1 + n2);
    a.topLeftCorner(n1, n1) = first.a;
    a.bottomLeftCorner(n2, n1) = second.b * first.c;
    a.bottomRightCorner(n2, n2) = second.a;
    Matrix b(n1 + n2, first.inputs());
    b << first.b, second.b * first.d;
    Matrix c(second.outputs(), n1 + n2);
    c << second.d * first.c, second.c;
    Matrix d = second.d * first.d;
    Vector x0(n1 + n2);
    x0 << first.x0, second.x0;
    return {a, b, c, d, x0};
}

/// Parallel difference: output of lhs minus output of rhs for a common input.
inline StateSpace difference(const StateSpace& lhs, const StateSpace& rhs) {
    require(lhs.inputs() == rhs.inputs() && lhs.outputs() == rhs.outputs(), ErrorCode::dimension_mismatch,
            "difference of systems with different widths");
    const Index n1 = lhs.states();
    const Index n2 = rhs.states();
    Matrix a = Matrix::Zero(n1 + n2, n1 + n2);
    a.topLeftCorner(n1, n1) = lhs.a;
    a.bottomRightCorner(n2, n2) = rhs.a;
    Matrix b(n1 + n2, lhs.inputs());
    b << lhs.b, rhs.b;
    Matrix c(lhs.outputs(), n1 + n2);
    c << lhs.c, -rhs.c;
    Vector x0(n1 + n2);
    x0 << lhs.x0, rhs.x0;
    return {a, b, c, lhs.d - rhs.d, x0};
}

} // namespace efc
