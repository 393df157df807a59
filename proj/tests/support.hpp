#pragma once

#include <random>
#include <vector>

#include "efc/lti.hpp"

namespace efc::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

/// Random system with spectral radius drawn from [rho_lo, rho_hi].
inline StateSpace random_stable(std::mt19937_64& rng, Index n, Index l, Index m, double rho_lo = 0.3, double rho_hi = 0.9) {
    Matrix a = random_matrix(rng, n, n);
    const double r = spectral_radius(a);
    std::uniform_real_distribution<double> u(rho_lo, rho_hi);
    if (r > 0) a *= u(rng) / r;
    return {a, random_matrix(rng, n, l), random_matrix(rng, m, n), random_matrix(rng, m, l)};
}

inline SignalTrace random_trace(std::mt19937_64& rng, std::size_t steps, Index width, double scale = 1.0) {
    std::vector<Vector> s;
    for (std::size_t k = 0; k < steps; ++k) s.push_back(random_matrix(rng, width, 1, scale));
    return SignalTrace(std::move(s));
}

inline StateSpace scalar(double a, double b, double c, double d) {
    return {Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b), Matrix::Constant(1, 1, c), Matrix::Constant(1, 1, d)};
}

} // namespace efc::testing
