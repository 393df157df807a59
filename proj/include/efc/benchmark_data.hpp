#pragma once

// Batch-reactor benchmark (sampling period 0.1 s) and the published FIR tap tables.

#include <string>
#include <vector>

#include "efc/fir.hpp"
#include "efc/lti.hpp"

namespace efc::benchmark {

inline constexpr double kSamplingPeriod = 0.1;

inline Vector initial_state() {
    Vector x(4);
    x << -6.83, -5.18, -4.05, -3.12;
    return x;
}

/// Outputs in the usual reactor order y = (x1 + x3 - x4, x2); see the README on row order.
inline StateSpace reactor() {
    Matrix a(4, 4);
    a << 1.18, 0.00, 0.51, -0.40,
        -0.05, 0.66, -0.01, 0.06,
        0.08, 0.34, 0.56, 0.38,
        0.00, 0.34, 0.09, 0.85;
    Matrix b(4, 1);
    b << 0.00, 0.47, 0.21, 0.21;
    Matrix c(2, 4);
    c << 1, 0, 1, -1,
        0, 1, 0, 0;
    return {a, b, c, Matrix::Zero(2, 1), initial_state()};
}

namespace detail {
inline FirFilter taps_from_rows(const std::vector<std::pair<double, double>>& rows) {
    std::vector<Matrix> taps;
    for (const auto& [a, b] : rows) {
        Matrix f(1, 2);
        f << a, b;
        taps.push_back(f);
    }
    return FirFilter(std::move(taps));
}
} // namespace detail

/// Window method, N = 7.
inline FirFilter window_n7() {
    return detail::taps_from_rows({{-49.00, -2.33}, {50.99, 0.17}, {-7.31, 0.04}, {-2.42, -0.02},
                                   {0.88, 0.00}, {0.03, 0.00}, {-0.07, 0.00}, {0.01, 0.00}});
}

/// LMI design, N = 2.
inline FirFilter optimized_n2() {
    return detail::taps_from_rows({{-48.93, -2.33}, {50.93, 0.17}, {-8.81, 0.04}});
}

/// N = 2 filter replacing the unstable-A reset controller.
inline FirFilter replacement_n2() {
    return detail::taps_from_rows({{-17.54, -3.04}, {-4.44, -0.96}, {17.60, -0.23}});
}

struct NamedFilter {
    std::string name;
    FirFilter filter;
};

inline std::vector<NamedFilter> published_filters() {
    return {{"window_n7", window_n7()}, {"optimized_n2", optimized_n2()}, {"replacement_n2", replacement_n2()}};
}

/// Observer-based output feedback for the reactor with a Schur-stable controller matrix
/// (spectral radius 0.71; closed loop 0.91). Designed for this project by LQR/Kalman weighting
/// and rounded to four decimals; it stands in wherever a stable IIR controller is needed.
inline StateSpace companion_controller() {
    Matrix a(4, 4);
    a << 0.5579, -0.0321, -0.1121, 0.2221,
        -1.9062, 0.0965, -1.3224, 0.7030,
        -0.9972, -0.1140, -0.2742, 0.9151,
        -0.9275, -0.1173, -0.5946, 1.2355;
    Matrix b(4, 2);
    b << 0.6221, 0.0321,
        -0.0178, 0.2227,
        0.2398, 0.3017,
        0.0902, 0.3050;
    Matrix c(1, 4);
    c << -3.9873, -0.7251, -2.8303, 1.4061;
    return {a, b, c, Matrix::Zero(1, 2)};
}

} // namespace efc::benchmark
