#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <cstdint>
#include <string>

#include "efc/error.hpp"

namespace efc {

using BigInt = boost::multiprecision::cpp_int;
using i128 = __int128;
using u128 = unsigned __int128;

inline BigInt to_big(i128 v) {
    const bool neg = v < 0;
    u128 mag = neg ? u128(0) - u128(v) : u128(v);
    BigInt r = static_cast<std::uint64_t>(mag >> 64);
    r <<= 64;
    r += static_cast<std::uint64_t>(mag);
    return neg ? BigInt(-r) : r;
}

/// Exact conversion; fails when the value does not fit in a signed 128-bit word.
inline i128 to_i128(const BigInt& v) {
    static const BigInt limit = BigInt(1) << 127;
    require(v < limit && v >= -limit, ErrorCode::overflow, "integer exceeds 128-bit range");
    const bool neg = v < 0;
    BigInt mag = neg ? BigInt(-v) : v;
    const auto lo = static_cast<std::uint64_t>(mag & BigInt(~std::uint64_t{0}));
    const auto hi = static_cast<std::uint64_t>(mag >> 64);
    u128 m = (u128(hi) << 64) | lo;
    return neg ? i128(u128(0) - m) : i128(m);
}

/// Exact integer value of a finite double that is already integral.
inline BigInt big_from_integral_double(double x) {
    require(std::isfinite(x), ErrorCode::invalid_argument, "non-finite value");
    int exp = 0;
    const double mant = std::frexp(std::fabs(x), &exp);
    // mant * 2^53 is an exact integer for every double
    auto bits = static_cast<std::uint64_t>(std::ldexp(mant, 53));
    BigInt r = bits;
    const int shift = exp - 53;
    if (shift >= 0) {
        r <<= shift;
    } else {
        r >>= -shift;
    }
    return x < 0 ? BigInt(-r) : r;
}

inline std::string to_string(i128 v) { return to_big(v).str(); }

inline i128 abs128(i128 v) { return v < 0 ? -v : v; }

} // namespace efc
