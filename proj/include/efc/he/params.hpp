#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "efc/error.hpp"

namespace efc::he {

/// Leveled RLWE parameters. These are toy sizes with no security claim.
struct HeParams {
    std::uint32_t ring_dim = 256;
    std::uint64_t q_c = 0;   ///< ciphertext modulus, < 2^63
    std::uint64_t t = 0;     ///< plaintext modulus
    double sigma = 3.2;
    std::uint64_t decomposition_base = 256;
    int levels = 1;

    void validate() const {
        require(ring_dim >= 1 && (ring_dim & (ring_dim - 1)) == 0, ErrorCode::invalid_argument,
                "ring dimension must be a power of two");
        require(ring_dim <= 4096, ErrorCode::invalid_argument, "ring dimension above 4096 is not supported");
        require(t >= 2, ErrorCode::invalid_argument, "plaintext modulus must be at least 2");
        require(q_c > t, ErrorCode::invalid_argument, "plaintext modulus must be below the ciphertext modulus");
        require(q_c < (std::uint64_t{1} << 63), ErrorCode::invalid_argument, "ciphertext modulus must be below 2^63");
        require(levels >= 1, ErrorCode::invalid_argument, "at least one level is required");
        require(sigma > 0 && std::isfinite(sigma), ErrorCode::invalid_argument, "noise deviation must be positive");
        require(decomposition_base >= 2 && (decomposition_base & (decomposition_base - 1)) == 0,
                ErrorCode::invalid_argument, "decomposition base must be a power of two >= 2");
    }

    /// floor(q/t)
    [[nodiscard]] std::uint64_t delta() const { return q_c / t; }

    [[nodiscard]] int base_bits() const {
        int b = 0;
        while ((std::uint64_t{1} << b) < decomposition_base) ++b;
        return b;
    }

    /// number of base-w digits of a residue mod q
    [[nodiscard]] int digits() const {
        int qbits = 0;
        while (qbits < 64 && (q_c >> qbits) != 0) ++qbits;
        return (qbits + base_bits() - 1) / base_bits();
    }

    /// centered binomial parameter with variance eta/2 ~ sigma^2
    [[nodiscard]] int binomial_eta() const {
        const long eta = std::lround(2.0 * sigma * sigma);
        return static_cast<int>(eta < 1 ? 1 : eta);
    }

    friend bool operator==(const HeParams&, const HeParams&) = default;
};

/// Representative in [-floor(m/2), ceil(m/2) - 1], the same range as plain_min/plain_max.
inline std::int64_t centered(std::uint64_t r, std::uint64_t m) {
    return r >= (m + 1) / 2 ? static_cast<std::int64_t>(r) - static_cast<std::int64_t>(m) : static_cast<std::int64_t>(r);
}

inline std::uint64_t reduce(std::int64_t v, std::uint64_t m) {
    const std::int64_t r = v % static_cast<std::int64_t>(m);
    return static_cast<std::uint64_t>(r < 0 ? r + static_cast<std::int64_t>(m) : r);
}

inline std::int64_t plain_min(std::uint64_t t) { return -static_cast<std::int64_t>(t / 2); }
inline std::int64_t plain_max(std::uint64_t t) { return static_cast<std::int64_t>((t + 1) / 2) - 1; }

inline const char* toy_marker() { return "TOY PARAMETERS - NO SECURITY CLAIM"; }

} // namespace efc::he
