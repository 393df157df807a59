#pragma once

// Arithmetic in Z_q[X]/(X^n + 1), q < 2^63.

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <optional>
#include <vector>

#include "efc/bigint.hpp"
#include "efc/error.hpp"

namespace efc::he {

using Poly = std::vector<std::uint64_t>; ///< residues in [0, q)
using Wide = boost::multiprecision::int256_t;

inline std::uint64_t add_mod(std::uint64_t a, std::uint64_t b, std::uint64_t q) {
    const std::uint64_t s = a + b; // no wrap, q < 2^63
    return s >= q ? s - q : s;
}

inline std::uint64_t sub_mod(std::uint64_t a, std::uint64_t b, std::uint64_t q) { return a >= b ? a - b : a + q - b; }

inline std::uint64_t mul_mod(std::uint64_t a, std::uint64_t b, std::uint64_t q) {
    return static_cast<std::uint64_t>((u128(a) * b) % q);
}

inline std::uint64_t pow_mod(std::uint64_t base, std::uint64_t e, std::uint64_t q) {
    std::uint64_t r = 1 % q;
    base %= q;
    while (e) {
        if (e & 1) r = mul_mod(r, base, q);
        base = mul_mod(base, base, q);
        e >>= 1;
    }
    return r;
}

/// Deterministic Miller-Rabin for 64-bit inputs.
inline bool is_prime(std::uint64_t n) {
    if (n < 2) return false;
    for (std::uint64_t p : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
        if (n % p == 0) return n == p;
    }
    std::uint64_t d = n - 1;
    int s = 0;
    while ((d & 1) == 0) {
        d >>= 1;
        ++s;
    }
    for (std::uint64_t a : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
        std::uint64_t x = pow_mod(a, d, n);
        if (x == 1 || x == n - 1) continue;
        bool composite = true;
        for (int r = 1; r < s; ++r) {
            x = mul_mod(x, x, n);
            if (x == n - 1) {
                composite = false;
                break;
            }
        }
        if (composite) return false;
    }
    return true;
}

inline Poly poly_add(const Poly& a, const Poly& b, std::uint64_t q) {
    Poly r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = add_mod(a[i], b[i], q);
    return r;
}

inline Poly poly_sub(const Poly& a, const Poly& b, std::uint64_t q) {
    Poly r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = sub_mod(a[i], b[i], q);
    return r;
}

inline Poly poly_neg(const Poly& a, std::uint64_t q) {
    Poly r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] == 0 ? 0 : q - a[i];
    return r;
}

inline Poly poly_scale(const Poly& a, std::uint64_t c, std::uint64_t q) {
    Poly r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = mul_mod(a[i], c, q);
    return r;
}

/// Reference negacyclic product mod q.
inline Poly negacyclic_schoolbook(const Poly& a, const Poly& b, std::uint64_t q) {
    const std::size_t n = a.size();
    require(b.size() == n, ErrorCode::dimension_mismatch, "polynomial lengths differ");
    Poly r(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (a[i] == 0) continue;
        for (std::size_t j = 0; j < n; ++j) {
            const std::uint64_t p = mul_mod(a[i], b[j], q);
            const std::size_t k = i + j;
            if (k < n) {
                r[k] = add_mod(r[k], p, q);
            } else {
                r[k - n] = sub_mod(r[k - n], p, q);
            }
        }
    }
    return r;
}

/// Negacyclic NTT for prime q = 1 mod 2n.
class NttTables {
public:
    static std::optional<NttTables> build(std::size_t n, std::uint64_t q) {
        if (n == 0 || (n & (n - 1)) != 0 || !is_prime(q) || (q - 1) % (2 * n) != 0) return std::nullopt;
        NttTables t;
        t.n_ = n;
        t.q_ = q;
        std::uint64_t psi = 0;
        for (std::uint64_t g = 2; g < q && psi == 0; ++g) {
            const std::uint64_t cand = pow_mod(g, (q - 1) / (2 * n), q);
            if (pow_mod(cand, n, q) == q - 1) psi = cand;
        }
        if (psi == 0) return std::nullopt;
        const std::uint64_t psi_inv = pow_mod(psi, q - 2, q);
        int bits = 0;
        while ((std::size_t{1} << bits) < n) ++bits;
        t.psi_rev_.resize(n);
        t.psi_inv_rev_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t rev = 0;
            for (int b = 0; b < bits; ++b) {
                if (i & (std::size_t{1} << b)) rev |= std::size_t{1} << (bits - 1 - b);
            }
            t.psi_rev_[i] = pow_mod(psi, rev, q);
            t.psi_inv_rev_[i] = pow_mod(psi_inv, rev, q);
        }
        t.n_inv_ = pow_mod(n % q, q - 2, q);
        return t;
    }

    void forward(Poly& a) const {
        std::size_t t = n_;
        for (std::size_t m = 1; m < n_; m <<= 1) {
            t >>= 1;
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t j1 = 2 * i * t;
                const std::uint64_t s = psi_rev_[m + i];
                for (std::size_t j = j1; j < j1 + t; ++j) {
                    const std::uint64_t u = a[j];
                    const std::uint64_t v = mul_mod(a[j + t], s, q_);
                    a[j] = add_mod(u, v, q_);
                    a[j + t] = sub_mod(u, v, q_);
                }
            }
        }
    }

    void inverse(Poly& a) const {
        std::size_t t = 1;
        for (std::size_t m = n_; m > 1; m >>= 1) {
            std::size_t j1 = 0;
            const std::size_t h = m >> 1;
            for (std::size_t i = 0; i < h; ++i) {
                const std::uint64_t s = psi_inv_rev_[h + i];
                for (std::size_t j = j1; j < j1 + t; ++j) {
                    const std::uint64_t u = a[j];
                    const std::uint64_t v = a[j + t];
                    a[j] = add_mod(u, v, q_);
                    a[j + t] = mul_mod(sub_mod(u, v, q_), s, q_);
                }
                j1 += 2 * t;
            }
            t <<= 1;
        }
        for (auto& x : a) x = mul_mod(x, n_inv_, q_);
    }

    [[nodiscard]] Poly multiply(Poly a, Poly b) const {
        forward(a);
        forward(b);
        for (std::size_t i = 0; i < n_; ++i) a[i] = mul_mod(a[i], b[i], q_);
        inverse(a);
        return a;
    }

    [[nodiscard]] std::size_t size() const { return n_; }
    [[nodiscard]] std::uint64_t modulus() const { return q_; }

private:
    NttTables() = default;
    std::size_t n_ = 0;
    std::uint64_t q_ = 0;
    std::uint64_t n_inv_ = 0;
    std::vector<std::uint64_t> psi_rev_;
    std::vector<std::uint64_t> psi_inv_rev_;
};

/// Exact negacyclic product over Z of coefficient vectors with |entries| < 2^62.
inline std::vector<Wide> negacyclic_exact(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
    const std::size_t n = a.size();
    require(b.size() == n, ErrorCode::dimension_mismatch, "polynomial lengths differ");
    require(n <= 4096, ErrorCode::invalid_argument, "ring dimension too large for the exact product");
    std::vector<std::int64_t> lo(n);
    std::vector<std::int64_t> hi(n);
    for (std::size_t j = 0; j < n; ++j) {
        lo[j] = b[j] & 0xffffffffLL;
        hi[j] = b[j] >> 32;
    }
    std::vector<i128> acc_lo(n, 0);
    std::vector<i128> acc_hi(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const i128 ai = a[i];
        if (ai == 0) continue;
        const std::size_t wrap = n - i;
        for (std::size_t j = 0; j < wrap; ++j) {
            acc_lo[i + j] += ai * lo[j];
            acc_hi[i + j] += ai * hi[j];
        }
        for (std::size_t j = wrap; j < n; ++j) {
            acc_lo[i + j - n] -= ai * lo[j];
            acc_hi[i + j - n] -= ai * hi[j];
        }
    }
    std::vector<Wide> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        Wide h = static_cast<Wide>(acc_hi[k]);
        out[k] = (h << 32) + static_cast<Wide>(acc_lo[k]);
    }
    return out;
}

inline std::vector<std::int64_t> centered_coeffs(const Poly& a, std::uint64_t q) {
    std::vector<std::int64_t> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] > q / 2 ? static_cast<std::int64_t>(a[i] - q) : static_cast<std::int64_t>(a[i]);
    return r;
}

} // namespace efc::he
