#pragma once

// Exact stand-in for the leveled scheme: ciphertexts carry their plaintext coefficients, a
// depth counter and the largest magnitude seen. Anything the real scheme could not represent
// (depth above L, a coefficient leaving Z_t) raises instead of wrapping.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "efc/bigint.hpp"
#include "efc/error.hpp"
#include "efc/he/bfv.hpp"
#include "efc/he/params.hpp"

namespace efc::he {

struct MockCiphertext {
    std::vector<i128> values;
    int level = 0;
    i128 magnitude = 0; ///< max |coefficient| over the value's history
    int depth = 0;      ///< multiplications on the longest path, plaintext products included

    friend bool operator==(const MockCiphertext&, const MockCiphertext&) = default;
};

class MockBackend {
public:
    using Ct = MockCiphertext;

    explicit MockBackend(HeParams params) : params_(std::move(params)) {
        require(params_.ring_dim >= 1 && (params_.ring_dim & (params_.ring_dim - 1)) == 0, ErrorCode::invalid_argument,
                "ring dimension must be a power of two");
        require(params_.t >= 2, ErrorCode::invalid_argument, "plaintext modulus must be at least 2");
        require(params_.levels >= 1, ErrorCode::invalid_argument, "at least one level is required");
    }

    [[nodiscard]] const HeParams& params() const { return params_; }

    [[nodiscard]] MockCiphertext encrypt(const Plaintext& p) const {
        check_plaintext(p, params_);
        MockCiphertext c{std::vector<i128>(p.coeffs.begin(), p.coeffs.end()), 0, 0};
        return settle(std::move(c));
    }

    [[nodiscard]] MockCiphertext encrypt_value(std::int64_t v) const { return encrypt(Plaintext::constant(params_.ring_dim, v)); }

    [[nodiscard]] Plaintext decrypt(const MockCiphertext& c) const {
        check(c);
        Plaintext p{std::vector<std::int64_t>(c.values.size())};
        for (std::size_t i = 0; i < c.values.size(); ++i) p.coeffs[i] = static_cast<std::int64_t>(c.values[i]);
        return p;
    }

    /// `checked` mirrors the real decryptor; exact values need no canary.
    [[nodiscard]] std::int64_t decrypt_value(const MockCiphertext& c, bool /*checked*/ = true) const { return decrypt(c).coeffs[0]; }

    [[nodiscard]] MockCiphertext zero(int level = 0) const {
        return {std::vector<i128>(params_.ring_dim, 0), level, 0};
    }

    [[nodiscard]] MockCiphertext add(const MockCiphertext& a, const MockCiphertext& b) const {
        check(a);
        check(b);
        MockCiphertext r{a.values, std::max(a.level, b.level), std::max(a.magnitude, b.magnitude), std::max(a.depth, b.depth)};
        for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] += b.values[i];
        return settle(std::move(r));
    }

    [[nodiscard]] MockCiphertext add_plain(const MockCiphertext& a, const Plaintext& p) const {
        check(a);
        check_plaintext(p, params_);
        MockCiphertext r = a;
        for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] += p.coeffs[i];
        return settle(std::move(r));
    }

    [[nodiscard]] MockCiphertext mul_plain(const MockCiphertext& a, const Plaintext& p) const {
        check(a);
        check_plaintext(p, params_);
        MockCiphertext r{product(a.values, std::vector<i128>(p.coeffs.begin(), p.coeffs.end())), a.level, a.magnitude, a.depth + 1};
        return settle(std::move(r));
    }

    [[nodiscard]] MockCiphertext mul(const MockCiphertext& a, const MockCiphertext& b) const {
        check(a);
        check(b);
        const int level = std::max(a.level, b.level) + 1;
        require(level <= params_.levels, ErrorCode::level_exceeded,
                "multiplication would reach level " + std::to_string(level) + " above L = " + std::to_string(params_.levels));
        MockCiphertext r{product(a.values, b.values), level, std::max(a.magnitude, b.magnitude), std::max(a.depth, b.depth) + 1};
        return settle(std::move(r));
    }

    [[nodiscard]] MockCiphertext mul_raw(const MockCiphertext& a, const MockCiphertext& b) const { return mul(a, b); }
    [[nodiscard]] MockCiphertext relinearize(const MockCiphertext& a) const { return a; }

    /// Circuit depth; level() counts ciphertext products only, which is what L limits.
    [[nodiscard]] static int depth(const MockCiphertext& c) { return c.depth; }
    [[nodiscard]] static int level(const MockCiphertext& c) { return c.level; }

private:
    void check(const MockCiphertext& c) const {
        require(c.values.size() == params_.ring_dim, ErrorCode::dimension_mismatch, "mock ciphertext has wrong length");
    }

    // exact negacyclic product, visiting nonzero coefficients only
    [[nodiscard]] static std::vector<i128> product(const std::vector<i128>& a, const std::vector<i128>& b) {
        const std::size_t n = a.size();
        std::vector<i128> r(n, 0);
        std::vector<std::size_t> nz_b;
        for (std::size_t j = 0; j < n; ++j) {
            if (b[j] != 0) nz_b.push_back(j);
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (a[i] == 0) continue;
            for (std::size_t j : nz_b) {
                i128 p = 0;
                require(!__builtin_mul_overflow(a[i], b[j], &p), ErrorCode::overflow, "mock product exceeds 128 bits");
                const std::size_t k = i + j;
                i128& slot = k < n ? r[k] : r[k - n];
                const bool bad = k < n ? __builtin_add_overflow(slot, p, &slot) : __builtin_sub_overflow(slot, p, &slot);
                require(!bad, ErrorCode::overflow, "mock accumulation exceeds 128 bits");
            }
        }
        return r;
    }

    [[nodiscard]] MockCiphertext settle(MockCiphertext c) const {
        const i128 t = static_cast<i128>(params_.t);
        for (auto v : c.values) {
            const i128 mag = abs128(v);
            c.magnitude = std::max(c.magnitude, mag);
            require(2 * mag < t, ErrorCode::overflow, "value " + to_string(v) + " leaves Z_t (|v| >= t/2, t = " + to_string(t) + ")");
        }
        return c;
    }

    HeParams params_;
};

} // namespace efc::he
