#pragma once

// Ciphertext wire form:
//   u32 length of the rest | u8 polynomial count | u8 level | count * n_r u64 words
// The mock variant sends one "polynomial" holding the exact values in two's complement.

#include <cstdint>
#include <string>
#include <type_traits>

#include "efc/bytes.hpp"
#include "efc/he/bfv.hpp"
#include "efc/he/mock.hpp"

namespace efc::he {

inline void write_ciphertext(ByteWriter& w, const Ciphertext& c) {
    require(c.size() >= 1 && c.size() <= 255 && c.level >= 0 && c.level <= 255, ErrorCode::invalid_argument,
            "ciphertext header out of range");
    const std::size_t n = c.polys.front().size();
    w.u32(static_cast<std::uint32_t>(2 + c.size() * n * 8));
    w.u8(static_cast<std::uint8_t>(c.size()));
    w.u8(static_cast<std::uint8_t>(c.level));
    for (const auto& p : c.polys) {
        require(p.size() == n, ErrorCode::invalid_argument, "ciphertext polynomials differ in length");
        for (auto x : p) w.u64(x);
    }
}

inline Ciphertext read_ciphertext(ByteReader& r, const HeParams& params) {
    const std::uint32_t len = r.u32();
    require(len >= 2, ErrorCode::protocol_error, "ciphertext frame too short");
    const std::uint8_t count = r.u8();
    const std::uint8_t level = r.u8();
    require(count >= 2 && count <= 3, ErrorCode::protocol_error, "ciphertext must hold 2 or 3 polynomials");
    require(level <= params.levels, ErrorCode::protocol_error, "ciphertext level above L");
    require(len == 2 + std::uint64_t{count} * params.ring_dim * 8, ErrorCode::protocol_error,
            "ciphertext length " + std::to_string(len) + " does not match the parameters");
    Ciphertext c;
    c.level = level;
    for (int i = 0; i < count; ++i) {
        Poly p(params.ring_dim);
        for (auto& x : p) {
            x = r.u64();
            require(x < params.q_c, ErrorCode::protocol_error, "ciphertext coefficient not reduced mod q");
        }
        c.polys.push_back(std::move(p));
    }
    return c;
}

inline void write_ciphertext(ByteWriter& w, const MockCiphertext& c) {
    require(c.level >= 0 && c.level <= 255, ErrorCode::invalid_argument, "ciphertext level out of range");
    w.u32(static_cast<std::uint32_t>(2 + c.values.size() * 8));
    w.u8(1);
    w.u8(static_cast<std::uint8_t>(c.level));
    for (auto v : c.values) {
        require(v >= INT64_MIN && v <= INT64_MAX, ErrorCode::overflow, "mock value exceeds the 64-bit wire word");
        w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
    }
}

inline MockCiphertext read_mock_ciphertext(ByteReader& r, const HeParams& params) {
    const std::uint32_t len = r.u32();
    const std::uint8_t count = r.u8();
    const std::uint8_t level = r.u8();
    require(count == 1, ErrorCode::protocol_error, "mock ciphertext must hold one value vector");
    require(level <= params.levels, ErrorCode::protocol_error, "ciphertext level above L");
    require(len == 2 + std::uint64_t{params.ring_dim} * 8, ErrorCode::protocol_error, "mock ciphertext length mismatch");
    MockCiphertext c;
    c.level = level;
    c.values.resize(params.ring_dim);
    for (auto& v : c.values) {
        v = static_cast<std::int64_t>(r.u64());
        c.magnitude = std::max(c.magnitude, abs128(v));
    }
    return c;
}

template <class Ct>
Bytes to_bytes(const Ct& c) {
    ByteWriter w;
    write_ciphertext(w, c);
    return w.take();
}

template <class Ct>
Ct from_bytes(const Bytes& b, const HeParams& params) {
    ByteReader r(b);
    Ct c;
    if constexpr (std::is_same_v<Ct, MockCiphertext>) {
        c = read_mock_ciphertext(r, params);
    } else {
        c = read_ciphertext(r, params);
    }
    require(r.done(), ErrorCode::protocol_error, "trailing bytes after ciphertext");
    return c;
}

} // namespace efc::he
