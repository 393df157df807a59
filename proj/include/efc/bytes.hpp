#pragma once

// Little-endian byte codec shared by the ciphertext and message wire forms.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "efc/error.hpp"

namespace efc {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void raw(const void* data, std::size_t len) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + len);
    }
    void blob(const Bytes& b) {
        u32(static_cast<std::uint32_t>(b.size()));
        raw(b.data(), b.size());
    }
    void text(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    /// overwrite a previously written u32 at offset
    void patch_u32(std::size_t offset, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_[offset + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
    }

    [[nodiscard]] std::size_t size() const { return buf_.size(); }
    [[nodiscard]] Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t len) : p_(data), len_(len) {}
    explicit ByteReader(const Bytes& b) : ByteReader(b.data(), b.size()) {}

    std::uint8_t u8() {
        need(1);
        return p_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{p_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{p_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
        pos_ += 8;
        return v;
    }
    Bytes raw(std::size_t len) {
        need(len);
        Bytes b(p_ + pos_, p_ + pos_ + len);
        pos_ += len;
        return b;
    }
    Bytes blob() { return raw(u32()); }
    std::string text() {
        const Bytes b = blob();
        return {b.begin(), b.end()};
    }

    [[nodiscard]] std::size_t remaining() const { return len_ - pos_; }
    [[nodiscard]] bool done() const { return pos_ == len_; }

private:
    void need(std::size_t n) const {
        require(len_ - pos_ >= n, ErrorCode::protocol_error, "truncated input: need " + std::to_string(n) + " more bytes");
    }

    const std::uint8_t* p_;
    std::size_t len_;
    std::size_t pos_ = 0;
};

} // namespace efc
