#pragma once

// Frame: "EFC1" | u8 version | u8 type | u32 payload length (LE) | payload

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "efc/bytes.hpp"
#include "efc/error.hpp"

namespace efc::loop {

inline constexpr std::array<std::uint8_t, 4> kMagic{'E', 'F', 'C', '1'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MessageType : std::uint8_t {
    hello = 1,
    params = 2,
    sensor_data = 3,
    control_action = 4,
    state_refresh_down = 5,
    state_refresh_up = 6,
    bye = 7,
};

inline const char* to_string(MessageType t) {
    switch (t) {
    case MessageType::hello: return "HELLO";
    case MessageType::params: return "PARAMS";
    case MessageType::sensor_data: return "SENSOR_DATA";
    case MessageType::control_action: return "CONTROL_ACTION";
    case MessageType::state_refresh_down: return "STATE_REFRESH_DOWN";
    case MessageType::state_refresh_up: return "STATE_REFRESH_UP";
    case MessageType::bye: return "BYE";
    }
    return "UNKNOWN";
}

struct WireMessage {
    MessageType type = MessageType::hello;
    Bytes payload;
};

inline Bytes encode_frame(const WireMessage& msg) {
    require(msg.payload.size() <= kMaxPayload, ErrorCode::protocol_error, "payload too large");
    ByteWriter w;
    w.raw(kMagic.data(), kMagic.size());
    w.u8(kVersion);
    w.u8(static_cast<std::uint8_t>(msg.type));
    w.u32(static_cast<std::uint32_t>(msg.payload.size()));
    w.raw(msg.payload.data(), msg.payload.size());
    return w.take();
}

struct FrameHeader {
    MessageType type;
    std::uint32_t length;
};

inline FrameHeader decode_header(const std::uint8_t* h) {
    require(std::memcmp(h, kMagic.data(), kMagic.size()) == 0, ErrorCode::protocol_error, "bad frame magic");
    require(h[4] == kVersion, ErrorCode::protocol_error, "unsupported protocol version " + std::to_string(h[4]));
    const std::uint8_t type = h[5];
    require(type >= 1 && type <= 7, ErrorCode::protocol_error, "unknown message type " + std::to_string(type));
    ByteReader r(h + 6, 4);
    const std::uint32_t len = r.u32();
    require(len <= kMaxPayload, ErrorCode::protocol_error, "declared payload too large");
    return {static_cast<MessageType>(type), len};
}

/// Decodes exactly one frame; trailing or missing bytes are errors.
inline WireMessage decode_frame(const Bytes& frame) {
    require(frame.size() >= kHeaderSize, ErrorCode::protocol_error, "frame shorter than its header");
    const FrameHeader h = decode_header(frame.data());
    require(frame.size() == kHeaderSize + h.length, ErrorCode::protocol_error, "frame length does not match its header");
    return {h.type, Bytes(frame.begin() + kHeaderSize, frame.end())};
}

/// Payload shared by SENSOR_DATA, CONTROL_ACTION and the refresh messages:
/// u64 step | u32 count | count ciphertexts in the he wire form.
struct CiphertextBatch {
    std::uint64_t step = 0;
    std::vector<Bytes> items; ///< each item is one serialized ciphertext including its length prefix
};

inline Bytes encode_batch(const CiphertextBatch& b) {
    ByteWriter w;
    w.u64(b.step);
    w.u32(static_cast<std::uint32_t>(b.items.size()));
    for (const auto& item : b.items) w.raw(item.data(), item.size());
    return w.take();
}

inline CiphertextBatch decode_batch(const Bytes& payload) {
    ByteReader r(payload);
    CiphertextBatch b;
    b.step = r.u64();
    const std::uint32_t count = r.u32();
    require(count <= 4096, ErrorCode::protocol_error, "too many ciphertexts in one message");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = r.u32();
        ByteWriter w;
        w.u32(len);
        const Bytes body = r.raw(len);
        w.raw(body.data(), body.size());
        b.items.push_back(w.take());
    }
    require(r.done(), ErrorCode::protocol_error, "trailing bytes after ciphertext batch");
    return b;
}

/// PARAMS payload: u32 json length | json | u32 blob count | (u32 length | bytes)*
struct ParamsPayload {
    std::string json;
    std::vector<Bytes> blobs;
};

inline Bytes encode_params(const ParamsPayload& p) {
    ByteWriter w;
    w.text(p.json);
    w.u32(static_cast<std::uint32_t>(p.blobs.size()));
    for (const auto& b : p.blobs) w.blob(b);
    return w.take();
}

inline ParamsPayload decode_params(const Bytes& payload) {
    ByteReader r(payload);
    ParamsPayload p;
    p.json = r.text();
    const std::uint32_t count = r.u32();
    require(count <= 65536, ErrorCode::protocol_error, "too many blobs in PARAMS");
    for (std::uint32_t i = 0; i < count; ++i) p.blobs.push_back(r.blob());
    require(r.done(), ErrorCode::protocol_error, "trailing bytes after PARAMS payload");
    return p;
}

} // namespace efc::loop
