#pragma once

// Message transports: in-process queue pairs, POSIX TCP sockets, and a lossy decorator for
// packet-loss experiments.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <utility>

#include "efc/error.hpp"
#include "efc/loop/wire.hpp"

namespace efc::loop {

using Millis = std::chrono::milliseconds;

class Transport {
public:
    virtual ~Transport() = default;
    virtual void send(const WireMessage& msg) = 0;
    /// nullopt on timeout; throws transport_failure when the peer is gone
    virtual std::optional<WireMessage> receive(Millis timeout) = 0;
    virtual void close() = 0;
};

/// Receive, failing with a diagnostic on timeout or on an unexpected type.
inline WireMessage expect(Transport& t, MessageType type, Millis timeout, const std::string& context) {
    auto msg = t.receive(timeout);
    require(msg.has_value(), ErrorCode::transport_failure, context + ": timed out waiting for " + to_string(type));
    require(msg->type == type, ErrorCode::protocol_error,
            context + ": expected " + std::string(to_string(type)) + ", got " + to_string(msg->type));
    return std::move(*msg);
}

namespace detail {

class Mailbox {
public:
    void put(Bytes frame) {
        {
            std::lock_guard lk(mu_);
            q_.push_back(std::move(frame));
        }
        cv_.notify_one();
    }

    std::optional<Bytes> take(Millis timeout) {
        std::unique_lock lk(mu_);
        if (!cv_.wait_for(lk, timeout, [&] { return !q_.empty() || closed_; })) return std::nullopt;
        if (q_.empty()) fail(ErrorCode::transport_failure, "peer closed the in-process channel");
        Bytes f = std::move(q_.front());
        q_.pop_front();
        return f;
    }

    void close() {
        {
            std::lock_guard lk(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Bytes> q_;
    bool closed_ = false;
};

} // namespace detail

/// One end of an in-process duplex channel. Messages pass through the byte-level frame codec
/// so both transports exercise the same wire form.
class InProcTransport : public Transport {
public:
    InProcTransport(std::shared_ptr<detail::Mailbox> in, std::shared_ptr<detail::Mailbox> out)
        : in_(std::move(in)), out_(std::move(out)) {}

    void send(const WireMessage& msg) override { out_->put(encode_frame(msg)); }

    std::optional<WireMessage> receive(Millis timeout) override {
        auto f = in_->take(timeout);
        if (!f) return std::nullopt;
        return decode_frame(*f);
    }

    void close() override { out_->close(); }

private:
    std::shared_ptr<detail::Mailbox> in_;
    std::shared_ptr<detail::Mailbox> out_;
};

inline std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> inproc_pair() {
    auto ab = std::make_shared<detail::Mailbox>();
    auto ba = std::make_shared<detail::Mailbox>();
    return {std::make_unique<InProcTransport>(ba, ab), std::make_unique<InProcTransport>(ab, ba)};
}

class SocketTransport : public Transport {
public:
    explicit SocketTransport(int fd) : fd_(fd) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    ~SocketTransport() override { close(); }
    SocketTransport(const SocketTransport&) = delete;
    SocketTransport& operator=(const SocketTransport&) = delete;

    static std::unique_ptr<SocketTransport> connect(const std::string& host, std::uint16_t port, Millis timeout = Millis(5000)) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
        require(rc == 0 && res, ErrorCode::transport_failure, "cannot resolve " + host + ": " + ::gai_strerror(rc));
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        std::string last = "unknown error";
        for (;;) {
            const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
            if (fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) == 0) {
                ::freeaddrinfo(res);
                return std::make_unique<SocketTransport>(fd);
            }
            last = std::strerror(errno);
            if (fd >= 0) ::close(fd);
            if (std::chrono::steady_clock::now() >= deadline) break;
            std::this_thread::sleep_for(Millis(20));
        }
        ::freeaddrinfo(res);
        fail(ErrorCode::transport_failure, "cannot connect to " + host + ":" + std::to_string(port) + ": " + last);
    }

    void send(const WireMessage& msg) override {
        require(fd_ >= 0, ErrorCode::transport_failure, "socket is closed");
        const Bytes frame = encode_frame(msg);
        std::size_t sent = 0;
        while (sent < frame.size()) {
            const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
            if (n < 0 && errno == EINTR) continue;
            require(n > 0, ErrorCode::transport_failure, std::string("send failed: ") + std::strerror(errno));
            sent += static_cast<std::size_t>(n);
        }
    }

    std::optional<WireMessage> receive(Millis timeout) override {
        require(fd_ >= 0, ErrorCode::transport_failure, "socket is closed");
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        std::uint8_t header[kHeaderSize];
        if (!read_exact(header, kHeaderSize, deadline, true)) return std::nullopt;
        FrameHeader h{};
        try {
            h = decode_header(header);
        } catch (const Error&) {
            close(); // malformed frame: drop the connection
            throw;
        }
        WireMessage msg{h.type, Bytes(h.length)};
        if (h.length > 0 && !read_exact(msg.payload.data(), h.length, deadline + Millis(5000), false)) {
            fail(ErrorCode::transport_failure, "timed out inside a frame");
        }
        return msg;
    }

    void close() override {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    bool read_exact(std::uint8_t* dst, std::size_t len, std::chrono::steady_clock::time_point deadline, bool may_timeout) {
        std::size_t got = 0;
        while (got < len) {
            const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now()).count();
            if (left <= 0) {
                require(may_timeout && got == 0, ErrorCode::transport_failure, "timed out inside a frame");
                return false;
            }
            pollfd p{fd_, POLLIN, 0};
            const int pr = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, 1000)));
            if (pr < 0 && errno == EINTR) continue;
            require(pr >= 0, ErrorCode::transport_failure, std::string("poll failed: ") + std::strerror(errno));
            if (pr == 0) continue;
            const ssize_t n = ::recv(fd_, dst + got, len - got, 0);
            if (n < 0 && errno == EINTR) continue;
            require(n > 0, ErrorCode::transport_failure, n == 0 ? "peer closed the connection" : std::string("recv failed: ") + std::strerror(errno));
            got += static_cast<std::size_t>(n);
        }
        return true;
    }

    int fd_;
};

class SocketListener {
public:
    /// port 0 picks an ephemeral port
    explicit SocketListener(std::uint16_t port, const std::string& bind_addr = "127.0.0.1") {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        require(fd_ >= 0, ErrorCode::transport_failure, "cannot create socket");
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        require(::inet_pton(AF_INET, bind_addr.c_str(), &addr.sin_addr) == 1, ErrorCode::transport_failure, "bad bind address " + bind_addr);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0) {
            const std::string why = std::strerror(errno);
            ::close(fd_);
            fail(ErrorCode::transport_failure, "cannot listen on " + bind_addr + ":" + std::to_string(port) + ": " + why);
        }
        socklen_t len = sizeof addr;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }
    ~SocketListener() {
        if (fd_ >= 0) ::close(fd_);
    }
    SocketListener(const SocketListener&) = delete;
    SocketListener& operator=(const SocketListener&) = delete;

    std::unique_ptr<SocketTransport> accept(Millis timeout) {
        pollfd p{fd_, POLLIN, 0};
        const int pr = ::poll(&p, 1, static_cast<int>(timeout.count()));
        require(pr > 0, ErrorCode::transport_failure, "no connection within the accept timeout");
        const int c = ::accept(fd_, nullptr, nullptr);
        require(c >= 0, ErrorCode::transport_failure, std::string("accept failed: ") + std::strerror(errno));
        return std::make_unique<SocketTransport>(c);
    }

    [[nodiscard]] std::uint16_t port() const { return port_; }

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

/// Drops outgoing messages of the selected types with a given probability, or by explicit
/// index, and can delay delivery.
class LossyTransport : public Transport {
public:
    struct Policy {
        double drop_probability = 0.0;
        std::set<MessageType> affected{MessageType::state_refresh_down, MessageType::state_refresh_up};
        std::set<std::uint64_t> drop_indices; ///< n-th affected message (0-based) is dropped
        Millis delay{0};
        std::uint64_t seed = 1;
    };

    LossyTransport(std::unique_ptr<Transport> inner, Policy policy)
        : inner_(std::move(inner)), policy_(std::move(policy)), rng_(policy_.seed) {}

    void send(const WireMessage& msg) override {
        if (policy_.affected.count(msg.type)) {
            const std::uint64_t idx = counter_++;
            const bool drop = policy_.drop_indices.count(idx) > 0 || (policy_.drop_probability > 0 && coin_(rng_) < policy_.drop_probability);
            if (drop) {
                ++dropped_;
                return;
            }
        }
        if (policy_.delay.count() > 0) std::this_thread::sleep_for(policy_.delay);
        inner_->send(msg);
    }

    std::optional<WireMessage> receive(Millis timeout) override { return inner_->receive(timeout); }
    void close() override { inner_->close(); }

    [[nodiscard]] std::uint64_t dropped() const { return dropped_; }

private:
    std::unique_ptr<Transport> inner_;
    Policy policy_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> coin_{0.0, 1.0};
    std::uint64_t counter_ = 0;
    std::uint64_t dropped_ = 0;
};

/// Counts messages and ciphertexts per type (outgoing) for protocol accounting.
class CountingTransport : public Transport {
public:
    explicit CountingTransport(std::unique_ptr<Transport> inner) : inner_(std::move(inner)) {}

    void send(const WireMessage& msg) override {
        const auto t = static_cast<std::size_t>(msg.type);
        ++messages_[t];
        if (carries_batch(msg.type)) ciphertexts_[t] += decode_batch(msg.payload).items.size();
        inner_->send(msg);
    }
    std::optional<WireMessage> receive(Millis timeout) override { return inner_->receive(timeout); }
    void close() override { inner_->close(); }

    [[nodiscard]] std::uint64_t messages(MessageType t) const { return messages_[static_cast<std::size_t>(t)]; }
    [[nodiscard]] std::uint64_t ciphertexts(MessageType t) const { return ciphertexts_[static_cast<std::size_t>(t)]; }

    static bool carries_batch(MessageType t) {
        return t == MessageType::sensor_data || t == MessageType::control_action || t == MessageType::state_refresh_down ||
               t == MessageType::state_refresh_up;
    }

private:
    std::unique_ptr<Transport> inner_;
    std::array<std::uint64_t, 8> messages_{};
    std::array<std::uint64_t, 8> ciphertexts_{};
};

/// Passes everything through and hands each received message to a callback.
class RecordingTransport : public Transport {
public:
    using Sink = std::function<void(const WireMessage&)>;

    RecordingTransport(std::unique_ptr<Transport> inner, Sink on_receive) : inner_(std::move(inner)), sink_(std::move(on_receive)) {}

    void send(const WireMessage& msg) override { inner_->send(msg); }
    std::optional<WireMessage> receive(Millis timeout) override {
        auto msg = inner_->receive(timeout);
        if (msg && sink_) sink_(*msg);
        return msg;
    }
    void close() override { inner_->close(); }

private:
    std::unique_ptr<Transport> inner_;
    Sink sink_;
};

} // namespace efc::loop
