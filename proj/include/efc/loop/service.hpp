#pragma once

// Closed-loop execution. The plant runs in plaintext on the sensor/actuator side; the controller
// is stepped once per sample, either locally or through a cloud role behind a transport.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "efc/baselines.hpp"
#include "efc/encrypted_fir.hpp"
#include "efc/fir.hpp"
#include "efc/he/bfv.hpp"
#include "efc/he/certify.hpp"
#include "efc/he/mock.hpp"
#include "efc/he/wire.hpp"
#include "efc/io/json.hpp"
#include "efc/loop/transport.hpp"
#include "efc/loop/wire.hpp"
#include "efc/lti.hpp"
#include "efc/quantizer.hpp"

namespace efc::loop {

inline constexpr unsigned kFlagOverflow = 1; ///< integer overflow or a headroom assumption violated
inline constexpr unsigned kFlagNoise = 2;    ///< decryption canary tripped
inline constexpr unsigned kFlagRefresh = 4;  ///< a state refresh completed after this step

// ---------------------------------------------------------------------------
// Interconnection
// ---------------------------------------------------------------------------

struct ClosedLoop {
    Matrix a;
    double spectral_radius = 0.0;
    bool stable = false;
};

/// Plant x+ = Ap x + Bp u, y = Cp x + Dp u under u = Cc xc + Dc y. The feedthrough loop is solved
/// with (I - Dc Dp)^{-1}.
inline ClosedLoop closed_loop_matrix(const StateSpace& plant, const StateSpace& ctrl) {
    require(ctrl.inputs() == plant.outputs() && ctrl.outputs() == plant.inputs(), ErrorCode::dimension_mismatch,
            "controller I/O does not match the plant");
    const Index m = plant.inputs();
    const Eigen::FullPivLU<Matrix> lu(Matrix::Identity(m, m) - ctrl.d * plant.d);
    require(lu.isInvertible(), ErrorCode::invalid_argument, "ill-posed loop: I - Dc Dp is singular");
    const Matrix inv = lu.inverse();
    const Matrix ux = inv * ctrl.d * plant.c;
    const Matrix uxc = inv * ctrl.c;
    const Index n = plant.states();
    const Index nc = ctrl.states();
    ClosedLoop out;
    out.a.resize(n + nc, n + nc);
    out.a.topLeftCorner(n, n) = plant.a + plant.b * ux;
    out.a.topRightCorner(n, nc) = plant.b * uxc;
    out.a.bottomLeftCorner(nc, n) = ctrl.b * (plant.c + plant.d * ux);
    out.a.bottomRightCorner(nc, nc) = ctrl.a + ctrl.b * plant.d * uxc;
    out.spectral_radius = spectral_radius(out.a);
    out.stable = is_schur(out.a);
    return out;
}

inline ClosedLoop closed_loop_matrix(const StateSpace& plant, const FirFilter& f) { return closed_loop_matrix(plant, fir_to_statespace(f)); }

// ---------------------------------------------------------------------------
// Controllers as seen by the plant side
// ---------------------------------------------------------------------------

class StepController {
public:
    virtual ~StepController() = default;
    /// u(k) from y(k); may set kFlag* bits
    virtual Vector step(const Vector& y, unsigned& flags) = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

class LinearController : public StepController {
public:
    explicit LinearController(StateSpace sys, std::string name = "iir") : sys_(std::move(sys)), x_(sys_.x0), name_(std::move(name)) {}

    Vector step(const Vector& y, unsigned&) override {
        require(y.size() == sys_.inputs(), ErrorCode::dimension_mismatch, "input width does not match the controller");
        Vector u = sys_.c * x_ + sys_.d * y;
        x_ = sys_.a * x_ + sys_.b * y;
        return u;
    }
    [[nodiscard]] std::string name() const override { return name_; }

private:
    StateSpace sys_;
    Vector x_;
    std::string name_;
};

/// Integer reformulation evaluated in the clear, with recovery at the actuator.
class QuantizedIirController : public StepController {
public:
    QuantizedIirController(const StateSpace& sys, ScalingProfile profile) : ctrl_(sys, std::move(profile)) {}

    Vector step(const Vector& y, unsigned& flags) override {
        const std::uint64_t k = ctrl_.step_index();
        const IntegerStep s = ctrl_.step(y);
        if (s.overflowed) flags |= kFlagOverflow;
        return recover(s.v, k, ctrl_.profile(), RecoveryKind::input);
    }
    [[nodiscard]] std::string name() const override { return "quantized-iir"; }

private:
    IntegerController ctrl_;
};

class ResetStepController : public StepController {
public:
    explicit ResetStepController(ResetController rc) : rc_(std::move(rc)) {}
    Vector step(const Vector& y, unsigned&) override { return rc_.step(y); }
    [[nodiscard]] std::string name() const override { return "reset(T=" + std::to_string(rc_.period()) + ")"; }

private:
    ResetController rc_;
};

class PlainFirController : public StepController {
public:
    explicit PlainFirController(FirFilter f) : f_(std::move(f)), hist_(f_.order(), f_.inputs()) {}
    Vector step(const Vector& y, unsigned&) override {
        hist_.push(y);
        return evaluate_fir(f_, hist_);
    }
    [[nodiscard]] std::string name() const override { return "fir(N=" + std::to_string(f_.order()) + ")"; }

private:
    FirFilter f_;
    InputHistory hist_;
};

// ---------------------------------------------------------------------------
// Encrypted FIR roles
// ---------------------------------------------------------------------------

/// Cloud side of an encrypted FIR session, after HELLO/PARAMS. PARAMS json:
/// {"kind": "fir", "mode", "order", "inputs", "outputs", "precompute", "he_params", "taps" (partial)};
/// full mode carries the encrypted taps as blobs, ordered by lag then row-major entry.
template <class Eval>
void serve_fir(Transport& link, const Eval& ev, const ParamsPayload& payload, const io::Json& j, Millis idle_timeout) {
    using Ct = typename Eval::Ct;
    const he::HeParams& p = ev.params();
    for (const char* k : {"mode", "order", "inputs", "outputs"}) io::detail::expect_field(j, k, "fir PARAMS");
    EncryptedTaps<Ct> taps;
    try {
        taps.mode = tap_mode_from_string(j["mode"].get<std::string>());
    } catch (const std::exception& e) {
        fail(ErrorCode::protocol_error, std::string("fir PARAMS mode: ") + e.what());
    }
    const auto order = io::detail::unsigned_int(j["order"], "order");
    const auto l = static_cast<Index>(io::detail::unsigned_int(j["inputs"], "inputs"));
    const auto m = static_cast<Index>(io::detail::unsigned_int(j["outputs"], "outputs"));
    require(l >= 1 && m >= 1 && order < 4096, ErrorCode::protocol_error, "fir PARAMS dimensions out of range");
    const bool precompute = j.value("precompute", false);
    if (taps.mode == TapMode::partial) {
        io::detail::expect_field(j, "taps", "fir PARAMS");
        require(j["taps"].is_array() && j["taps"].size() == order + 1, ErrorCode::protocol_error, "fir PARAMS taps have the wrong count");
        for (const auto& t : j["taps"]) {
            IntMatrix<i128> tm = io::int_matrix_from_json(t, "fir PARAMS tap");
            require(tm.rows == m && tm.cols == l, ErrorCode::protocol_error, "fir PARAMS tap has the wrong shape");
            std::vector<he::Plaintext> row;
            for (i128 v : tm.data) row.push_back(efc::detail::scalar_plain(p, v));
            taps.plain.push_back(std::move(row));
            taps.integers.taps.push_back(std::move(tm));
        }
    } else {
        const std::size_t per_tap = static_cast<std::size_t>(l * m);
        require(payload.blobs.size() == (order + 1) * per_tap, ErrorCode::protocol_error, "fir PARAMS carries the wrong number of tap ciphertexts");
        for (std::size_t jj = 0; jj <= order; ++jj) {
            std::vector<Ct> row;
            for (std::size_t e = 0; e < per_tap; ++e) row.push_back(he::from_bytes<Ct>(payload.blobs[jj * per_tap + e], p));
            taps.cipher.push_back(std::move(row));
            taps.integers.taps.emplace_back(m, l); // shape only; the cloud never sees tap values
        }
    }

    EncryptedHistory<Ct> hist(order, l, ev.zero());
    std::vector<Ct> deferred;
    if (precompute) deferred = deferred_sum(ev, taps, hist);
    for (;;) {
        auto msg = link.receive(idle_timeout);
        require(msg.has_value(), ErrorCode::transport_failure, "fir cloud: no message within the idle timeout");
        if (msg->type == MessageType::bye) return;
        require(msg->type == MessageType::sensor_data, ErrorCode::protocol_error,
                std::string("fir cloud: unexpected ") + to_string(msg->type));
        std::uint64_t step = 0;
        auto y = efc::detail::batch_ciphertexts<Ct>(*msg, p, static_cast<std::size_t>(l), &step);
        const auto v = precompute ? precomputed_step(ev, taps, hist, deferred, std::move(y)) : encrypted_step(ev, taps, hist, std::move(y));
        link.send(efc::detail::batch_message(MessageType::control_action, step, v));
        if (precompute) deferred = deferred_sum(ev, taps, hist); // between samples
    }
}

/// Cloud entry point for any session kind: HELLO, PARAMS, then the kind's stepping loop.
template <class Eval>
void serve_session(Transport& link, const Eval& ev, Millis idle_timeout) {
    expect(link, MessageType::hello, idle_timeout, "cloud");
    const auto msg = expect(link, MessageType::params, idle_timeout, "cloud");
    const ParamsPayload payload = decode_params(msg.payload);
    io::Json j;
    try {
        j = io::Json::parse(payload.json);
    } catch (const io::Json::exception& e) {
        fail(ErrorCode::protocol_error, std::string("PARAMS json: ") + e.what());
    }
    io::check_params_match(j, ev.params());
    const std::string kind = j.is_object() ? j.value("kind", "") : "";
    if (kind == "fir") {
        serve_fir(link, ev, payload, j, idle_timeout);
    } else if (kind == "refresh") {
        auto cloud = RefreshCloud<Eval>::from_params(ev, j);
        std::vector<typename Eval::Ct> z0;
        for (const auto& b : payload.blobs) z0.push_back(he::from_bytes<typename Eval::Ct>(b, ev.params()));
        cloud.run(link, std::move(z0), idle_timeout);
    } else {
        fail(ErrorCode::protocol_error, "PARAMS names an unknown session kind '" + kind + "'");
    }
}

/// Sensor and actuator side of an encrypted FIR session. The sensor rounds and encrypts
/// round(s7 y); the actuator decrypts and divides by s6 s7.
template <class Enc, class Dec>
class FirClient {
public:
    FirClient(Enc enc, Dec dec, FirSessionConfig cfg, he::HeParams params)
        : enc_(std::move(enc)), dec_(std::move(dec)), cfg_(std::move(cfg)), params_(std::move(params)),
          integers_(quantize_taps(cfg_.filter, cfg_.s6)) {
        check_headroom(integers_, cfg_.s7, cfg_.y_max, params_.t);
    }

    template <class Ct>
    void handshake(Transport& link) {
        link.send({MessageType::hello, Bytes{'s', 'e', 'n', 's', 'o', 'r'}});
        io::Json j{{"kind", "fir"},
                   {"mode", to_string(cfg_.mode)},
                   {"order", integers_.order()},
                   {"inputs", integers_.inputs()},
                   {"outputs", integers_.outputs()},
                   {"precompute", cfg_.precompute},
                   {"he_params", io::to_json(params_)}};
        ParamsPayload p;
        if (cfg_.mode == TapMode::partial) {
            io::Json taps = io::Json::array();
            for (const auto& t : integers_.taps) taps.push_back(io::to_json(t));
            j["taps"] = taps;
        } else {
            const auto enc_taps = encode_taps<Ct>(integers_, TapMode::full, params_, &enc_);
            for (const auto& row : enc_taps.cipher)
                for (const auto& c : row) p.blobs.push_back(he::to_bytes(c));
        }
        p.json = j.dump();
        link.send({MessageType::params, encode_params(p)});
    }

    /// One round trip. `raw` receives the decrypted integers v_f(k).
    template <class Ct>
    Vector step(Transport& link, const Vector& y, Millis timeout, unsigned& flags, std::vector<std::int64_t>* raw = nullptr) {
        require(y.size() == integers_.inputs(), ErrorCode::dimension_mismatch, "input width does not match the filter");
        if (y.cwiseAbs().maxCoeff() > cfg_.y_max) flags |= kFlagOverflow;
        const auto yq = quantize_input(y, cfg_.s7, params_.t);
        link.send(efc::detail::batch_message(MessageType::sensor_data, k_, encrypt_input(enc_, yq)));
        const auto action = expect(link, MessageType::control_action, timeout, "actuator");
        const auto cts = efc::detail::batch_ciphertexts<Ct>(action, params_, static_cast<std::size_t>(integers_.outputs()));
        std::vector<std::int64_t> v;
        for (const auto& c : cts) {
            try {
                v.push_back(dec_.decrypt_value(c));
            } catch (const Error& e) {
                if (e.code() != ErrorCode::noise_overflow) throw;
                flags |= kFlagNoise;
                v.push_back(dec_.decrypt_value(c, false));
            }
        }
        ++k_;
        if (raw) *raw = v;
        return recover_fir(v, cfg_.s6, cfg_.s7);
    }

    [[nodiscard]] const IntegerFir& integers() const { return integers_; }
    [[nodiscard]] const FirSessionConfig& config() const { return cfg_; }

private:
    Enc enc_;
    Dec dec_;
    FirSessionConfig cfg_;
    he::HeParams params_;
    IntegerFir integers_;
    std::uint64_t k_ = 0;
};

// ---------------------------------------------------------------------------
// Hosting the cloud role
// ---------------------------------------------------------------------------

struct TransportSpec {
    enum class Kind { inproc, socket };
    Kind kind = Kind::inproc;
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;  ///< 0 with a local cloud picks an ephemeral port
    bool local_cloud = true; ///< run the cloud role on a thread of this process
    Millis timeout{10000};
    RecordingTransport::Sink on_receive; ///< sees every message the plant side receives
};

/// Runs serve_session on its own thread, behind an in-process channel or a loopback listener.
class CloudHost {
public:
    template <class Eval>
    CloudHost(Eval ev, const TransportSpec& spec) {
        if (spec.kind == TransportSpec::Kind::inproc) {
            auto [client, cloud] = inproc_pair();
            client_ = std::move(client);
            cloud_ = std::move(cloud);
            worker_ = std::thread([this, ev = std::move(ev)] { guarded([&] { serve_session(*cloud_, ev, Millis(600000)); }); });
        } else {
            listener_ = std::make_unique<SocketListener>(spec.port, spec.host);
            const std::uint16_t port = listener_->port();
            worker_ = std::thread([this, ev = std::move(ev), timeout = spec.timeout] {
                guarded([&] {
                    auto conn = listener_->accept(timeout);
                    {
                        std::lock_guard lk(mu_);
                        cloud_ = std::move(conn);
                    }
                    serve_session(*cloud_, ev, Millis(600000));
                });
            });
            try {
                client_ = SocketTransport::connect(spec.host, port, spec.timeout);
            } catch (...) {
                worker_.join();
                throw;
            }
        }
    }

    ~CloudHost() {
        if (worker_.joinable()) worker_.join();
    }
    CloudHost(const CloudHost&) = delete;
    CloudHost& operator=(const CloudHost&) = delete;

    /// The plant-side end; call once.
    std::unique_ptr<Transport> take_client_link() { return std::move(client_); }

    void join() {
        if (worker_.joinable()) worker_.join();
    }

    [[nodiscard]] std::optional<Error> error() {
        std::lock_guard lk(mu_);
        return error_;
    }

private:
    template <class F>
    void guarded(F&& f) {
        try {
            f();
        } catch (const Error& e) {
            std::lock_guard lk(mu_);
            error_ = e;
        } catch (const std::exception& e) {
            std::lock_guard lk(mu_);
            error_ = Error(ErrorCode::protocol_error, e.what());
        }
        std::lock_guard lk(mu_);
        if (cloud_) cloud_->close();
    }

    std::mutex mu_;
    std::unique_ptr<Transport> client_;
    std::unique_ptr<Transport> cloud_;
    std::unique_ptr<SocketListener> listener_;
    std::thread worker_;
    std::optional<Error> error_;
};

/// Plant-side controller whose law is evaluated by a (possibly remote) cloud.
template <class Client, class Ct>
class RemoteController : public StepController {
public:
    RemoteController(std::string name, Client client, std::unique_ptr<CloudHost> host, std::unique_ptr<Transport> link, Millis timeout)
        : name_(std::move(name)), client_(std::move(client)), host_(std::move(host)), timeout_(timeout) {
        auto counting = std::make_unique<CountingTransport>(std::move(link));
        counter_ = counting.get();
        link_ = std::move(counting);
    }

    ~RemoteController() override {
        if (!failed_) {
            try {
                link_->send({MessageType::bye, {}});
            } catch (...) {
            }
        }
        if (host_) host_->join();
        link_->close();
    }
    RemoteController(const RemoteController&) = delete;
    RemoteController& operator=(const RemoteController&) = delete;

    template <class... Args>
    void handshake(Args&&... args) {
        guard([&] { client_.template handshake<Ct>(*link_, std::forward<Args>(args)...); });
    }

    Vector step(const Vector& y, unsigned& flags) override {
        require(!failed_, ErrorCode::transport_failure, "session has halted");
        Vector u;
        guard([&] { u = client_step(y, flags); });
        return u;
    }

    [[nodiscard]] std::string name() const override { return name_; }
    [[nodiscard]] const CountingTransport& counter() const { return *counter_; }
    [[nodiscard]] Client& client() { return client_; }

    /// Last decrypted integer outputs (FIR sessions only).
    [[nodiscard]] const std::vector<std::int64_t>& last_raw() const { return raw_; }

private:
    Vector client_step(const Vector& y, unsigned& flags) {
        if constexpr (requires { client_.template step<Ct>(*link_, y, timeout_); }) {
            const RefreshStep s = client_.template step<Ct>(*link_, y, timeout_);
            if (s.refreshed) flags |= kFlagRefresh;
            return s.u;
        } else {
            return client_.template step<Ct>(*link_, y, timeout_, flags, &raw_);
        }
    }

    template <class F>
    void guard(F&& f) {
        try {
            f();
        } catch (const Error&) {
            failed_ = true;
            link_->close();
            if (host_) {
                host_->join();
                if (auto e = host_->error()) throw *e;
            }
            throw;
        }
    }

    std::string name_;
    Client client_;
    std::unique_ptr<CloudHost> host_;
    std::unique_ptr<Transport> link_;
    CountingTransport* counter_ = nullptr;
    Millis timeout_;
    bool failed_ = false;
    std::vector<std::int64_t> raw_;
};

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

enum class ControllerKind { zero, iir, quantized_iir, reset, fir, encrypted_fir, refresh };

inline const char* to_string(ControllerKind k) {
    switch (k) {
    case ControllerKind::zero: return "zero";
    case ControllerKind::iir: return "iir";
    case ControllerKind::quantized_iir: return "quantized-iir";
    case ControllerKind::reset: return "reset";
    case ControllerKind::fir: return "fir";
    case ControllerKind::encrypted_fir: return "encrypted-fir";
    case ControllerKind::refresh: return "refresh";
    }
    return "unknown";
}

inline ControllerKind controller_kind_from_string(const std::string& s) {
    for (auto k : {ControllerKind::zero, ControllerKind::iir, ControllerKind::quantized_iir, ControllerKind::reset, ControllerKind::fir,
                   ControllerKind::encrypted_fir, ControllerKind::refresh}) {
        if (s == to_string(k)) return k;
    }
    fail(ErrorCode::schema_error, "unknown controller kind '" + s + "'");
}

struct ControllerSpec {
    ControllerKind kind = ControllerKind::zero;
    StateSpace model;                          ///< iir, quantized-iir, reset, refresh
    ScalingProfile profile;                    ///< quantized-iir, refresh
    std::uint64_t period = 8;                  ///< reset, refresh
    std::optional<Vector> x_reset;             ///< reset; defaults to the model's x0
    FirSessionConfig fir;                      ///< fir (filter only), encrypted-fir
    std::string backend = "bfv";               ///< encrypted kinds: "bfv" or "mock"
    std::optional<he::HeParams> he_params;     ///< default: certified for the session
    std::optional<io::SecretKeyFile> keys;     ///< default: generated from key_seed
    std::uint64_t key_seed = 1;
    double y_max = 200.0;                      ///< refresh: bound for the overflow-horizon precondition
};

struct Scenario {
    StateSpace plant;
    ControllerSpec controller;
    std::optional<Vector> x0; ///< default: plant.x0
    std::size_t steps = 300;
    TransportSpec transport;
    std::uint64_t seed = 1;
};

struct TraceRow {
    std::uint64_t k = 0;
    Vector x;
    Vector y;
    Vector u;
    double norm_x = 0.0;
    double latency_ms = 0.0;
    unsigned flags = 0;
};

struct SimTrace {
    std::string controller;
    std::vector<TraceRow> rows;
    Vector final_state;

    [[nodiscard]] std::size_t size() const { return rows.size(); }

    /// first k with |x(k)| < fraction |x(0)|
    [[nodiscard]] std::optional<std::size_t> first_below(double fraction) const {
        if (rows.empty()) return std::nullopt;
        for (const auto& r : rows) {
            if (r.norm_x < fraction * rows.front().norm_x) return r.k;
        }
        return std::nullopt;
    }

    [[nodiscard]] unsigned flags() const {
        unsigned f = 0;
        for (const auto& r : rows) f |= r.flags;
        return f;
    }
};

/// Steps plant and controller: y(k) = C x(k), u(k) = controller(y(k)), x(k+1) = A x(k) + B u(k).
inline SimTrace run_loop(const StateSpace& plant, StepController& ctrl, const Vector& x0, std::size_t steps) {
    require(plant.d.isZero(0.0), ErrorCode::invalid_argument, "stepwise execution needs a plant without feedthrough (D = 0)");
    require(x0.size() == plant.states(), ErrorCode::dimension_mismatch, "initial plant state has wrong length");
    SimTrace tr;
    tr.controller = ctrl.name();
    Vector x = x0;
    for (std::size_t k = 0; k < steps; ++k) {
        TraceRow row;
        row.k = k;
        row.x = x;
        row.y = plant.c * x;
        row.norm_x = x.norm();
        const auto t0 = std::chrono::steady_clock::now();
        try {
            row.u = ctrl.step(row.y, row.flags);
        } catch (const Error& e) {
            fail(e.code(), "step " + std::to_string(k) + ": " + e.what());
        }
        row.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        require(row.u.size() == plant.inputs(), ErrorCode::dimension_mismatch, "controller output width does not match the plant");
        x = plant.a * x + plant.b * row.u;
        tr.rows.push_back(std::move(row));
    }
    tr.final_state = x;
    return tr;
}

namespace detail {

inline std::unique_ptr<Transport> connect_remote(const TransportSpec& spec) {
    require(spec.kind == TransportSpec::Kind::socket, ErrorCode::invalid_argument, "a remote cloud needs a socket transport");
    return SocketTransport::connect(spec.host, spec.port, spec.timeout);
}

/// Key material for the plant side; the relinearization key is regenerated from the seed only
/// when a local cloud needs it.
struct PlantKeys {
    he::KeyMaterial km;
    bool has_relin = false;
};

inline PlantKeys plant_keys(const ControllerSpec& spec, const he::HeParams& params, bool need_relin) {
    PlantKeys out;
    if (spec.keys) {
        require(spec.keys->params == params, ErrorCode::invalid_argument, "key file parameters differ from the session parameters");
        if (need_relin) {
            out.km = he::keygen(params, spec.keys->seed);
            require(out.km.secret.s == spec.keys->secret.s, ErrorCode::invalid_argument, "secret key does not match its recorded seed");
            out.has_relin = true;
        } else {
            out.km.params = params;
            out.km.seed = spec.keys->seed;
            out.km.secret = spec.keys->secret;
        }
    } else {
        out.km = he::keygen(params, spec.key_seed);
        out.has_relin = true;
    }
    return out;
}

inline std::uint64_t encryptor_seed(std::uint64_t seed) { return seed ^ 0xd1b54a32d192ed03ULL; }

template <class Client, class Ct, class Eval, class... Handshake>
std::unique_ptr<StepController> launch(std::string name, Client client, std::optional<Eval> ev, const TransportSpec& tspec,
                                       Handshake&&... hs) {
    std::unique_ptr<CloudHost> host;
    std::unique_ptr<Transport> link;
    if (tspec.local_cloud) {
        require(ev.has_value(), ErrorCode::invalid_argument, "a local cloud needs evaluation keys");
        host = std::make_unique<CloudHost>(std::move(*ev), tspec);
        link = host->take_client_link();
    } else {
        link = connect_remote(tspec);
    }
    if (tspec.on_receive) link = std::make_unique<RecordingTransport>(std::move(link), tspec.on_receive);
    auto rc = std::make_unique<RemoteController<Client, Ct>>(std::move(name), std::move(client), std::move(host), std::move(link), tspec.timeout);
    rc->handshake(std::forward<Handshake>(hs)...);
    return rc;
}

} // namespace detail

/// Certified parameters for an encrypted FIR session unless given explicitly.
inline he::HeParams session_params(const ControllerSpec& spec) {
    if (spec.he_params) return *spec.he_params;
    if (spec.keys) return spec.keys->params;
    return select_session_params(spec.fir, 256, spec.key_seed).params;
}

/// Parameters for an encrypted refresh session: t equals the integer modulus q, certified for
/// the controller's sum-of-products with full-range state operands.
inline he::HeParams refresh_params(const ControllerSpec& spec) {
    if (spec.he_params) return *spec.he_params;
    if (spec.keys) return spec.keys->params;
    require(spec.profile.q < (BigInt(1) << 40), ErrorCode::infeasible, "refresh sessions support q below 2^40");
    const auto q = static_cast<std::uint64_t>(spec.profile.q);
    const IntegerController ictrl(spec.model, spec.profile);
    he::Workload w;
    w.fan_in = static_cast<std::size_t>(spec.model.states() + spec.model.inputs());
    BigInt tap = 1;
    for (const auto* m : {&ictrl.a_bar(), &ictrl.b_bar(), &ictrl.c_bar(), &ictrl.d_bar()})
        for (i128 v : m->data) tap = std::max(tap, to_big(abs128(v)));
    w.tap_bound = static_cast<std::int64_t>(tap);
    w.ciphertext_taps = false;
    const he::Certification cert = he::certify(he::params_for(256, q), w, spec.key_seed);
    require(cert.ok(), ErrorCode::infeasible,
            "t = q = " + std::to_string(q) + " leaves only " + std::to_string(cert.margin_bits()) + " bits of noise margin");
    return cert.params;
}

inline std::unique_ptr<StepController> make_controller(const ControllerSpec& spec, const TransportSpec& tspec, std::uint64_t seed) {
    switch (spec.kind) {
    case ControllerKind::zero:
    case ControllerKind::iir: return std::make_unique<LinearController>(spec.model, to_string(spec.kind));
    case ControllerKind::quantized_iir: return std::make_unique<QuantizedIirController>(spec.model, spec.profile);
    case ControllerKind::reset: return std::make_unique<ResetStepController>(ResetController(spec.model, spec.period, spec.x_reset));
    case ControllerKind::fir: return std::make_unique<PlainFirController>(spec.fir.filter);
    case ControllerKind::encrypted_fir: {
        const std::string name = std::string("encrypted-fir(") + to_string(spec.fir.mode) + ", " + spec.backend + ")";
        if (spec.backend == "mock") {
            const he::MockBackend mock(session_params(spec));
            FirClient<he::MockBackend, he::MockBackend> client(mock, mock, spec.fir, mock.params());
            return detail::launch<decltype(client), he::MockCiphertext>(name, std::move(client), std::optional(mock), tspec);
        }
        require(spec.backend == "bfv", ErrorCode::schema_error, "backend must be \"bfv\" or \"mock\"");
        const he::HeParams params = session_params(spec);
        const auto keys = detail::plant_keys(spec, params, tspec.local_cloud);
        auto ctx = std::make_shared<const he::BfvContext>(params);
        he::BfvEncryptor enc(ctx, keys.km.secret, detail::encryptor_seed(seed));
        he::BfvDecryptor dec(ctx, keys.km.secret);
        std::optional<he::BfvEvaluator> ev;
        if (keys.has_relin) ev.emplace(ctx, keys.km.relin);
        FirClient<he::BfvEncryptor, he::BfvDecryptor> client(std::move(enc), std::move(dec), spec.fir, params);
        return detail::launch<decltype(client), he::Ciphertext>(name, std::move(client), std::move(ev), tspec);
    }
    case ControllerKind::refresh: {
        const std::string name = "refresh(T=" + std::to_string(spec.period) + ", " + spec.backend + ")";
        const IntegerController ictrl(spec.model, spec.profile);
        const OverflowHorizon h = overflow_horizon(ictrl, spec.y_max, spec.period + 1);
        require(h.unbounded || h.steps >= spec.period, ErrorCode::overflow,
                "overflow horizon " + std::to_string(h.steps) + " is shorter than the refresh period " + std::to_string(spec.period));
        if (spec.backend == "mock") {
            he::HeParams p = spec.he_params ? *spec.he_params : he::params_for(256, static_cast<std::uint64_t>(spec.profile.q));
            const he::MockBackend mock(p);
            RefreshClient<he::MockBackend, he::MockBackend> client(mock, mock, spec.model, spec.profile, spec.period, p);
            return detail::launch<decltype(client), he::MockCiphertext>(name, std::move(client), std::optional(mock), tspec, spec.model.x0);
        }
        require(spec.backend == "bfv", ErrorCode::schema_error, "backend must be \"bfv\" or \"mock\"");
        const he::HeParams params = refresh_params(spec);
        require(BigInt(params.t) == spec.profile.q, ErrorCode::invalid_argument, "refresh sessions need t equal to the integer modulus q");
        const auto keys = detail::plant_keys(spec, params, tspec.local_cloud);
        auto ctx = std::make_shared<const he::BfvContext>(params);
        he::BfvEncryptor enc(ctx, keys.km.secret, detail::encryptor_seed(seed));
        he::BfvDecryptor dec(ctx, keys.km.secret);
        std::optional<he::BfvEvaluator> ev;
        if (keys.has_relin) ev.emplace(ctx, keys.km.relin);
        RefreshClient<he::BfvEncryptor, he::BfvDecryptor> client(std::move(enc), std::move(dec), spec.model, spec.profile, spec.period, params);
        return detail::launch<decltype(client), he::Ciphertext>(name, std::move(client), std::move(ev), tspec, spec.model.x0);
    }
    }
    fail(ErrorCode::invalid_argument, "unknown controller kind");
}

inline SimTrace run_scenario(const Scenario& sc) {
    ControllerSpec spec = sc.controller;
    if (spec.kind == ControllerKind::zero) spec.model = StateSpace::zero(1, sc.plant.outputs(), sc.plant.inputs());
    const Index l = spec.kind == ControllerKind::fir || spec.kind == ControllerKind::encrypted_fir ? spec.fir.filter.inputs() : spec.model.inputs();
    const Index m = spec.kind == ControllerKind::fir || spec.kind == ControllerKind::encrypted_fir ? spec.fir.filter.outputs() : spec.model.outputs();
    require(l == sc.plant.outputs() && m == sc.plant.inputs(), ErrorCode::dimension_mismatch, "controller I/O does not match the plant");
    auto ctrl = make_controller(spec, sc.transport, sc.seed);
    return run_loop(sc.plant, *ctrl, sc.x0 ? *sc.x0 : sc.plant.x0, sc.steps);
}

struct FirTraceCheck {
    std::size_t steps = 0;
    std::size_t inexact = 0;          ///< steps whose v(k) differs from the integer convolution
    std::size_t outside_bound = 0;    ///< steps with |u - u_f| above fir_recovery_bound
    double max_deviation = 0.0;       ///< largest |u - u_f| seen
};

/// Replays the trace's y through the integer convolution and the plaintext filter. The
/// session's v(k) is read back from u(k) s6 s7, which is exact below 2^50.
inline FirTraceCheck check_fir_trace(const SimTrace& tr, const FirSessionConfig& cfg) {
    const IntegerFir f = quantize_taps(cfg.filter, cfg.s6);
    InputHistory hist(f.order(), f.inputs());
    std::deque<std::vector<std::int64_t>> yq;
    FirTraceCheck out;
    for (const auto& r : tr.rows) {
        hist.push(r.y);
        yq.push_front(quantize_input(r.y, cfg.s7, std::uint64_t{1} << 62));
        if (yq.size() > f.taps.size()) yq.pop_back();
        const auto v = integer_convolution(f, std::vector<std::vector<std::int64_t>>(yq.begin(), yq.end()));
        const Vector uf = evaluate_fir(cfg.filter, hist);
        const Vector bound = fir_recovery_bound(f, hist, cfg.s7);
        bool exact = true;
        bool inside = true;
        for (Index i = 0; i < r.u.size(); ++i) {
            const double back = std::round(r.u(i) * cfg.s6 * cfg.s7);
            if (BigInt(static_cast<std::int64_t>(back)) != v[static_cast<std::size_t>(i)]) exact = false;
            const double dev = std::fabs(r.u(i) - uf(i));
            out.max_deviation = std::max(out.max_deviation, dev);
            if (dev > bound(i)) inside = false;
        }
        ++out.steps;
        if (!exact) ++out.inexact;
        if (!inside) ++out.outside_bound;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

struct LatencyStats {
    std::size_t samples = 0;
    double min_ms = 0.0;
    double median_ms = 0.0;
    double p99_ms = 0.0;
    double mean_ms = 0.0;
};

inline LatencyStats latency_stats(std::vector<double> ms) {
    LatencyStats s;
    s.samples = ms.size();
    if (ms.empty()) return s;
    std::sort(ms.begin(), ms.end());
    auto pct = [&](double p) {
        const double pos = p * static_cast<double>(ms.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, ms.size() - 1);
        return ms[lo] + (pos - static_cast<double>(lo)) * (ms[hi] - ms[lo]);
    };
    s.min_ms = ms.front();
    s.median_ms = pct(0.5);
    s.p99_ms = pct(0.99);
    double sum = 0.0;
    for (double v : ms) sum += v;
    s.mean_ms = sum / static_cast<double>(ms.size());
    return s;
}

/// Times `step()` after `warmup` untimed calls.
template <class F>
LatencyStats bench_step_latency(F&& step, std::size_t steps, std::size_t warmup = 3) {
    for (std::size_t i = 0; i < warmup; ++i) step();
    std::vector<double> ms;
    for (std::size_t i = 0; i < steps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        step();
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return latency_stats(std::move(ms));
}

/// Per-step cloud evaluation (encrypted_step) on random inputs within y_max.
template <class Backend>
LatencyStats bench_encrypted_fir(const Backend& ev, const std::function<typename Backend::Ct(std::int64_t)>& encrypt,
                                 const std::function<typename Backend::Ct(const he::Plaintext&)>& encrypt_plain, const FirSessionConfig& cfg,
                                 std::size_t steps, std::uint64_t seed) {
    using Ct = typename Backend::Ct;
    const IntegerFir f = quantize_taps(cfg.filter, cfg.s6);
    struct PlainEnc {
        const std::function<Ct(const he::Plaintext&)>* fn;
        Ct encrypt(const he::Plaintext& p) const { return (*fn)(p); }
    } penc{&encrypt_plain};
    const auto taps = encode_taps<Ct>(f, cfg.mode, ev.params(), &penc);
    EncryptedHistory<Ct> hist(f.order(), f.inputs(), ev.zero());
    std::mt19937_64 rng(seed);
    const auto bound = static_cast<std::int64_t>(abs128(quantize(cfg.y_max, cfg.s7)));
    std::uniform_int_distribution<std::int64_t> dist(-bound, bound);
    auto next_input = [&] {
        std::vector<Ct> y;
        for (Index c = 0; c < f.inputs(); ++c) y.push_back(encrypt(dist(rng)));
        return y;
    };
    // inputs are encrypted outside the timed region; the cloud does not see the sensor's work
    std::vector<std::vector<Ct>> inputs;
    for (std::size_t i = 0; i < steps + 3; ++i) inputs.push_back(next_input());
    std::size_t next = 0;
    return bench_step_latency([&] { (void)encrypted_step(ev, taps, hist, inputs[next++]); }, steps, 3);
}

inline LatencyStats bench_encrypted_fir_bfv(const he::HeParams& params, const FirSessionConfig& cfg, std::size_t steps, std::uint64_t seed) {
    he::BfvScheme scheme(params, seed);
    return bench_encrypted_fir<he::BfvEvaluator>(
        scheme.evaluator(), [&](std::int64_t v) { return scheme.encrypt_value(v); },
        [&](const he::Plaintext& p) { return scheme.encrypt(p); }, cfg, steps, seed);
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// k, x_1..x_n, y_1..y_l, u_1..u_m, norm_x, latency_ms, flags
inline void write_trace_csv(std::ostream& os, const SimTrace& tr) {
    if (tr.rows.empty()) return;
    const auto& first = tr.rows.front();
    os << "k";
    for (Index i = 0; i < first.x.size(); ++i) os << ",x_" << i + 1;
    for (Index i = 0; i < first.y.size(); ++i) os << ",y_" << i + 1;
    for (Index i = 0; i < first.u.size(); ++i) os << ",u_" << i + 1;
    os << ",norm_x,latency_ms,flags\n";
    const auto old = os.precision(17);
    for (const auto& r : tr.rows) {
        os << r.k;
        for (Index i = 0; i < r.x.size(); ++i) os << ',' << r.x(i);
        for (Index i = 0; i < r.y.size(); ++i) os << ',' << r.y(i);
        for (Index i = 0; i < r.u.size(); ++i) os << ',' << r.u(i);
        os << ',' << r.norm_x << ',' << r.latency_ms << ',' << r.flags << '\n';
    }
    os.precision(old);
}

/// Two-column "k norm_x" data for gnuplot.
inline void write_norm_data(std::ostream& os, const SimTrace& tr) {
    os << "# " << tr.controller << "\n# k norm_x\n";
    const auto old = os.precision(12);
    for (const auto& r : tr.rows) os << r.k << ' ' << r.norm_x << '\n';
    os.precision(old);
}

} // namespace efc::loop
