#pragma once

// Reference strategies for running dynamic controllers under encryption: periodic state reset
// and external state refresh through the plant side.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "efc/error.hpp"
#include "efc/fir.hpp"
#include "efc/he/wire.hpp"
#include "efc/io/json.hpp"
#include "efc/loop/transport.hpp"
#include "efc/loop/wire.hpp"
#include "efc/lti.hpp"
#include "efc/quantizer.hpp"

namespace efc {

// ---------------------------------------------------------------------------
// Periodic reset
// ---------------------------------------------------------------------------

class ResetController {
public:
    ResetController(StateSpace sys, std::uint64_t period, std::optional<Vector> x_reset = std::nullopt)
        : sys_(std::move(sys)), period_(period) {
        require(period_ >= 1, ErrorCode::invalid_argument, "reset period must be at least 1");
        x_reset_ = x_reset ? *x_reset : sys_.x0;
        require(x_reset_.size() == sys_.states(), ErrorCode::dimension_mismatch, "reset state has wrong length");
        xr_ = x_reset_;
    }

    /// u_r(k) = C x_r(k) + D y(k); x_r(k+1) = x_reset if (k+1) mod T = 0, else A x_r + B y.
    Vector step(const Vector& y) {
        require(y.size() == sys_.inputs(), ErrorCode::dimension_mismatch, "input width does not match the controller");
        Vector u = sys_.c * xr_ + sys_.d * y;
        if ((k_ + 1) % period_ == 0) {
            xr_ = x_reset_;
        } else {
            xr_ = sys_.a * xr_ + sys_.b * y;
        }
        ++k_;
        return u;
    }

    [[nodiscard]] const Vector& state() const { return xr_; }
    [[nodiscard]] std::uint64_t step_index() const { return k_; }
    [[nodiscard]] std::uint64_t period() const { return period_; }
    [[nodiscard]] const StateSpace& system() const { return sys_; }
    [[nodiscard]] const Vector& reset_state() const { return x_reset_; }

private:
    StateSpace sys_;
    std::uint64_t period_;
    Vector x_reset_;
    Vector xr_;
    std::uint64_t k_ = 0;
};

inline Vector step_reset(ResetController& rc, const Vector& y) { return rc.step(y); }

/// C A^dk x_reset + sum_{j<dk} C A^j B y(k-1-j) + D y(k), dk = k mod T
inline Vector reset_explicit_output(const StateSpace& sys, const Vector& x_reset, std::uint64_t period, const SignalTrace& inputs,
                                    std::size_t k) {
    require(k < inputs.size(), ErrorCode::invalid_argument, "step index beyond input trace");
    const std::size_t dk = k % period;
    Matrix ca = sys.c;
    Vector u = sys.d * inputs[k];
    for (std::size_t j = 0; j < dk; ++j) {
        u += ca * sys.b * inputs[k - 1 - j];
        ca = ca * sys.a;
    }
    return u + ca * x_reset;
}

struct EquivalenceReport {
    std::size_t period = 0;
    std::size_t steps = 0;
    double max_dev_first_period = 0.0;  ///< k in 0..N
    double max_dev_before_reset = 0.0;  ///< every k with k mod T = N
    double max_dev_elsewhere = 0.0;     ///< remaining steps; nonzero in general
    std::size_t checked_equal_steps = 0;

    [[nodiscard]] bool holds(double tol = 1e-9) const { return max_dev_first_period <= tol && max_dev_before_reset <= tol; }
};

/// Runs the reset controller (x_reset = 0) against its window FIR of order N = T - 1 on the
/// same input sequence with zero prehistory.
inline EquivalenceReport reset_fir_equivalence_check(const StateSpace& ctrl, std::size_t period, const SignalTrace& inputs) {
    require(period >= 1, ErrorCode::invalid_argument, "reset period must be at least 1");
    require(ctrl.x0.isZero(0.0), ErrorCode::invalid_argument, "equivalence needs a zero initial controller state");
    require(inputs.width() == ctrl.inputs(), ErrorCode::dimension_mismatch, "input width does not match the controller");
    const FirFilter f = window_fir(ctrl, period - 1);
    ResetController rc(ctrl, period, Vector::Zero(ctrl.states()));
    InputHistory hist(f.order(), ctrl.inputs());
    EquivalenceReport rep;
    rep.period = period;
    rep.steps = inputs.size();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        hist.push(inputs[k]);
        const Vector ur = rc.step(inputs[k]);
        const Vector uf = evaluate_fir(f, hist);
        const double scale = std::max(1.0, std::max(ur.cwiseAbs().maxCoeff(), uf.cwiseAbs().maxCoeff()));
        const double dev = (ur - uf).cwiseAbs().maxCoeff() / scale;
        if (k < period) {
            rep.max_dev_first_period = std::max(rep.max_dev_first_period, dev);
            ++rep.checked_equal_steps;
        } else if (k % period == period - 1) {
            rep.max_dev_before_reset = std::max(rep.max_dev_before_reset, dev);
            ++rep.checked_equal_steps;
        } else {
            rep.max_dev_elsewhere = std::max(rep.max_dev_elsewhere, dev);
        }
    }
    return rep;
}

inline EquivalenceReport reset_fir_equivalence_check(const StateSpace& ctrl, std::size_t period, std::size_t steps, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<Vector> ys;
    for (std::size_t k = 0; k < steps; ++k) {
        Vector y(ctrl.inputs());
        for (Index i = 0; i < y.size(); ++i) y(i) = nd(rng);
        ys.push_back(y);
    }
    return reset_fir_equivalence_check(ctrl, period, SignalTrace(std::move(ys)));
}

// ---------------------------------------------------------------------------
// External refresh
// ---------------------------------------------------------------------------

struct RefreshOptions {
    double y_max = 1.0;                  ///< bound on |y| used for the overflow-horizon precondition
    loop::Millis timeout{2000};
    std::optional<loop::LossyTransport::Policy> downlink_loss; ///< applied to cloud -> plant messages
    std::optional<loop::LossyTransport::Policy> uplink_loss;   ///< applied to plant -> cloud messages
};

struct RefreshStep {
    Vector u;
    bool refreshed = false; ///< a refresh round trip completed after this step
};

namespace detail {

template <class Ct>
loop::WireMessage batch_message(loop::MessageType type, std::uint64_t step, const std::vector<Ct>& cts) {
    loop::CiphertextBatch b;
    b.step = step;
    for (const auto& c : cts) b.items.push_back(he::to_bytes(c));
    return {type, loop::encode_batch(b)};
}

template <class Ct>
std::vector<Ct> batch_ciphertexts(const loop::WireMessage& msg, const he::HeParams& params, std::size_t expected, std::uint64_t* step = nullptr) {
    const loop::CiphertextBatch b = loop::decode_batch(msg.payload);
    require(b.items.size() == expected, ErrorCode::protocol_error,
            std::string(loop::to_string(msg.type)) + " carries " + std::to_string(b.items.size()) + " ciphertexts, expected " +
                std::to_string(expected));
    std::vector<Ct> out;
    for (const auto& item : b.items) out.push_back(he::from_bytes<Ct>(item, params));
    if (step) *step = b.step;
    return out;
}

inline he::Plaintext scalar_plain(const he::HeParams& p, i128 v) {
    require(2 * abs128(v) < static_cast<i128>(p.t), ErrorCode::overflow, "controller coefficient does not fit in Z_t");
    return he::Plaintext::constant(p.ring_dim, static_cast<std::int64_t>(v));
}

} // namespace detail

/// Cloud side of the refresh protocol: evaluates the integer controller on encrypted data with
/// plaintext matrices. Holds no decryption capability.
template <class Eval>
class RefreshCloud {
public:
    using Ct = typename Eval::Ct;

    RefreshCloud(Eval ev, const IntMatrix<i128>& a, const IntMatrix<i128>& b, const IntMatrix<i128>& c, const IntMatrix<i128>& d,
                 std::uint64_t period)
        : ev_(std::move(ev)), period_(period) {
        require(period_ >= 1, ErrorCode::invalid_argument, "refresh period must be at least 1");
        require(a.rows == a.cols && b.rows == a.rows && c.cols == a.rows && d.rows == c.rows && d.cols == b.cols,
                ErrorCode::dimension_mismatch, "integer controller matrices have inconsistent shapes");
        const he::HeParams& p = ev_.params();
        auto convert = [&](const IntMatrix<i128>& m) {
            std::vector<std::vector<he::Plaintext>> out(static_cast<std::size_t>(m.rows));
            for (Index i = 0; i < m.rows; ++i)
                for (Index j = 0; j < m.cols; ++j) out[static_cast<std::size_t>(i)].push_back(detail::scalar_plain(p, m(i, j)));
            return out;
        };
        a_ = convert(a);
        b_ = convert(b);
        c_ = convert(c);
        d_ = convert(d);
        n_ = static_cast<std::size_t>(a.rows);
        l_ = static_cast<std::size_t>(b.cols);
        m_ = static_cast<std::size_t>(c.rows);
    }

    /// PARAMS json: {"kind": "refresh", "period": T, "A".."D": integer matrices}
    static RefreshCloud from_params(Eval ev, const io::Json& j) {
        require(j.value("kind", "") == "refresh", ErrorCode::protocol_error, "PARAMS does not describe a refresh session");
        for (const char* k : {"period", "A", "B", "C", "D"}) io::detail::expect_field(j, k, "refresh PARAMS");
        return RefreshCloud(std::move(ev), io::int_matrix_from_json(j["A"], "A"), io::int_matrix_from_json(j["B"], "B"),
                            io::int_matrix_from_json(j["C"], "C"), io::int_matrix_from_json(j["D"], "D"),
                            io::detail::unsigned_int(j["period"], "period"));
    }

    [[nodiscard]] std::size_t states() const { return n_; }

    /// Runs from the encrypted initial state until BYE. Protocol errors and missed refreshes end
    /// the loop with an exception.
    void run(loop::Transport& link, std::vector<Ct> z0, loop::Millis idle_timeout) {
        const he::HeParams& p = ev_.params();
        require(z0.size() == n_, ErrorCode::protocol_error, "initial state has the wrong number of ciphertexts");
        z_ = std::move(z0);
        k_ = 0;
        bool awaiting_refresh = false;
        for (;;) {
            auto msg = link.receive(idle_timeout);
            require(msg.has_value(), ErrorCode::transport_failure, "refresh cloud: no message within the idle timeout");
            if (msg->type == loop::MessageType::bye) return;
            if (msg->type == loop::MessageType::state_refresh_up) {
                require(awaiting_refresh, ErrorCode::protocol_error, "unexpected STATE_REFRESH_UP");
                z_ = detail::batch_ciphertexts<Ct>(*msg, p, n_);
                k_ = 0;
                awaiting_refresh = false;
                continue;
            }
            require(msg->type == loop::MessageType::sensor_data, ErrorCode::protocol_error,
                    std::string("refresh cloud: unexpected ") + loop::to_string(msg->type));
            std::uint64_t step = 0;
            const auto y = detail::batch_ciphertexts<Ct>(*msg, p, l_, &step);
            require(!awaiting_refresh, ErrorCode::transport_failure,
                    "missed refresh: SENSOR_DATA for step " + std::to_string(step) + " arrived before STATE_REFRESH_UP");
            const auto v = affine(c_, d_, y);
            z_ = affine(a_, b_, y);
            link.send(detail::batch_message(loop::MessageType::control_action, step, v));
            ++k_;
            if (k_ == period_) {
                link.send(detail::batch_message(loop::MessageType::state_refresh_down, step, z_));
                awaiting_refresh = true;
            }
        }
    }

private:
    std::vector<Ct> affine(const std::vector<std::vector<he::Plaintext>>& m1, const std::vector<std::vector<he::Plaintext>>& m2,
                           const std::vector<Ct>& y) const {
        std::vector<Ct> out;
        for (std::size_t i = 0; i < m1.size(); ++i) {
            Ct acc = ev_.zero();
            for (std::size_t j = 0; j < n_; ++j) acc = ev_.add(acc, ev_.mul_plain(z_[j], m1[i][j]));
            for (std::size_t j = 0; j < l_; ++j) acc = ev_.add(acc, ev_.mul_plain(y[j], m2[i][j]));
            out.push_back(std::move(acc));
        }
        return out;
    }

    Eval ev_;
    std::uint64_t period_;
    std::vector<std::vector<he::Plaintext>> a_, b_, c_, d_;
    std::size_t n_ = 0, l_ = 0, m_ = 0;
    std::vector<Ct> z_;
    std::uint64_t k_ = 0;
};

/// Cloud entry point for a refresh session: HELLO, PARAMS (matrices plus encrypted initial
/// state), then the stepping loop.
template <class Eval>
void serve_refresh(loop::Transport& link, Eval ev, loop::Millis idle_timeout) {
    loop::expect(link, loop::MessageType::hello, idle_timeout, "refresh cloud");
    const auto msg = loop::expect(link, loop::MessageType::params, idle_timeout, "refresh cloud");
    const auto payload = loop::decode_params(msg.payload);
    io::Json j;
    try {
        j = io::Json::parse(payload.json);
    } catch (const io::Json::exception& e) {
        fail(ErrorCode::protocol_error, std::string("PARAMS json: ") + e.what());
    }
    const he::HeParams params = ev.params();
    io::check_params_match(j, params);
    auto cloud = RefreshCloud<Eval>::from_params(std::move(ev), j);
    std::vector<typename Eval::Ct> z0;
    for (const auto& b : payload.blobs) z0.push_back(he::from_bytes<typename Eval::Ct>(b, params));
    cloud.run(link, std::move(z0), idle_timeout);
}

/// Plant side: the sensor encrypts prescaled outputs (and refreshed states); the actuator
/// decrypts control actions and refresh payloads and rescales them in plaintext.
template <class Enc, class Dec>
class RefreshClient {
public:
    RefreshClient(Enc enc, Dec dec, const StateSpace& ctrl, const ScalingProfile& profile, std::uint64_t period, he::HeParams params)
        : enc_(std::move(enc)), dec_(std::move(dec)), local_(ctrl, profile), period_(period), params_(std::move(params)) {}

    template <class Ct>
    void handshake(loop::Transport& link, const Vector& x0) {
        link.send({loop::MessageType::hello, Bytes{'p', 'l', 'a', 'n', 't'}});
        loop::ParamsPayload p;
        p.json = io::Json{{"kind", "refresh"},
                          {"he_params", io::to_json(params_)},
                          {"period", period_},
                          {"A", io::to_json(local_.a_bar())},
                          {"B", io::to_json(local_.b_bar())},
                          {"C", io::to_json(local_.c_bar())},
                          {"D", io::to_json(local_.d_bar())}}
                     .dump();
        for (const auto& c : encrypt_state<Ct>(x0)) p.blobs.push_back(he::to_bytes(c));
        link.send({loop::MessageType::params, loop::encode_params(p)});
    }

    template <class Ct>
    RefreshStep step(loop::Transport& link, const Vector& y, loop::Millis timeout) {
        const ScalingProfile& prof = local_.profile();
        if (pending_) {
            link.send(detail::batch_message(loop::MessageType::state_refresh_up, global_, encrypt_state<Ct>(*pending_)));
            pending_.reset();
        }
        std::vector<Ct> ys;
        for (Index i = 0; i < y.size(); ++i) {
            auto [v, ovf] = local_.prescale_input(y(i), k_);
            require(!ovf, ErrorCode::overflow, "prescaled sensor value leaves Z_q at step " + std::to_string(global_));
            ys.push_back(enc_.encrypt_value(static_cast<std::int64_t>(v)));
        }
        link.send(detail::batch_message(loop::MessageType::sensor_data, global_, ys));
        const auto action = loop::expect(link, loop::MessageType::control_action, timeout, "actuator");
        const auto v = detail::batch_ciphertexts<Ct>(action, params_, static_cast<std::size_t>(local_.c_bar().rows));
        RefreshStep out;
        out.u = recover(decrypt_all(v), k_, prof, RecoveryKind::input);
        ++k_;
        ++global_;
        if (k_ == period_) {
            auto msg = link.receive(timeout);
            require(msg.has_value(), ErrorCode::transport_failure,
                    "missed refresh: no STATE_REFRESH_DOWN after step " + std::to_string(global_ - 1) + "; session halted");
            require(msg->type == loop::MessageType::state_refresh_down, ErrorCode::protocol_error,
                    std::string("expected STATE_REFRESH_DOWN, got ") + loop::to_string(msg->type));
            const auto z = detail::batch_ciphertexts<Ct>(*msg, params_, static_cast<std::size_t>(local_.a_bar().rows));
            pending_ = recover(decrypt_all(z), k_, prof, RecoveryKind::state);
            k_ = 0;
            out.refreshed = true;
        }
        return out;
    }

    [[nodiscard]] const std::optional<Vector>& pending_state() const { return pending_; }
    [[nodiscard]] std::uint64_t local_step() const { return k_; }

private:
    template <class Ct>
    std::vector<Ct> encrypt_state(const Vector& x) {
        std::vector<Ct> out;
        for (Index i = 0; i < x.size(); ++i) {
            const i128 z = quantize(x(i), local_.profile()[0]);
            require(local_.in_range(z), ErrorCode::overflow, "scaled state leaves Z_q");
            out.push_back(enc_.encrypt_value(static_cast<std::int64_t>(z)));
        }
        return out;
    }

    template <class Ct>
    std::vector<i128> decrypt_all(const std::vector<Ct>& cts) const {
        std::vector<i128> out;
        for (const auto& c : cts) out.push_back(dec_.decrypt_value(c));
        return out;
    }

    Enc enc_;
    Dec dec_;
    IntegerController local_; // stepping unused; prescaling, range checks and the PARAMS matrices
    std::uint64_t period_;
    he::HeParams params_;
    std::optional<Vector> pending_;
    std::uint64_t k_ = 0;
    std::uint64_t global_ = 0;
};

/// In-process refresh session: the cloud runs on its own thread behind a framed channel.
template <class Eval, class Enc, class Dec>
class RefreshSession {
public:
    using Ct = typename Eval::Ct;

    RefreshSession(const StateSpace& ctrl, const ScalingProfile& profile, std::uint64_t period, Eval ev, Enc enc, Dec dec,
                   RefreshOptions opts = {})
        : opts_(std::move(opts)), client_(std::move(enc), std::move(dec), ctrl, profile, period, ev.params()) {
        require(period >= 1, ErrorCode::invalid_argument, "refresh period must be at least 1");
        require(profile.q <= BigInt(ev.params().t), ErrorCode::invalid_argument, "integer modulus must not exceed the plaintext modulus");
        const IntegerController ictrl(ctrl, profile);
        const OverflowHorizon h = overflow_horizon(ictrl, opts_.y_max, period + 1);
        require(h.unbounded || h.steps >= period, ErrorCode::overflow,
                "overflow horizon " + std::to_string(h.steps) + " is shorter than the refresh period " + std::to_string(period));

        auto [plant_end, cloud_end] = loop::inproc_pair();
        std::unique_ptr<loop::Transport> up = std::move(plant_end);
        std::unique_ptr<loop::Transport> down = std::move(cloud_end);
        if (opts_.uplink_loss) up = std::make_unique<loop::LossyTransport>(std::move(up), *opts_.uplink_loss);
        if (opts_.downlink_loss) down = std::make_unique<loop::LossyTransport>(std::move(down), *opts_.downlink_loss);
        auto up_count = std::make_unique<loop::CountingTransport>(std::move(up));
        auto down_count = std::make_unique<loop::CountingTransport>(std::move(down));
        plant_counter_ = up_count.get();
        cloud_counter_ = down_count.get();
        plant_link_ = std::move(up_count);
        cloud_link_ = std::move(down_count);

        worker_ = std::thread([this, ev = std::move(ev)]() mutable {
            try {
                serve_refresh(*cloud_link_, std::move(ev), loop::Millis(600000));
            } catch (const Error& e) {
                std::lock_guard lk(mu_);
                cloud_error_ = e;
            }
            cloud_link_->close();
        });
        client_.template handshake<Ct>(*plant_link_, ctrl.x0);
    }

    ~RefreshSession() {
        if (!halted_) {
            try {
                plant_link_->send({loop::MessageType::bye, {}});
            } catch (...) {
            }
        }
        plant_link_->close();
        if (worker_.joinable()) worker_.join();
    }
    RefreshSession(const RefreshSession&) = delete;
    RefreshSession& operator=(const RefreshSession&) = delete;

    RefreshStep step(const Vector& y) {
        require(!halted_, ErrorCode::transport_failure, "refresh session has halted");
        try {
            return client_.template step<Ct>(*plant_link_, y, opts_.timeout);
        } catch (const Error& e) {
            halted_ = true;
            plant_link_->close();
            if (worker_.joinable()) worker_.join();
            std::lock_guard lk(mu_);
            if (cloud_error_) throw *cloud_error_;
            throw;
        }
    }

    /// ciphertexts sent of the given type, per direction
    [[nodiscard]] std::uint64_t sent_by_plant(loop::MessageType t) const { return plant_counter_->ciphertexts(t); }
    [[nodiscard]] std::uint64_t sent_by_cloud(loop::MessageType t) const { return cloud_counter_->ciphertexts(t); }
    [[nodiscard]] bool halted() const { return halted_; }

private:
    RefreshOptions opts_;
    RefreshClient<Enc, Dec> client_;
    std::unique_ptr<loop::Transport> plant_link_;
    std::unique_ptr<loop::Transport> cloud_link_;
    loop::CountingTransport* plant_counter_ = nullptr;
    loop::CountingTransport* cloud_counter_ = nullptr;
    std::thread worker_;
    std::mutex mu_;
    std::optional<Error> cloud_error_;
    bool halted_ = false;
};

template <class Eval, class Enc, class Dec>
std::unique_ptr<RefreshSession<Eval, Enc, Dec>> external_refresh_session(const StateSpace& ctrl, const ScalingProfile& profile,
                                                                         std::uint64_t period, Eval ev, Enc enc, Dec dec,
                                                                         RefreshOptions opts = {}) {
    return std::make_unique<RefreshSession<Eval, Enc, Dec>>(ctrl, profile, period, std::move(ev), std::move(enc), std::move(dec),
                                                             std::move(opts));
}

} // namespace efc
