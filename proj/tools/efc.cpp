// efc: design, analysis, simulation, service roles and the reactor benchmark.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "efc/benchmark_data.hpp"
#include "efc/encrypted_fir.hpp"
#include "efc/hinf_design.hpp"
#include "efc/io/json.hpp"
#include "efc/loop/scenario.hpp"
#include "efc/loop/service.hpp"

namespace fs = std::filesystem;
using namespace efc;
using io::Json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitOverflow = 3;
constexpr int kExitTransport = 4;
constexpr int kExitSchema = 5;

int exit_code(ErrorCode c) {
    switch (c) {
    case ErrorCode::infeasible:
    case ErrorCode::solver_failure: return kExitInfeasible;
    case ErrorCode::overflow:
    case ErrorCode::headroom_exceeded:
    case ErrorCode::level_exceeded:
    case ErrorCode::noise_overflow: return kExitOverflow;
    case ErrorCode::transport_failure:
    case ErrorCode::protocol_error: return kExitTransport;
    case ErrorCode::schema_error: return kExitSchema;
    default: return kExitFailure;
    }
}

StateSpace load_model(const std::string& ref) { return loop::model_ref(Json(ref), {}); }
FirFilter load_filter(const std::string& ref) { return loop::filter_ref(Json(ref), {}); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::invalid_argument, "cannot write " + path);
    out << text;
}

template <class F>
void write_with(const std::string& path, F&& f) {
    std::ostringstream os;
    f(os);
    write_text(path, os.str());
}

double largest_singular_value(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
}

std::string pass(bool ok) { return ok ? "PASS" : "FAIL"; }

// ---------------------------------------------------------------------------

struct WindowArgs {
    std::string model;
    std::size_t order = 7;
    std::string out;
};

int cmd_design_window(const WindowArgs& a) {
    const StateSpace ctrl = load_model(a.model);
    std::ostream& info = a.out.empty() ? std::cerr : std::cout;
    if (!is_schur(ctrl.a)) {
        std::cerr << "warning: controller A is not Schur stable (spectral radius " << spectral_radius(ctrl.a)
                  << "); the truncated tail does not decay\n";
    }
    const FirFilter f = window_fir(ctrl, a.order);
    Matrix can = ctrl.c;
    for (std::size_t i = 0; i < a.order; ++i) can = can * ctrl.a;
    info << "order " << f.order() << ", " << f.taps.size() << " taps (" << f.outputs() << "x" << f.inputs() << ")\n";
    info << "truncation |C A^N| = " << largest_singular_value(can) << "\n";
    const Json j = io::to_json(f);
    if (a.out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        io::write_json_file(a.out, j);
        info << "wrote " << a.out << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct HinfArgs {
    std::string model;
    std::string weight = "inverse";
    std::size_t order = 2;
    double gamma = 0.0;
    bool minimize = false;
    double cap = 0.0;
    std::string out;
};

int cmd_design_hinf(const HinfArgs& a) {
    const StateSpace iir = load_model(a.model);
    require(a.minimize != (a.gamma > 0.0), ErrorCode::invalid_argument, "give exactly one of --gamma and --minimize");
    StateSpace weight;
    if (a.weight == "inverse") {
        const InverseWeight w = causal_inverse_weight(iir);
        if (w.regularized) std::cerr << "warning: D is singular or non-square; the inverse weight uses a ridge pseudo-inverse\n";
        weight = w.system;
    } else if (a.weight == "identity") {
        weight = StateSpace::gain(Matrix::Identity(iir.inputs(), iir.inputs()));
    } else {
        weight = load_model(a.weight);
    }
    HinfDesign d;
    int solves = 1;
    if (a.minimize) {
        GammaSearch s = minimize_gamma(iir, weight, a.order, a.cap > 0.0 ? std::optional<double>(a.cap) : std::nullopt);
        d = std::move(s.design);
        d.gamma = s.gamma;
        solves = s.feasibility_solves;
    } else {
        d = hinf_fir_design(iir, weight, a.order, a.gamma);
    }
    const Eigen::SelfAdjointEigenSolver<Matrix> es(d.certificate);
    std::cout << std::setprecision(6);
    std::cout << "order " << a.order << ", weight " << a.weight << "\n";
    std::cout << "gamma " << d.gamma << (a.minimize ? " (minimized, " + std::to_string(solves) + " feasibility solves)" : "") << "\n";
    std::cout << "audit |e|_inf " << d.audit << " (" << (d.audit < 1.01 * d.gamma ? "below" : "ABOVE") << " 1.01 gamma)\n";
    std::cout << "certificate P " << d.certificate.rows() << "x" << d.certificate.cols() << ", eigenvalues in [" << es.eigenvalues().minCoeff()
              << ", " << es.eigenvalues().maxCoeff() << "], LMI max eigenvalue " << d.lmi_max_eig << "\n";
    const Json j = io::to_json(d.filter);
    if (a.out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        io::write_json_file(a.out, j);
        std::cout << "wrote " << a.out << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    std::string model;
    std::string filter;
    std::vector<std::uint64_t> dims;
    std::optional<std::size_t> order;
    std::string profile;
    double scale = 0.0;
    std::string q = "4294967296";
    double y_max = 1.0;
};

int cmd_analyze(const AnalyzeArgs& a) {
    std::optional<StateSpace> model;
    std::optional<FirFilter> filter;
    if (!a.model.empty()) model = load_model(a.model);
    if (!a.filter.empty()) filter = load_filter(a.filter);
    std::uint64_t l = 0, m = 0, n = 0;
    if (model) {
        l = static_cast<std::uint64_t>(model->inputs());
        m = static_cast<std::uint64_t>(model->outputs());
        n = static_cast<std::uint64_t>(model->states());
    }
    if (filter) {
        l = static_cast<std::uint64_t>(filter->inputs());
        m = static_cast<std::uint64_t>(filter->outputs());
    }
    if (!a.dims.empty()) {
        require(a.dims.size() == 3, ErrorCode::invalid_argument, "--dims takes l,m,n");
        l = a.dims[0];
        m = a.dims[1];
        n = a.dims[2];
    }
    require(l > 0 && m > 0, ErrorCode::invalid_argument, "give --model, --filter or --dims");
    std::optional<std::size_t> order = a.order;
    if (filter) order = filter->order();

    std::cout << std::setprecision(6);
    std::cout << "dimensions l=" << l << " m=" << m << " n=" << n << "\n";
    if (n > 0) {
        const double bound = efficient_order_bound(l, m, n);
        std::cout << "efficient order bound " << bound << " (FIR needs fewer multiplications and additions for N < " << bound << ")\n";
    }
    if (order && n > 0) {
        const OpCounts c = opcounts(*order, l, m, n);
        const bool cheaper = c.fir.multiplications < c.iir.multiplications && c.fir.additions < c.iir.additions;
        std::cout << "order N=" << *order << ": FIR " << c.fir.multiplications << " mult / " << c.fir.additions << " add, IIR "
                  << c.iir.multiplications << " mult / " << c.iir.additions << " add" << (cheaper ? ", FIR cheaper" : "") << "\n";
    }
    if (order) {
        std::cout << "depth audit N=" << *order << ": partial " << depth_audit(*order, static_cast<Index>(l), static_cast<Index>(m), TapMode::partial)
                  << ", full " << depth_audit(*order, static_cast<Index>(l), static_cast<Index>(m), TapMode::full) << "\n";
    }
    if (model && (!a.profile.empty() || a.scale > 0.0)) {
        const ScalingProfile p = a.profile.empty() ? ScalingProfile::uniform(a.scale, BigInt(a.q)) : io::profile_from_json(io::read_json_file(a.profile));
        const IntegerController ictrl(*model, p);
        const OverflowHorizon h = overflow_horizon(ictrl, a.y_max);
        std::cout << "overflow horizon (s1=" << p[1] << ", q=" << p.q.str() << ", y_max=" << a.y_max << "): ";
        if (h.unbounded) {
            std::cout << "unbounded\n";
        } else if (h.capped) {
            std::cout << "beyond " << h.steps << " steps\n";
        } else {
            std::cout << h.steps << " steps\n";
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------

void print_trace_summary(const loop::SimTrace& tr) {
    std::vector<double> lat;
    for (const auto& r : tr.rows) lat.push_back(r.latency_ms);
    const auto ls = loop::latency_stats(lat);
    const auto below = tr.first_below(0.1);
    std::cout << std::setprecision(6);
    std::cout << "controller " << tr.controller << ", " << tr.size() << " steps\n";
    if (!tr.rows.empty()) std::cout << "|x(0)| " << tr.rows.front().norm_x << ", |x(end)| " << tr.final_state.norm() << "\n";
    std::cout << "first k with |x| < 0.1 |x(0)|: " << (below ? std::to_string(*below) : "none") << "\n";
    std::cout << "step latency ms: median " << ls.median_ms << ", p99 " << ls.p99_ms << ", max " << (lat.empty() ? 0.0 : *std::max_element(lat.begin(), lat.end())) << "\n";
    std::cout << "flags " << tr.flags() << "\n";
}

int trace_exit(const loop::SimTrace& tr) {
    if (tr.flags() & (loop::kFlagOverflow | loop::kFlagNoise)) {
        std::cerr << "overflow detected (flags " << tr.flags() << ")\n";
        return kExitOverflow;
    }
    return 0;
}

void write_outputs(const loop::SimTrace& tr, const std::string& csv, const std::string& norm) {
    if (!csv.empty()) write_with(csv, [&](std::ostream& os) { loop::write_trace_csv(os, tr); });
    if (!norm.empty()) write_with(norm, [&](std::ostream& os) { loop::write_norm_data(os, tr); });
}

struct SimulateArgs {
    std::string scenario;
    std::string csv;
    std::string norm;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps;
};

int cmd_simulate(const SimulateArgs& a) {
    loop::Scenario sc = loop::read_scenario(a.scenario);
    if (a.seed) sc.seed = *a.seed;
    if (a.steps) sc.steps = *a.steps;
    const loop::SimTrace tr = loop::run_scenario(sc);
    print_trace_summary(tr);
    write_outputs(tr, a.csv, a.norm);
    return trace_exit(tr);
}

// ---------------------------------------------------------------------------

struct ServeArgs {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::string eval_key;
    std::string backend = "bfv";
    std::string params;
    std::size_t sessions = 0;
    std::uint64_t idle_timeout_ms = 600000;
};

template <class Eval>
int serve_loop(const Eval& ev, const ServeArgs& a) {
    loop::SocketListener listener(a.port, a.host);
    std::cout << "listening on " << a.host << ":" << listener.port() << std::endl;
    std::vector<std::thread> workers;
    std::mutex mu;
    int worst = 0;
    for (std::size_t i = 0; a.sessions == 0 || i < a.sessions; ++i) {
        std::shared_ptr<loop::Transport> conn = listener.accept(loop::Millis(-1));
        workers.emplace_back([&, conn, i] {
            int code = 0;
            try {
                loop::serve_session(*conn, ev, loop::Millis(static_cast<loop::Millis::rep>(a.idle_timeout_ms)));
            } catch (const Error& e) {
                code = exit_code(e.code());
                std::lock_guard lk(mu);
                std::cerr << "session " << i << ": " << to_string(e.code()) << ": " << e.what() << std::endl;
            }
            conn->close();
            std::lock_guard lk(mu);
            worst = std::max(worst, code);
            if (code == 0) std::cout << "session " << i << " closed" << std::endl;
        });
    }
    for (auto& w : workers) w.join();
    return worst;
}

int cmd_serve(const ServeArgs& a) {
    if (a.backend == "mock") {
        require(!a.params.empty(), ErrorCode::invalid_argument, "the mock backend needs --params");
        return serve_loop(he::MockBackend(io::he_params_from_json(io::read_json_file(a.params))), a);
    }
    require(a.backend == "bfv", ErrorCode::invalid_argument, "backend must be bfv or mock");
    require(!a.eval_key.empty(), ErrorCode::invalid_argument, "the bfv backend needs --eval-key");
    io::EvaluationKeyFile ek = io::evaluation_key_from_json(io::read_json_file(a.eval_key));
    he::BfvEvaluator ev(std::make_shared<const he::BfvContext>(ek.params), std::move(ek.relin));
    return serve_loop(ev, a);
}

// ---------------------------------------------------------------------------

struct SensorArgs {
    std::string scenario;
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::string secret_key;
    std::string capture;
    std::string csv;
    std::string norm;
    std::optional<std::size_t> steps;
};

int cmd_sensor(const SensorArgs& a) {
    loop::Scenario sc = loop::read_scenario(a.scenario);
    require(a.port != 0, ErrorCode::invalid_argument, "--port is required");
    sc.transport.kind = loop::TransportSpec::Kind::socket;
    sc.transport.local_cloud = false;
    sc.transport.host = a.host;
    sc.transport.port = a.port;
    if (a.steps) sc.steps = *a.steps;
    if (!a.secret_key.empty()) sc.controller.keys = io::secret_key_from_json(io::read_json_file(a.secret_key));
    if (!a.capture.empty()) {
        auto out = std::make_shared<std::ofstream>(a.capture, std::ios::binary);
        require(out->good(), ErrorCode::invalid_argument, "cannot write " + a.capture);
        sc.transport.on_receive = [out](const loop::WireMessage& msg) {
            if (msg.type != loop::MessageType::control_action) return;
            const Bytes frame = loop::encode_frame(msg);
            out->write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
            out->flush();
        };
    }
    const loop::SimTrace tr = loop::run_scenario(sc);
    print_trace_summary(tr);
    write_outputs(tr, a.csv, a.norm);
    return trace_exit(tr);
}

// ---------------------------------------------------------------------------

struct ActuatorArgs {
    std::string capture;
    std::string secret_key;
    std::string backend = "bfv";
    std::string params;
    double s6 = 100.0;
    double s7 = 10.0;
    std::string out;
};

std::vector<loop::WireMessage> read_frames(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::invalid_argument, "cannot open " + path);
    const Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<loop::WireMessage> out;
    std::size_t pos = 0;
    while (pos < data.size()) {
        require(data.size() - pos >= loop::kHeaderSize, ErrorCode::protocol_error, "truncated frame header at byte " + std::to_string(pos));
        const loop::FrameHeader h = loop::decode_header(data.data() + pos);
        require(data.size() - pos - loop::kHeaderSize >= h.length, ErrorCode::protocol_error, "truncated frame at byte " + std::to_string(pos));
        const auto begin = data.begin() + static_cast<std::ptrdiff_t>(pos + loop::kHeaderSize);
        out.push_back({h.type, Bytes(begin, begin + h.length)});
        pos += loop::kHeaderSize + h.length;
    }
    return out;
}

template <class Ct, class Dec>
int decode_actions(const std::vector<loop::WireMessage>& frames, const he::HeParams& params, const Dec& dec, const ActuatorArgs& a) {
    std::ostringstream os;
    os << std::setprecision(17);
    std::size_t count = 0;
    for (const auto& f : frames) {
        if (f.type != loop::MessageType::control_action) continue;
        const loop::CiphertextBatch b = loop::decode_batch(f.payload);
        if (count == 0) {
            os << "k";
            for (std::size_t i = 0; i < b.items.size(); ++i) os << ",u_" << i + 1;
            os << "\n";
        }
        std::vector<std::int64_t> v;
        for (const auto& item : b.items) v.push_back(dec.decrypt_value(he::from_bytes<Ct>(item, params)));
        const Vector u = recover_fir(v, a.s6, a.s7);
        os << b.step;
        for (Index i = 0; i < u.size(); ++i) os << ',' << u(i);
        os << "\n";
        ++count;
    }
    if (a.out.empty()) {
        std::cout << os.str();
    } else {
        write_text(a.out, os.str());
        std::cout << "decrypted " << count << " control actions into " << a.out << "\n";
    }
    return 0;
}

int cmd_actuator(const ActuatorArgs& a) {
    const auto frames = read_frames(a.capture);
    if (a.backend == "mock") {
        require(!a.params.empty(), ErrorCode::invalid_argument, "the mock backend needs --params");
        const he::MockBackend mock(io::he_params_from_json(io::read_json_file(a.params)));
        return decode_actions<he::MockCiphertext>(frames, mock.params(), mock, a);
    }
    require(!a.secret_key.empty(), ErrorCode::invalid_argument, "--secret-key is required");
    const io::SecretKeyFile sk = io::secret_key_from_json(io::read_json_file(a.secret_key));
    const he::BfvDecryptor dec(std::make_shared<const he::BfvContext>(sk.params), sk.secret);
    return decode_actions<he::Ciphertext>(frames, sk.params, dec, a);
}

// ---------------------------------------------------------------------------

struct KeygenArgs {
    std::uint64_t seed = 1;
    std::string params;
    std::string scenario;
    std::uint64_t t = 0;
    std::uint32_t ring_dim = 256;
    std::string secret_out = "secret_key.json";
    std::string eval_out = "evaluation_key.json";
};

int cmd_keygen(const KeygenArgs& a) {
    he::HeParams params = he::default_params();
    if (!a.params.empty()) {
        params = io::he_params_from_json(io::read_json_file(a.params));
    } else if (!a.scenario.empty()) {
        const loop::Scenario sc = loop::read_scenario(a.scenario);
        if (sc.controller.kind == loop::ControllerKind::encrypted_fir) {
            params = loop::session_params(sc.controller);
        } else if (sc.controller.kind == loop::ControllerKind::refresh) {
            params = loop::refresh_params(sc.controller);
        } else {
            fail(ErrorCode::invalid_argument, "the scenario's controller is not encrypted");
        }
    } else if (a.t > 0) {
        params = he::params_for(a.ring_dim, a.t);
    }
    const he::KeyMaterial km = he::keygen(params, a.seed);
    io::write_json_file(a.secret_out, io::secret_key_json(km));
    io::write_json_file(a.eval_out, io::evaluation_key_json(km));
    std::cout << he::toy_marker() << "\n";
    std::cout << "n=" << params.ring_dim << " t=" << params.t << " q=" << params.q_c << " seed=" << a.seed << "\n";
    std::cout << "wrote " << a.secret_out << " (sensor/actuator only) and " << a.eval_out << " (cloud)\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string filter = "window_n7";
    std::string mode = "full";
    std::string backend = "bfv";
    std::uint32_t ring_dim = 256;
    std::size_t steps = 50;
    std::optional<double> s6;
    std::optional<double> s7;
    double y_max = 200.0;
    double target_ms = 100.0;
    bool sweep = false;
    std::uint64_t seed = 1;
};

FirSessionConfig bench_config(const FirFilter& f, TapMode mode, const BenchArgs& a) {
    FirSessionConfig cfg;
    cfg.filter = f;
    cfg.mode = mode;
    cfg.s6 = a.s6.value_or(mode == TapMode::full ? 4.0 : 100.0);
    cfg.s7 = a.s7.value_or(mode == TapMode::full ? 3.0 : 10.0);
    cfg.y_max = a.y_max;
    return cfg;
}

loop::LatencyStats bench_once(const FirSessionConfig& cfg, const BenchArgs& a, he::HeParams* used = nullptr) {
    const he::HeParams params = select_session_params(cfg, a.ring_dim, a.seed).params;
    if (used) *used = params;
    if (a.backend == "mock") {
        const he::MockBackend mock(params);
        return loop::bench_encrypted_fir<he::MockBackend>(
            mock, [&](std::int64_t v) { return mock.encrypt_value(v); }, [&](const he::Plaintext& p) { return mock.encrypt(p); }, cfg, a.steps,
            a.seed);
    }
    require(a.backend == "bfv", ErrorCode::invalid_argument, "backend must be bfv or mock");
    return loop::bench_encrypted_fir_bfv(params, cfg, a.steps, a.seed);
}

int cmd_bench(const BenchArgs& a) {
    const FirFilter f = load_filter(a.filter);
    const TapMode mode = tap_mode_from_string(a.mode);
    const FirSessionConfig cfg = bench_config(f, mode, a);
    he::HeParams params;
    const loop::LatencyStats s = bench_once(cfg, a, &params);
    std::cout << std::setprecision(4) << std::fixed;
    std::cout << "encrypted FIR step: " << a.backend << ", " << to_string(mode) << " mode, N=" << f.order() << ", n_r=" << params.ring_dim
              << ", t=" << params.t << ", s6=" << cfg.s6 << ", s7=" << cfg.s7 << "\n";
    std::cout << "samples " << s.samples << ": min " << s.min_ms << " ms, median " << s.median_ms << " ms, p99 " << s.p99_ms << " ms, mean "
              << s.mean_ms << " ms\n";
    std::cout << "median " << s.median_ms << " ms vs target " << a.target_ms << " ms: " << pass(s.median_ms < a.target_ms) << "\n";
    if (a.sweep) {
        const StateSpace comp = benchmark::companion_controller();
        std::vector<double> xs, ys;
        for (std::size_t n : {2, 4, 8, 16}) {
            const loop::LatencyStats sn = bench_once(bench_config(window_fir(comp, n), mode, a), a);
            xs.push_back(static_cast<double>(n));
            ys.push_back(sn.median_ms);
            std::cout << "N=" << n << " median " << sn.median_ms << " ms\n";
        }
        const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / 4.0;
        const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / 4.0;
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sxy += (xs[i] - mx) * (ys[i] - my);
            sxx += (xs[i] - mx) * (xs[i] - mx);
            syy += (ys[i] - my) * (ys[i] - my);
        }
        const double slope = sxy / sxx;
        const double r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
        std::cout << "linear fit: " << slope << " ms per tap, intercept " << my - slope * mx << " ms, R^2 " << r2 << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct ReproduceArgs {
    std::string out = "benchmark_out";
    std::size_t steps = 300;
    std::size_t encrypted_steps = 300;
    std::size_t bench_steps = 30;
    std::string backend = "bfv";
    std::uint64_t seed = 1;
};

struct SummaryLine {
    std::string id;
    std::string text;
    bool ok = true;
    bool reported_only = false;
};

int cmd_reproduce(const ReproduceArgs& a) {
    fs::create_directories(a.out);
    const fs::path dir(a.out);
    const StateSpace plant = benchmark::reactor();
    std::vector<SummaryLine> lines;
    Json summary = Json::object();
    std::cout << std::setprecision(5);

    auto save = [&](const loop::SimTrace& tr, const std::string& stem) {
        write_outputs(tr, (dir / (stem + ".csv")).string(), (dir / (stem + ".dat")).string());
    };
    auto run = [&](loop::ControllerSpec spec, std::size_t steps) {
        loop::Scenario sc;
        sc.plant = plant;
        sc.controller = std::move(spec);
        sc.steps = steps;
        sc.seed = a.seed;
        return loop::run_scenario(sc);
    };

    // open loop
    {
        const loop::ClosedLoop cl = loop::closed_loop_matrix(plant, StateSpace::zero(1, 2, 1));
        loop::ControllerSpec spec;
        spec.kind = loop::ControllerKind::zero;
        const auto tr = run(spec, 60);
        save(tr, "zero_controller");
        std::cout << "zero controller: closed-loop radius " << cl.spectral_radius << ", |x(60)| " << tr.final_state.norm() << "\n";
        summary["zero_controller"] = {{"spectral_radius", cl.spectral_radius}, {"final_norm", tr.final_state.norm()}};
    }

    bool all_stable = true;
    std::vector<std::string> gnuplot_files;
    for (const auto& nf : benchmark::published_filters()) {
        const loop::ClosedLoop cl = loop::closed_loop_matrix(plant, nf.filter);
        loop::ControllerSpec plain;
        plain.kind = loop::ControllerKind::fir;
        plain.fir.filter = nf.filter;
        const auto tr = run(plain, a.steps);
        save(tr, nf.name + "_plaintext");
        gnuplot_files.push_back(nf.name + "_plaintext.dat");
        const auto below = tr.first_below(0.1);
        const bool ok = cl.stable && below.has_value();
        all_stable = all_stable && ok;
        std::cout << nf.name << ": closed-loop radius " << cl.spectral_radius << ", |x| < 0.1 |x(0)| at k = " << (below ? std::to_string(*below) : "never")
                  << ", |x(" << a.steps << ")| " << tr.final_state.norm() << "\n";
        Json entry{{"order", nf.filter.order()},
                   {"spectral_radius", cl.spectral_radius},
                   {"first_below_10pct", below ? Json(*below) : Json(nullptr)},
                   {"final_norm", tr.final_state.norm()}};

        for (TapMode mode : {TapMode::partial, TapMode::full}) {
            loop::ControllerSpec enc;
            enc.kind = loop::ControllerKind::encrypted_fir;
            enc.backend = a.backend;
            enc.fir.filter = nf.filter;
            enc.fir.mode = mode;
            enc.fir.s6 = mode == TapMode::full ? 4.0 : 100.0;
            enc.fir.s7 = mode == TapMode::full ? 3.0 : 10.0;
            enc.key_seed = a.seed;
            const he::HeParams params = loop::session_params(enc);
            enc.he_params = params;
            const auto et = run(enc, a.encrypted_steps);
            const std::string stem = nf.name + "_encrypted_" + to_string(mode);
            save(et, stem);
            gnuplot_files.push_back(stem + ".dat");
            const loop::FirTraceCheck chk = loop::check_fir_trace(et, enc.fir);
            std::vector<double> lat;
            for (const auto& r : et.rows) lat.push_back(r.latency_ms);
            const auto ls = loop::latency_stats(lat);
            const auto ebelow = et.first_below(0.1);
            std::cout << "  encrypted " << to_string(mode) << " (t=" << params.t << ", s6=" << enc.fir.s6 << ", s7=" << enc.fir.s7
                      << "): |x(" << a.encrypted_steps << ")| " << et.final_state.norm() << ", first below 10% at "
                      << (ebelow ? std::to_string(*ebelow) : "never") << ", inexact steps " << chk.inexact << ", outside bound "
                      << chk.outside_bound << ", flags " << et.flags() << ", median step " << ls.median_ms << " ms\n";
            entry[std::string("encrypted_") + to_string(mode)] = {{"t", std::to_string(params.t)},
                                                                  {"s6", enc.fir.s6},
                                                                  {"s7", enc.fir.s7},
                                                                  {"final_norm", et.final_state.norm()},
                                                                  {"first_below_10pct", ebelow ? Json(*ebelow) : Json(nullptr)},
                                                                  {"inexact_steps", chk.inexact},
                                                                  {"outside_bound", chk.outside_bound},
                                                                  {"max_deviation", chk.max_deviation},
                                                                  {"flags", et.flags()},
                                                                  {"median_step_ms", ls.median_ms},
                                                                  {"p99_step_ms", ls.p99_ms}};
            const bool exact = chk.inexact == 0 && chk.outside_bound == 0 && (et.flags() & (loop::kFlagOverflow | loop::kFlagNoise)) == 0;
            lines.push_back({"enc", nf.name + " encrypted " + to_string(mode) + ": decrypted v(k) equals the integer convolution, u within the quantization bound",
                             exact});
        }
        summary[nf.name] = entry;
    }
    lines.insert(lines.begin(), SummaryLine{"1", "all three tap sets stabilize the reactor (radius < 1, |x| below 10% of |x(0)| within " + std::to_string(a.steps) + " steps)", all_stable});

    bool bound_ok = efficient_order_bound(2, 1, 4) == 14.0;
    for (std::uint64_t l = 1; l <= 6; ++l)
        for (std::uint64_t m = 1; m <= 6; ++m)
            for (std::uint64_t n = 1; n <= 6; ++n) {
                const double b = efficient_order_bound(l, m, n);
                for (std::uint64_t N = 0; static_cast<double>(N) < b; ++N) {
                    const OpCounts c = opcounts(N, l, m, n);
                    bound_ok = bound_ok && c.fir.multiplications < c.iir.multiplications && c.fir.additions < c.iir.additions;
                }
            }
    lines.push_back({"2", "efficient_order_bound(2,1,4) = 14 and N < bound implies fewer FIR operations (l,m,n <= 6)", bound_ok});

    bool depth_ok = true;
    for (std::size_t n : {0, 2, 7, 16})
        for (TapMode mode : {TapMode::partial, TapMode::full}) depth_ok = depth_ok && depth_audit(n, 2, 1, mode) == 1;
    depth_ok = depth_ok && circuit_depths() == std::array<int, 3>{1, 1, 2};
    lines.push_back({"3", "encrypted FIR depth 1 for N in {0,2,7,16}, both modes; example circuits (1,1,2)", depth_ok});

    FirSessionConfig bc;
    bc.filter = benchmark::window_n7();
    bc.mode = TapMode::full;
    bc.s6 = 4.0;
    bc.s7 = 3.0;
    const he::HeParams bp = select_session_params(bc, 256, a.seed).params;
    const loop::LatencyStats ls = loop::bench_encrypted_fir_bfv(bp, bc, a.bench_steps, a.seed);
    std::ostringstream lt;
    lt << std::fixed << std::setprecision(2) << "full-mode N=7, n_r=256 step latency median " << ls.median_ms << " ms (p99 " << ls.p99_ms
       << " ms) vs 100 ms";
    lines.push_back({"5", lt.str(), ls.median_ms < 100.0, true});
    summary["latency"] = {{"median_ms", ls.median_ms}, {"p99_ms", ls.p99_ms}, {"min_ms", ls.min_ms}, {"samples", ls.samples}, {"t", std::to_string(bp.t)}};

    std::ostringstream gp;
    gp << "set logscale y\nset xlabel 'k'\nset ylabel '|x(k)|_2'\nplot ";
    for (std::size_t i = 0; i < gnuplot_files.size(); ++i) gp << (i ? ", \\\n     " : "") << "'" << gnuplot_files[i] << "' using 1:2 with lines title '" << gnuplot_files[i] << "'";
    gp << "\n";
    write_text((dir / "norms.gp").string(), gp.str());

    bool all_ok = true;
    Json crit = Json::array();
    std::cout << "\nsummary\n";
    for (const auto& l : lines) {
        const std::string verdict = pass(l.ok) + (l.reported_only ? " (reported)" : "");
        std::cout << verdict << "  [" << l.id << "] " << l.text << "\n";
        crit.push_back({{"id", l.id}, {"text", l.text}, {"pass", l.ok}, {"reported_only", l.reported_only}});
        if (!l.reported_only) all_ok = all_ok && l.ok;
    }
    summary["criteria"] = crit;
    io::write_json_file((dir / "summary.json").string(), summary);
    std::cout << "outputs in " << a.out << "\n";
    return all_ok ? 0 : kExitFailure;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Encrypted FIR control: design, analysis, simulation and service roles"};
    app.set_config("--config", "", "TOML/INI file with option defaults (sections per subcommand)")->envname("EFC_CONFIG");
    app.require_subcommand(1);
    int rc = 0;

    WindowArgs wa;
    auto* w = app.add_subcommand("design-window", "Truncated impulse-response taps F_0 = D, F_j = C A^(j-1) B");
    w->add_option("--model", wa.model, "model JSON or built-in name (companion)")->required();
    w->add_option("--order,-N", wa.order, "FIR order N");
    w->add_option("--out,-o", wa.out, "filter JSON output (default stdout)");
    w->callback([&] { rc = cmd_design_window(wa); });

    HinfArgs ha;
    auto* h = app.add_subcommand("design-hinf", "H-infinity optimal taps via the bounded-real LMI");
    h->add_option("--model", ha.model, "IIR model JSON or built-in name")->required();
    h->add_option("--weight", ha.weight, "inverse, identity, or a weight model JSON");
    h->add_option("--order,-N", ha.order, "FIR order N");
    h->add_option("--gamma", ha.gamma, "fixed error bound");
    h->add_flag("--minimize", ha.minimize, "bisect for the smallest feasible gamma");
    h->add_option("--cap", ha.cap, "upper gamma for --minimize");
    h->add_option("--out,-o", ha.out, "filter JSON output (default stdout)");
    h->callback([&] { rc = cmd_design_hinf(ha); });

    AnalyzeArgs aa;
    auto* an = app.add_subcommand("analyze", "Operation counts, efficiency bound, overflow horizon, depth audit");
    an->add_option("--model", aa.model, "IIR model JSON or built-in name");
    an->add_option("--filter", aa.filter, "filter JSON or built-in name");
    an->add_option("--dims", aa.dims, "l,m,n")->delimiter(',')->expected(3);
    an->add_option("--order,-N", aa.order, "FIR order when no filter is given");
    an->add_option("--profile", aa.profile, "scaling profile JSON for the overflow horizon");
    an->add_option("--scale", aa.scale, "uniform scaling factor s (alternative to --profile)");
    an->add_option("--q", aa.q, "integer modulus for --scale");
    an->add_option("--y-max", aa.y_max, "bound on |y|_inf");
    an->callback([&] { rc = cmd_analyze(aa); });

    SimulateArgs sa;
    auto* s = app.add_subcommand("simulate", "Run a scenario file");
    s->add_option("--scenario", sa.scenario, "scenario JSON")->required();
    s->add_option("--csv", sa.csv, "trace CSV output");
    s->add_option("--norm", sa.norm, "gnuplot norm data output");
    s->add_option("--seed", sa.seed, "override the scenario seed");
    s->add_option("--steps", sa.steps, "override the step count");
    s->callback([&] { rc = cmd_simulate(sa); });

    ServeArgs va;
    auto* sv = app.add_subcommand("serve", "Cloud role: evaluate encrypted sessions over TCP");
    sv->add_option("--host", va.host, "bind address");
    sv->add_option("--port", va.port, "port (0 picks one and prints it)");
    sv->add_option("--eval-key", va.eval_key, "evaluation key JSON (bfv)");
    sv->add_option("--backend", va.backend, "bfv or mock");
    sv->add_option("--params", va.params, "HE parameter JSON (mock)");
    sv->add_option("--sessions", va.sessions, "exit after this many sessions (0 = never)");
    sv->add_option("--idle-timeout-ms", va.idle_timeout_ms, "per-session idle timeout");
    sv->callback([&] { rc = cmd_serve(va); });

    SensorArgs se;
    auto* sn = app.add_subcommand("sensor", "Plant side: sensor and actuator against a remote cloud");
    sn->add_option("--scenario", se.scenario, "scenario JSON with an encrypted controller")->required();
    sn->add_option("--host", se.host, "cloud host");
    sn->add_option("--port", se.port, "cloud port")->required();
    sn->add_option("--secret-key", se.secret_key, "secret key JSON");
    sn->add_option("--capture", se.capture, "append received CONTROL_ACTION frames to this file");
    sn->add_option("--csv", se.csv, "trace CSV output");
    sn->add_option("--norm", se.norm, "gnuplot norm data output");
    sn->add_option("--steps", se.steps, "override the step count");
    sn->callback([&] { rc = cmd_sensor(se); });

    ActuatorArgs ac;
    auto* at = app.add_subcommand("actuator", "Decrypt captured CONTROL_ACTION frames into control inputs");
    at->add_option("--capture", ac.capture, "frame capture from efc sensor --capture")->required();
    at->add_option("--secret-key", ac.secret_key, "secret key JSON (bfv)");
    at->add_option("--backend", ac.backend, "bfv or mock");
    at->add_option("--params", ac.params, "HE parameter JSON (mock)");
    at->add_option("--s6", ac.s6, "tap scaling of the session");
    at->add_option("--s7", ac.s7, "input scaling of the session");
    at->add_option("--out,-o", ac.out, "CSV output (default stdout)");
    at->callback([&] { rc = cmd_actuator(ac); });

    KeygenArgs ka;
    auto* kg = app.add_subcommand("keygen", "Deterministic key generation (toy parameters)");
    kg->add_option("--seed", ka.seed, "key seed");
    kg->add_option("--params", ka.params, "HE parameter JSON");
    kg->add_option("--scenario", ka.scenario, "derive the parameters of this scenario's encrypted controller");
    kg->add_option("--t", ka.t, "plaintext modulus (with --ring-dim)");
    kg->add_option("--ring-dim", ka.ring_dim, "ring dimension");
    kg->add_option("--secret-out", ka.secret_out, "secret key output");
    kg->add_option("--eval-out", ka.eval_out, "evaluation key output");
    kg->callback([&] { rc = cmd_keygen(ka); });

    BenchArgs ba;
    auto* b = app.add_subcommand("bench", "Per-step latency of the encrypted FIR evaluation");
    b->add_option("--filter", ba.filter, "filter JSON or built-in name");
    b->add_option("--mode", ba.mode, "partial or full");
    b->add_option("--backend", ba.backend, "bfv or mock");
    b->add_option("--ring-dim", ba.ring_dim, "ring dimension");
    b->add_option("--steps", ba.steps, "timed steps");
    b->add_option("--s6", ba.s6, "tap scaling (default 4 full, 100 partial)");
    b->add_option("--s7", ba.s7, "input scaling (default 3 full, 10 partial)");
    b->add_option("--y-max", ba.y_max, "bound on |y|_inf");
    b->add_option("--target-ms", ba.target_ms, "real-time target");
    b->add_flag("--sweep", ba.sweep, "also time N in {2,4,8,16} and fit a line");
    b->add_option("--seed", ba.seed, "seed");
    b->callback([&] { rc = cmd_bench(ba); });

    ReproduceArgs ra;
    auto* r = app.add_subcommand("reproduce-benchmark", "Reactor benchmark with the three published tap sets");
    r->add_option("--out,-o", ra.out, "output directory");
    r->add_option("--steps", ra.steps, "plaintext steps");
    r->add_option("--encrypted-steps", ra.encrypted_steps, "encrypted steps");
    r->add_option("--bench-steps", ra.bench_steps, "latency samples");
    r->add_option("--backend", ra.backend, "bfv or mock");
    r->add_option("--seed", ra.seed, "seed");
    r->callback([&] { rc = cmd_reproduce(ra); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::cerr << Json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << Json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
        return kExitFailure;
    }
    return rc;
}
