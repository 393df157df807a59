#include <gtest/gtest.h>

#include <thread>

#include "efc/benchmark_data.hpp"
#include "efc/loop/scenario.hpp"

using namespace efc;
using namespace efc::loop;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorCode::invalid_argument;
}

Scenario reactor_with(ControllerSpec spec, std::size_t steps) {
    Scenario sc;
    sc.plant = benchmark::reactor();
    sc.controller = std::move(spec);
    sc.steps = steps;
    return sc;
}

ControllerSpec encrypted(const FirFilter& f, TapMode mode, const std::string& backend = "bfv") {
    ControllerSpec s;
    s.kind = ControllerKind::encrypted_fir;
    s.fir.filter = f;
    s.fir.mode = mode;
    if (mode == TapMode::full) {
        s.fir.s6 = 4;
        s.fir.s7 = 3;
    }
    s.backend = backend;
    return s;
}

} // namespace

// ---- wire ----------------------------------------------------------------------------------

TEST(Wire, FrameLayoutAndRoundTrip) {
    const WireMessage m{MessageType::sensor_data, {1, 2, 3}};
    const Bytes f = encode_frame(m);
    ASSERT_EQ(f.size(), kHeaderSize + 3);
    EXPECT_EQ(std::string(f.begin(), f.begin() + 4), "EFC1");
    EXPECT_EQ(f[4], kVersion);
    EXPECT_EQ(f[5], 3);
    EXPECT_EQ(f[6], 3);
    EXPECT_EQ(f[7] | f[8] | f[9], 0);
    const WireMessage back = decode_frame(f);
    EXPECT_EQ(back.type, MessageType::sensor_data);
    EXPECT_EQ(back.payload, m.payload);
    EXPECT_EQ(decode_frame(encode_frame({MessageType::bye, {}})).payload.size(), 0u);
}

TEST(Wire, MalformedFramesAreProtocolErrors) {
    const Bytes good = encode_frame({MessageType::hello, {9, 9}});
    auto with = [&](std::size_t i, std::uint8_t v) {
        Bytes b = good;
        b[i] = v;
        return b;
    };
    EXPECT_EQ(code_of([&] { (void)decode_frame(with(0, 'X')); }), ErrorCode::protocol_error);
    EXPECT_EQ(code_of([&] { (void)decode_frame(with(4, kVersion + 1)); }), ErrorCode::protocol_error);
    EXPECT_EQ(code_of([&] { (void)decode_frame(with(5, 0)); }), ErrorCode::protocol_error);
    EXPECT_EQ(code_of([&] { (void)decode_frame(with(5, 8)); }), ErrorCode::protocol_error);
    EXPECT_EQ(code_of([&] { (void)decode_frame(with(6, 3)); }), ErrorCode::protocol_error);
    EXPECT_EQ(code_of([&] { (void)decode_frame(Bytes(good.begin(), good.begin() + 9)); }), ErrorCode::protocol_error);
    Bytes longer = good;
    longer.push_back(0);
    EXPECT_EQ(code_of([&] { (void)decode_frame(longer); }), ErrorCode::protocol_error);
}

TEST(Wire, BatchAndParamsPayloads) {
    const he::MockBackend m(he::default_params());
    CiphertextBatch b;
    b.step = 42;
    b.items = {he::to_bytes(m.encrypt_value(5)), he::to_bytes(m.encrypt_value(-7))};
    const CiphertextBatch back = decode_batch(encode_batch(b));
    EXPECT_EQ(back.step, 42u);
    ASSERT_EQ(back.items, b.items);
    EXPECT_EQ(m.decrypt_value(he::from_bytes<he::MockCiphertext>(back.items[1], m.params())), -7);
    Bytes trailing = encode_batch(b);
    trailing.push_back(1);
    EXPECT_EQ(code_of([&] { (void)decode_batch(trailing); }), ErrorCode::protocol_error);

    const ParamsPayload p{R"({"n":256})", {{1, 2}, {}, {3}}};
    const ParamsPayload pb = decode_params(encode_params(p));
    EXPECT_EQ(pb.json, p.json);
    EXPECT_EQ(pb.blobs, p.blobs);
}

// ---- transports ----------------------------------------------------------------------------

TEST(Transport, InProcDeliversInOrderAndTimesOut) {
    auto [a, b] = inproc_pair();
    a->send({MessageType::hello, {1}});
    a->send({MessageType::params, {2}});
    EXPECT_EQ(b->receive(Millis(100))->payload, Bytes{1});
    EXPECT_EQ(expect(*b, MessageType::params, Millis(100), "test").payload, Bytes{2});
    EXPECT_FALSE(b->receive(Millis(10)).has_value());
    EXPECT_EQ(code_of([&] { (void)expect(*b, MessageType::bye, Millis(10), "test"); }), ErrorCode::transport_failure);
    b->send({MessageType::bye, {}});
    EXPECT_EQ(code_of([&] { (void)expect(*a, MessageType::hello, Millis(100), "test"); }), ErrorCode::protocol_error);
}

TEST(Transport, SocketCarriesLargeFrames) {
    SocketListener listener(0);
    ASSERT_NE(listener.port(), 0);
    std::unique_ptr<Transport> server;
    std::thread t([&] { server = listener.accept(Millis(5000)); });
    auto client = SocketTransport::connect("127.0.0.1", listener.port());
    t.join();
    ASSERT_TRUE(server);
    Bytes big(1 << 20);
    for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<std::uint8_t>(i * 31);
    client->send({MessageType::sensor_data, big});
    const auto got = server->receive(Millis(5000));
    ASSERT_TRUE(got.has_value());
    EXPECT_EQ(got->type, MessageType::sensor_data);
    EXPECT_EQ(got->payload, big);
    EXPECT_FALSE(server->receive(Millis(20)).has_value());
    client->close();
    EXPECT_EQ(code_of([&] { (void)server->receive(Millis(1000)); }), ErrorCode::transport_failure);
}

TEST(Transport, CountingAndLossyWrappers) {
    auto [a, b] = inproc_pair();
    const he::MockBackend m(he::default_params());
    CiphertextBatch batch{0, {he::to_bytes(m.encrypt_value(1)), he::to_bytes(m.encrypt_value(2))}};
    LossyTransport::Policy pol;
    pol.drop_indices = {1};
    auto counting = std::make_unique<CountingTransport>(std::make_unique<LossyTransport>(std::move(a), pol));
    for (int i = 0; i < 3; ++i) counting->send({MessageType::state_refresh_down, encode_batch(batch)});
    counting->send({MessageType::sensor_data, encode_batch(batch)});
    EXPECT_EQ(counting->messages(MessageType::state_refresh_down), 3u);
    EXPECT_EQ(counting->ciphertexts(MessageType::state_refresh_down), 6u);
    EXPECT_EQ(counting->ciphertexts(MessageType::sensor_data), 2u);
    int received = 0;
    while (b->receive(Millis(20))) ++received;
    EXPECT_EQ(received, 3);
}

// ---- closed loop ---------------------------------------------------------------------------

TEST(ClosedLoop, PublishedFiltersStabilizeTheReactor) {
    for (const auto& f : {benchmark::window_n7(), benchmark::optimized_n2(), benchmark::replacement_n2()}) {
        const ClosedLoop cl = closed_loop_matrix(benchmark::reactor(), f);
        EXPECT_TRUE(cl.stable);
        EXPECT_LT(cl.spectral_radius, 1.0);
        EXPECT_EQ(cl.a.rows(), 4 + static_cast<Index>(f.order() * f.inputs()));
    }
    const ClosedLoop open = closed_loop_matrix(benchmark::reactor(), StateSpace::zero(1, 2, 1));
    EXPECT_FALSE(open.stable);
    EXPECT_NEAR(open.spectral_radius, spectral_radius(benchmark::reactor().a), 1e-12);
}

TEST(RunScenario, FirFiltersDriveStateToTenPercent) {
    for (const auto& f : {benchmark::window_n7(), benchmark::optimized_n2(), benchmark::replacement_n2()}) {
        ControllerSpec s;
        s.kind = ControllerKind::fir;
        s.fir.filter = f;
        const SimTrace tr = run_scenario(reactor_with(s, 300));
        ASSERT_EQ(tr.size(), 300u);
        EXPECT_DOUBLE_EQ(tr.rows[0].norm_x, benchmark::initial_state().norm());
        EXPECT_TRUE(tr.first_below(0.1).has_value());
        EXPECT_EQ(tr.flags(), 0u);
    }
}

TEST(RunScenario, ZeroControllerDiverges) {
    ControllerSpec s;
    s.kind = ControllerKind::zero;
    const SimTrace tr = run_scenario(reactor_with(s, 100));
    EXPECT_GT(tr.rows.back().norm_x, tr.rows.front().norm_x);
    EXPECT_FALSE(tr.first_below(0.1).has_value());
}

TEST(RunScenario, IirMatchesClosedLoopPropagation) {
    ControllerSpec s;
    s.kind = ControllerKind::iir;
    s.model = benchmark::companion_controller();
    const SimTrace tr = run_scenario(reactor_with(s, 150));
    const ClosedLoop cl = closed_loop_matrix(benchmark::reactor(), s.model);
    Vector z(cl.a.rows());
    z << benchmark::initial_state(), s.model.x0;
    for (const auto& r : tr.rows) {
        EXPECT_LE((r.x - z.head(4)).norm(), 1e-9 * std::max(1.0, z.norm())) << "k=" << r.k;
        z = cl.a * z;
    }
}

TEST(RunScenario, FeedthroughPlantIsRejected) {
    Scenario sc = reactor_with({}, 10);
    sc.plant.d = Matrix::Ones(2, 1);
    EXPECT_EQ(code_of([&] { (void)run_scenario(sc); }), ErrorCode::invalid_argument);
    Scenario bad = reactor_with({}, 10);
    bad.controller.kind = ControllerKind::fir;
    bad.controller.fir.filter = FirFilter({Matrix::Ones(1, 3)});
    EXPECT_EQ(code_of([&] { (void)run_scenario(bad); }), ErrorCode::dimension_mismatch);
}

TEST(EncryptedLoop, PartialBfvTraceIsExactAndStabilizes) {
    const ControllerSpec s = encrypted(benchmark::optimized_n2(), TapMode::partial);
    const SimTrace tr = run_scenario(reactor_with(s, 300));
    const FirTraceCheck c = check_fir_trace(tr, s.fir);
    EXPECT_EQ(c.steps, 300u);
    EXPECT_EQ(c.inexact, 0u);
    EXPECT_EQ(c.outside_bound, 0u);
    EXPECT_TRUE(tr.first_below(0.1).has_value());
    EXPECT_EQ(tr.flags(), 0u);
}

TEST(EncryptedLoop, FullBfvWindowTraceIsExact) {
    const ControllerSpec s = encrypted(benchmark::window_n7(), TapMode::full);
    const SimTrace tr = run_scenario(reactor_with(s, 60));
    const FirTraceCheck c = check_fir_trace(tr, s.fir);
    EXPECT_EQ(c.inexact, 0u);
    EXPECT_EQ(c.outside_bound, 0u);
    EXPECT_EQ(tr.flags(), 0u);
}

TEST(EncryptedLoop, PrecomputeGivesTheSameTrace) {
    ControllerSpec a = encrypted(benchmark::optimized_n2(), TapMode::partial, "mock");
    ControllerSpec b = a;
    b.fir.precompute = true;
    const SimTrace ta = run_scenario(reactor_with(a, 100));
    const SimTrace tb = run_scenario(reactor_with(b, 100));
    for (std::size_t k = 0; k < 100; ++k) EXPECT_EQ(ta.rows[k].u, tb.rows[k].u);
}

TEST(EncryptedLoop, SocketAndInProcTracesAreIdentical) {
    for (TapMode mode : {TapMode::partial, TapMode::full}) {
        ControllerSpec s = encrypted(benchmark::optimized_n2(), mode);
        Scenario inproc = reactor_with(s, 40);
        Scenario socket = inproc;
        socket.transport.kind = TransportSpec::Kind::socket;
        const SimTrace a = run_scenario(inproc);
        const SimTrace b = run_scenario(socket);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
            EXPECT_EQ(a.rows[k].u, b.rows[k].u);
            EXPECT_EQ(a.rows[k].x, b.rows[k].x);
        }
    }
}

TEST(EncryptedLoop, RefreshSessionStabilizesWithMock) {
    ControllerSpec s;
    s.kind = ControllerKind::refresh;
    s.model = benchmark::companion_controller();
    s.backend = "mock";
    s.period = 3;
    s.profile = ScalingProfile::uniform(1000, BigInt(1) << 50);
    s.y_max = 10;
    const SimTrace tr = run_scenario(reactor_with(s, 200));
    std::size_t refreshes = 0;
    for (const auto& r : tr.rows) refreshes += (r.flags & kFlagRefresh) ? 1 : 0;
    EXPECT_EQ(refreshes, 66u);
    EXPECT_EQ(tr.flags() & (kFlagOverflow | kFlagNoise), 0u);
    EXPECT_TRUE(tr.first_below(0.1).has_value());
}

// ---- scenario files ------------------------------------------------------------------------

TEST(ScenarioJson, ParsesAllFields) {
    const auto j = io::Json::parse(R"({
        "plant": "reactor", "steps": 12, "seed": 5, "x0": [1, 2, 3, 4],
        "controller": {"kind": "encrypted-fir", "filter": "optimized_n2", "mode": "full", "s6": 4, "s7": 3,
                       "backend": "mock", "precompute": true, "key_seed": 9},
        "transport": {"kind": "socket", "port": 0, "timeout_ms": 2500}
    })");
    const Scenario sc = scenario_from_json(j);
    EXPECT_EQ(sc.steps, 12u);
    EXPECT_EQ(sc.seed, 5u);
    ASSERT_TRUE(sc.x0.has_value());
    EXPECT_EQ((*sc.x0)(3), 4.0);
    EXPECT_EQ(sc.controller.kind, ControllerKind::encrypted_fir);
    EXPECT_EQ(sc.controller.fir.mode, TapMode::full);
    EXPECT_EQ(sc.controller.fir.s6, 4.0);
    EXPECT_TRUE(sc.controller.fir.precompute);
    EXPECT_EQ(sc.controller.key_seed, 9u);
    EXPECT_EQ(sc.controller.fir.filter.order(), 2u);
    EXPECT_EQ(sc.transport.kind, TransportSpec::Kind::socket);
    EXPECT_EQ(sc.transport.timeout, Millis(2500));
    EXPECT_EQ(run_scenario(sc).size(), 12u);
}

TEST(ScenarioJson, SchemaErrors) {
    auto parse = [](const char* text) { return code_of([&] { (void)scenario_from_json(io::Json::parse(text)); }); };
    EXPECT_EQ(parse(R"({"plant": "reactor", "controller": {"kind": "zero"}, "extra": 1})"), ErrorCode::schema_error);
    EXPECT_EQ(parse(R"({"plant": "reactor", "controller": {"kind": "zero", "colour": 1}})"), ErrorCode::schema_error);
    EXPECT_EQ(parse(R"({"plant": "reactor"})"), ErrorCode::schema_error);
    EXPECT_EQ(parse(R"({"plant": "reactor", "controller": {"kind": "fir"}})"), ErrorCode::schema_error);
    EXPECT_EQ(parse(R"({"plant": "reactor", "controller": {"kind": "fir", "filter": "window_n7", "mode": "both"}})"), ErrorCode::schema_error);
    EXPECT_EQ(parse(R"({"plant": "reactor", "controller": {"kind": "zero"}, "transport": {"kind": "pigeon"}})"), ErrorCode::schema_error);
    EXPECT_EQ(parse(R"({"plant": "reactor", "controller": {"kind": "zero"}, "transport": {"remote": true}})"), ErrorCode::schema_error);
    EXPECT_EQ(parse(R"({"plant": "reactor", "controller": {"kind": "reset", "model": "companion", "period": 0}})"), ErrorCode::schema_error);
}

// ---- latency -------------------------------------------------------------------------------

TEST(Latency, StatsOfKnownSamples) {
    std::vector<double> v;
    for (int i = 100; i >= 1; --i) v.push_back(i);
    const LatencyStats s = latency_stats(v);
    EXPECT_EQ(s.samples, 100u);
    EXPECT_DOUBLE_EQ(s.min_ms, 1.0);
    EXPECT_DOUBLE_EQ(s.median_ms, 50.5);
    EXPECT_DOUBLE_EQ(s.mean_ms, 50.5);
    EXPECT_NEAR(s.p99_ms, 99.01, 1e-9);
    EXPECT_EQ(latency_stats({}).samples, 0u);
}

TEST(Latency, MockBenchmarkRuns) {
    const he::MockBackend m(he::params_for(256, std::uint64_t{1} << 40));
    FirSessionConfig cfg;
    cfg.filter = benchmark::window_n7();
    const LatencyStats s = bench_encrypted_fir<he::MockBackend>(
        m, [&](std::int64_t v) { return m.encrypt_value(v); }, [&](const he::Plaintext& p) { return m.encrypt(p); }, cfg, 20, 1);
    EXPECT_EQ(s.samples, 20u);
    EXPECT_LE(s.min_ms, s.median_ms);
    EXPECT_LE(s.median_ms, s.p99_ms);
}
