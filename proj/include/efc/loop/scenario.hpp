#pragma once

// Scenario files.
//
// {
//   "plant": "reactor" | <model> | "<path>",
//   "x0": [..],                        optional, default plant x0
//   "steps": 300, "seed": 1,
//   "controller": {
//     "kind": "zero" | "iir" | "quantized-iir" | "reset" | "fir" | "encrypted-fir" | "refresh",
//     "model": "companion" | <model> | "<path>",
//     "profile": <profile>, "period": 8, "x_reset": [..], "y_max": 200,
//     "filter": "window_n7" | "optimized_n2" | "replacement_n2" | <filter> | "<path>",
//     "mode": "partial" | "full", "s6": 100, "s7": 10, "precompute": false,
//     "backend": "bfv" | "mock", "he_params": <he_params>, "secret_key": "<path>", "key_seed": 1
//   },
//   "transport": {"kind": "inproc" | "socket", "host": "127.0.0.1", "port": 0, "remote": false, "timeout_ms": 10000}
// }
//
// Relative paths resolve against the scenario file's directory. Unknown keys are rejected.

#include <filesystem>
#include <set>
#include <string>

#include "efc/benchmark_data.hpp"
#include "efc/io/json.hpp"
#include "efc/loop/service.hpp"

namespace efc::loop {

namespace detail {

inline void reject_unknown(const io::Json& j, const std::set<std::string>& known, const std::string& where) {
    require(j.is_object(), ErrorCode::schema_error, where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        require(known.count(key) > 0, ErrorCode::schema_error, where + ": unknown field '" + key + "'");
    }
}

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
    const std::filesystem::path path(p);
    return (path.is_absolute() || base.empty() ? path : base / path).string();
}

} // namespace detail

/// "reactor" and "companion" name the built-in systems.
inline std::optional<StateSpace> builtin_model(const std::string& name) {
    if (name == "reactor") return benchmark::reactor();
    if (name == "companion") return benchmark::companion_controller();
    return std::nullopt;
}

inline std::optional<FirFilter> builtin_filter(const std::string& name) {
    for (auto& f : benchmark::published_filters()) {
        if (f.name == name) return f.filter;
    }
    return std::nullopt;
}

inline StateSpace model_ref(const io::Json& j, const std::filesystem::path& base) {
    if (j.is_string()) {
        if (auto m = builtin_model(j.get<std::string>())) return *m;
        return io::model_from_json(io::read_json_file(detail::resolve_path(j.get<std::string>(), base)));
    }
    return io::model_from_json(j);
}

inline FirFilter filter_ref(const io::Json& j, const std::filesystem::path& base) {
    if (j.is_string()) {
        if (auto f = builtin_filter(j.get<std::string>())) return *f;
        return io::filter_from_json(io::read_json_file(detail::resolve_path(j.get<std::string>(), base)));
    }
    return io::filter_from_json(j);
}

inline ControllerSpec controller_from_json(const io::Json& j, const std::filesystem::path& base = {}) {
    detail::reject_unknown(j,
                           {"kind", "model", "profile", "period", "x_reset", "y_max", "filter", "mode", "s6", "s7", "precompute", "backend",
                            "he_params", "secret_key", "key_seed"},
                           "controller");
    io::detail::expect_field(j, "kind", "controller");
    require(j["kind"].is_string(), ErrorCode::schema_error, "controller.kind: expected a string");
    ControllerSpec spec;
    spec.kind = controller_kind_from_string(j["kind"].get<std::string>());
    const bool needs_model = spec.kind == ControllerKind::iir || spec.kind == ControllerKind::quantized_iir ||
                             spec.kind == ControllerKind::reset || spec.kind == ControllerKind::refresh;
    const bool needs_filter = spec.kind == ControllerKind::fir || spec.kind == ControllerKind::encrypted_fir;
    if (needs_model) {
        io::detail::expect_field(j, "model", "controller");
        spec.model = model_ref(j["model"], base);
    }
    if (needs_filter) {
        io::detail::expect_field(j, "filter", "controller");
        spec.fir.filter = filter_ref(j["filter"], base);
    }
    if (spec.kind == ControllerKind::quantized_iir || spec.kind == ControllerKind::refresh) {
        io::detail::expect_field(j, "profile", "controller");
        spec.profile = io::profile_from_json(j["profile"]);
    }
    if (j.contains("period")) {
        spec.period = io::detail::unsigned_int(j["period"], "controller.period");
        require(spec.period >= 1, ErrorCode::schema_error, "controller.period must be at least 1");
    }
    if (j.contains("x_reset")) spec.x_reset = io::vector_from_json(j["x_reset"], "controller.x_reset", needs_model ? spec.model.states() : -1);
    if (j.contains("y_max")) {
        spec.y_max = io::detail::number(j["y_max"], "controller.y_max");
        spec.fir.y_max = spec.y_max;
    }
    if (j.contains("mode")) {
        require(j["mode"].is_string(), ErrorCode::schema_error, "controller.mode: expected a string");
        try {
            spec.fir.mode = tap_mode_from_string(j["mode"].get<std::string>());
        } catch (const Error& e) {
            fail(ErrorCode::schema_error, std::string("controller.mode: ") + e.what());
        }
    }
    if (j.contains("s6")) spec.fir.s6 = io::detail::number(j["s6"], "controller.s6");
    if (j.contains("s7")) spec.fir.s7 = io::detail::number(j["s7"], "controller.s7");
    require(spec.fir.s6 >= 1.0 && spec.fir.s7 >= 1.0, ErrorCode::schema_error, "controller.s6 and s7 must be >= 1");
    if (j.contains("precompute")) {
        require(j["precompute"].is_boolean(), ErrorCode::schema_error, "controller.precompute: expected a boolean");
        spec.fir.precompute = j["precompute"].get<bool>();
    }
    if (j.contains("backend")) {
        require(j["backend"].is_string(), ErrorCode::schema_error, "controller.backend: expected a string");
        spec.backend = j["backend"].get<std::string>();
        require(spec.backend == "bfv" || spec.backend == "mock", ErrorCode::schema_error, "controller.backend must be \"bfv\" or \"mock\"");
    }
    if (j.contains("he_params")) spec.he_params = io::he_params_from_json(j["he_params"]);
    if (j.contains("secret_key")) {
        require(j["secret_key"].is_string(), ErrorCode::schema_error, "controller.secret_key: expected a path");
        spec.keys = io::secret_key_from_json(io::read_json_file(detail::resolve_path(j["secret_key"].get<std::string>(), base)));
    }
    if (j.contains("key_seed")) spec.key_seed = io::detail::unsigned_int(j["key_seed"], "controller.key_seed");
    return spec;
}

inline TransportSpec transport_from_json(const io::Json& j) {
    detail::reject_unknown(j, {"kind", "host", "port", "remote", "timeout_ms"}, "transport");
    TransportSpec t;
    if (j.contains("kind")) {
        const std::string k = j["kind"].is_string() ? j["kind"].get<std::string>() : "";
        require(k == "inproc" || k == "socket", ErrorCode::schema_error, "transport.kind must be \"inproc\" or \"socket\"");
        t.kind = k == "inproc" ? TransportSpec::Kind::inproc : TransportSpec::Kind::socket;
    }
    if (j.contains("host")) {
        require(j["host"].is_string(), ErrorCode::schema_error, "transport.host: expected a string");
        t.host = j["host"].get<std::string>();
    }
    if (j.contains("port")) {
        const auto port = io::detail::unsigned_int(j["port"], "transport.port");
        require(port <= 65535, ErrorCode::schema_error, "transport.port out of range");
        t.port = static_cast<std::uint16_t>(port);
    }
    if (j.contains("remote")) {
        require(j["remote"].is_boolean(), ErrorCode::schema_error, "transport.remote: expected a boolean");
        t.local_cloud = !j["remote"].get<bool>();
    }
    if (j.contains("timeout_ms")) t.timeout = Millis(static_cast<Millis::rep>(io::detail::unsigned_int(j["timeout_ms"], "transport.timeout_ms")));
    require(t.local_cloud || t.kind == TransportSpec::Kind::socket, ErrorCode::schema_error, "a remote cloud needs transport.kind \"socket\"");
    return t;
}

inline Scenario scenario_from_json(const io::Json& j, const std::filesystem::path& base = {}) {
    detail::reject_unknown(j, {"plant", "x0", "steps", "seed", "controller", "transport"}, "scenario");
    for (const char* k : {"plant", "controller"}) io::detail::expect_field(j, k, "scenario");
    Scenario sc;
    sc.plant = model_ref(j["plant"], base);
    sc.controller = controller_from_json(j["controller"], base);
    if (j.contains("x0")) sc.x0 = io::vector_from_json(j["x0"], "scenario.x0", sc.plant.states());
    if (j.contains("steps")) sc.steps = io::detail::unsigned_int(j["steps"], "scenario.steps");
    if (j.contains("seed")) sc.seed = io::detail::unsigned_int(j["seed"], "scenario.seed");
    if (j.contains("transport")) sc.transport = transport_from_json(j["transport"]);
    return sc;
}

inline Scenario read_scenario(const std::string& path) {
    return scenario_from_json(io::read_json_file(path), std::filesystem::path(path).parent_path());
}

} // namespace efc::loop
