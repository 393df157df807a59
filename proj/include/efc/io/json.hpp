#pragma once

// JSON forms of models, filters, scaling profiles, HE parameters and key files. Every reader
// checks shape and types first and reports violations as schema errors.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "efc/bigint.hpp"
#include "efc/error.hpp"
#include "efc/fir.hpp"
#include "efc/he/bfv.hpp"
#include "efc/lti.hpp"
#include "efc/quantizer.hpp"

namespace efc::io {

using Json = nlohmann::json;

inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::schema_error, "cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        fail(ErrorCode::schema_error, path + ": " + e.what());
    }
}

inline void write_json_file(const std::string& path, const Json& j) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::invalid_argument, "cannot write " + path);
    out << j.dump(2) << '\n';
}

namespace detail {

inline void expect_field(const Json& j, const char* key, const std::string& where) {
    require(j.is_object(), ErrorCode::schema_error, where + ": expected an object");
    require(j.contains(key), ErrorCode::schema_error, where + ": missing field '" + key + "'");
}

inline double number(const Json& j, const std::string& where) {
    require(j.is_number(), ErrorCode::schema_error, where + ": expected a number");
    return j.get<double>();
}

inline std::uint64_t unsigned_int(const Json& j, const std::string& where) {
    if (j.is_string()) {
        try {
            std::size_t pos = 0;
            const auto v = std::stoull(j.get<std::string>(), &pos);
            require(pos == j.get<std::string>().size(), ErrorCode::schema_error, where + ": not an integer");
            return v;
        } catch (const std::logic_error&) {
            fail(ErrorCode::schema_error, where + ": not an integer");
        }
    }
    require(j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0), ErrorCode::schema_error,
            where + ": expected a non-negative integer");
    return j.get<std::uint64_t>();
}

inline BigInt big_integer(const Json& j, const std::string& where) {
    if (j.is_number_integer()) return j.is_number_unsigned() ? BigInt(j.get<std::uint64_t>()) : BigInt(j.get<std::int64_t>());
    require(j.is_string(), ErrorCode::schema_error, where + ": expected an integer or integer string");
    try {
        return BigInt(j.get<std::string>());
    } catch (const std::exception&) {
        fail(ErrorCode::schema_error, where + ": '" + j.get<std::string>() + "' is not an integer");
    }
}

} // namespace detail

// ---- dense matrices -------------------------------------------------------------------------

inline Json to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        Json r = Json::array();
        for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(r);
    }
    return rows;
}

/// rows x cols given; an empty array is accepted only for an empty matrix of known shape
inline Matrix matrix_from_json(const Json& j, const std::string& where, Index rows = -1, Index cols = -1) {
    require(j.is_array(), ErrorCode::schema_error, where + ": expected an array of rows");
    if (j.empty()) {
        require(rows >= 0 && cols >= 0 && (rows == 0 || cols == 0), ErrorCode::schema_error, where + ": empty matrix");
        return Matrix::Zero(rows, cols);
    }
    const Index r = static_cast<Index>(j.size());
    require(j[0].is_array(), ErrorCode::schema_error, where + ": expected an array of rows");
    const Index c = static_cast<Index>(j[0].size());
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i) {
        const Json& row = j[static_cast<std::size_t>(i)];
        require(row.is_array() && static_cast<Index>(row.size()) == c, ErrorCode::schema_error, where + ": ragged rows");
        for (Index k = 0; k < c; ++k) m(i, k) = detail::number(row[static_cast<std::size_t>(k)], where);
    }
    require(rows < 0 || r == rows, ErrorCode::schema_error, where + ": expected " + std::to_string(rows) + " rows");
    require(cols < 0 || c == cols, ErrorCode::schema_error, where + ": expected " + std::to_string(cols) + " columns");
    return m;
}

inline Json to_json(const Vector& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Vector vector_from_json(const Json& j, const std::string& where, Index size = -1) {
    require(j.is_array(), ErrorCode::schema_error, where + ": expected an array");
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = detail::number(j[i], where);
    require(size < 0 || v.size() == size, ErrorCode::schema_error, where + ": expected length " + std::to_string(size));
    return v;
}

// ---- models ---------------------------------------------------------------------------------

/// {"A": rows, "B": rows, "C": rows, "D": rows, "x0": [..] (optional)}
inline Json to_json(const StateSpace& s) {
    return Json{{"A", to_json(s.a)}, {"B", to_json(s.b)}, {"C", to_json(s.c)}, {"D", to_json(s.d)}, {"x0", to_json(s.x0)}};
}

inline StateSpace model_from_json(const Json& j) {
    for (const char* k : {"A", "B", "C", "D"}) detail::expect_field(j, k, "model");
    const Matrix a = matrix_from_json(j["A"], "model.A");
    require(a.rows() == a.cols(), ErrorCode::schema_error, "model.A must be square");
    const Matrix b = matrix_from_json(j["B"], "model.B", a.rows());
    const Matrix c = matrix_from_json(j["C"], "model.C", -1, a.rows());
    const Matrix d = matrix_from_json(j["D"], "model.D", c.rows(), b.cols());
    Vector x0 = Vector::Zero(a.rows());
    if (j.contains("x0")) x0 = vector_from_json(j["x0"], "model.x0", a.rows());
    return {a, b, c, d, x0};
}

// ---- filters --------------------------------------------------------------------------------

/// {"order": N, "inputs": l, "outputs": m, "taps": [F_0, ..., F_N]} with each F_j given row by row
inline Json to_json(const FirFilter& f) {
    Json taps = Json::array();
    for (const auto& t : f.taps) taps.push_back(to_json(t));
    return Json{{"order", f.order()}, {"inputs", f.inputs()}, {"outputs", f.outputs()}, {"taps", taps}};
}

inline FirFilter filter_from_json(const Json& j) {
    for (const char* k : {"order", "taps"}) detail::expect_field(j, k, "filter");
    const auto order = detail::unsigned_int(j["order"], "filter.order");
    const Json& taps = j["taps"];
    require(taps.is_array() && taps.size() == order + 1, ErrorCode::schema_error, "filter.taps must hold order + 1 matrices");
    const Index m = j.contains("outputs") ? static_cast<Index>(detail::unsigned_int(j["outputs"], "filter.outputs")) : -1;
    const Index l = j.contains("inputs") ? static_cast<Index>(detail::unsigned_int(j["inputs"], "filter.inputs")) : -1;
    std::vector<Matrix> out;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        const std::string where = "filter.taps[" + std::to_string(i) + "]";
        out.push_back(matrix_from_json(taps[i], where, i == 0 ? m : out.front().rows(), i == 0 ? l : out.front().cols()));
    }
    try {
        return FirFilter(std::move(out));
    } catch (const Error& e) {
        fail(ErrorCode::schema_error, std::string("filter: ") + e.what());
    }
}

// ---- scaling profiles -----------------------------------------------------------------------

/// {"s": [s0..s7], "q": "<decimal>"}
inline Json to_json(const ScalingProfile& p) {
    Json s = Json::array();
    for (double v : p.s) s.push_back(v);
    return Json{{"s", s}, {"q", p.q.str()}};
}

inline ScalingProfile profile_from_json(const Json& j) {
    for (const char* k : {"s", "q"}) detail::expect_field(j, k, "profile");
    require(j["s"].is_array() && j["s"].size() == 8, ErrorCode::schema_error, "profile.s must hold eight scaling factors");
    ScalingProfile p;
    for (std::size_t i = 0; i < 8; ++i) p.s[i] = detail::number(j["s"][i], "profile.s");
    p.q = detail::big_integer(j["q"], "profile.q");
    try {
        p.validate();
    } catch (const Error& e) {
        fail(ErrorCode::schema_error, std::string("profile: ") + e.what());
    }
    return p;
}

// ---- HE parameters and keys -----------------------------------------------------------------

inline Json to_json(const he::HeParams& p) {
    return Json{{"ring_dim", p.ring_dim},     {"q_c", std::to_string(p.q_c)},
                {"t", std::to_string(p.t)},   {"sigma", p.sigma},
                {"decomposition_base", p.decomposition_base}, {"levels", p.levels}};
}

inline he::HeParams he_params_from_json(const Json& j) {
    for (const char* k : {"ring_dim", "q_c", "t"}) detail::expect_field(j, k, "he_params");
    he::HeParams p;
    p.ring_dim = static_cast<std::uint32_t>(detail::unsigned_int(j["ring_dim"], "he_params.ring_dim"));
    p.q_c = detail::unsigned_int(j["q_c"], "he_params.q_c");
    p.t = detail::unsigned_int(j["t"], "he_params.t");
    if (j.contains("sigma")) p.sigma = detail::number(j["sigma"], "he_params.sigma");
    if (j.contains("decomposition_base")) p.decomposition_base = detail::unsigned_int(j["decomposition_base"], "he_params.decomposition_base");
    if (j.contains("levels")) p.levels = static_cast<int>(detail::unsigned_int(j["levels"], "he_params.levels"));
    try {
        p.validate();
    } catch (const Error& e) {
        fail(ErrorCode::schema_error, std::string("he_params: ") + e.what());
    }
    return p;
}

/// Session handshakes carry the sender's parameters; both ends must agree exactly.
inline void check_params_match(const Json& j, const he::HeParams& own) {
    require(j.is_object() && j.contains("he_params"), ErrorCode::protocol_error, "PARAMS lacks he_params");
    he::HeParams theirs;
    try {
        theirs = he_params_from_json(j["he_params"]);
    } catch (const Error& e) {
        fail(ErrorCode::protocol_error, std::string("PARAMS he_params: ") + e.what());
    }
    require(theirs == own, ErrorCode::protocol_error,
            "HE parameter mismatch: peer uses t = " + std::to_string(theirs.t) + ", q = " + std::to_string(theirs.q_c) +
                ", local t = " + std::to_string(own.t) + ", q = " + std::to_string(own.q_c));
}

namespace detail {

inline Json poly_json(const he::Poly& p) { return Json(p); }

inline he::Poly poly_from_json(const Json& j, const he::HeParams& params, const std::string& where) {
    require(j.is_array() && j.size() == params.ring_dim, ErrorCode::schema_error, where + ": polynomial has wrong length");
    he::Poly p(params.ring_dim);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = unsigned_int(j[i], where);
        require(p[i] < params.q_c, ErrorCode::schema_error, where + ": coefficient not reduced mod q");
    }
    return p;
}

inline void check_marker(const Json& j, const char* kind, const std::string& where) {
    expect_field(j, "marker", where);
    expect_field(j, "kind", where);
    require(j["marker"] == he::toy_marker(), ErrorCode::schema_error, where + ": missing toy-parameter marker");
    require(j["kind"] == kind, ErrorCode::schema_error, where + ": expected a " + std::string(kind) + " key file");
}

} // namespace detail

/// Secret key file, held by the sensor and actuator only.
inline Json secret_key_json(const he::KeyMaterial& km) {
    Json s = Json::array();
    for (auto c : km.secret.s) s.push_back(static_cast<int>(c));
    return Json{{"marker", he::toy_marker()}, {"kind", "secret"}, {"params", to_json(km.params)}, {"seed", km.seed}, {"secret", s}};
}

/// Evaluation key file (relinearization key and parameters), safe to hand to the cloud.
inline Json evaluation_key_json(const he::KeyMaterial& km) {
    Json parts = Json::array();
    for (const auto& p : km.relin.parts) parts.push_back(Json::array({detail::poly_json(p[0]), detail::poly_json(p[1])}));
    return Json{{"marker", he::toy_marker()}, {"kind", "evaluation"}, {"params", to_json(km.params)}, {"relin", parts}};
}

struct SecretKeyFile {
    he::HeParams params;
    std::uint64_t seed = 0;
    he::SecretKey secret;
};

inline SecretKeyFile secret_key_from_json(const Json& j) {
    detail::check_marker(j, "secret", "secret key");
    for (const char* k : {"params", "seed", "secret"}) detail::expect_field(j, k, "secret key");
    SecretKeyFile f;
    f.params = he_params_from_json(j["params"]);
    f.seed = detail::unsigned_int(j["seed"], "secret key.seed");
    require(j["secret"].is_array() && j["secret"].size() == f.params.ring_dim, ErrorCode::schema_error, "secret key has wrong length");
    for (const auto& c : j["secret"]) {
        require(c.is_number_integer() && c.get<int>() >= -1 && c.get<int>() <= 1, ErrorCode::schema_error, "secret key must be ternary");
        f.secret.s.push_back(static_cast<std::int8_t>(c.get<int>()));
    }
    return f;
}

struct EvaluationKeyFile {
    he::HeParams params;
    he::RelinKey relin;
};

inline EvaluationKeyFile evaluation_key_from_json(const Json& j) {
    detail::check_marker(j, "evaluation", "evaluation key");
    for (const char* k : {"params", "relin"}) detail::expect_field(j, k, "evaluation key");
    EvaluationKeyFile f;
    f.params = he_params_from_json(j["params"]);
    const Json& parts = j["relin"];
    require(parts.is_array() && static_cast<int>(parts.size()) == f.params.digits(), ErrorCode::schema_error,
            "evaluation key has the wrong number of relinearization parts");
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const std::string where = "evaluation key.relin[" + std::to_string(i) + "]";
        require(parts[i].is_array() && parts[i].size() == 2, ErrorCode::schema_error, where + ": expected two polynomials");
        f.relin.parts.push_back({detail::poly_from_json(parts[i][0], f.params, where), detail::poly_from_json(parts[i][1], f.params, where)});
    }
    return f;
}

// ---- exact integer matrices -----------------------------------------------------------------

inline Json to_json(const IntMatrix<i128>& m) {
    Json data = Json::array();
    for (i128 v : m.data) data.push_back(to_string(v));
    return Json{{"rows", m.rows}, {"cols", m.cols}, {"data", data}};
}

inline IntMatrix<i128> int_matrix_from_json(const Json& j, const std::string& where) {
    for (const char* k : {"rows", "cols", "data"}) detail::expect_field(j, k, where);
    IntMatrix<i128> m(static_cast<Index>(detail::unsigned_int(j["rows"], where)), static_cast<Index>(detail::unsigned_int(j["cols"], where)));
    require(j["data"].is_array() && j["data"].size() == m.data.size(), ErrorCode::schema_error, where + ": data has wrong length");
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        const BigInt v = detail::big_integer(j["data"][i], where);
        require(boost::multiprecision::abs(v) < (BigInt(1) << 120), ErrorCode::schema_error, where + ": entry out of range");
        m.data[i] = to_i128(v);
    }
    return m;
}

} // namespace efc::io
