#pragma once

#include <stdexcept>
#include <string>

namespace efc {

enum class ErrorCode {
    invalid_argument,
    dimension_mismatch,
    unstable_system,
    infeasible,
    solver_failure,
    overflow,
    level_exceeded,
    headroom_exceeded,
    noise_overflow,
    transport_failure,
    protocol_error,
    schema_error,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::unstable_system: return "unstable_system";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::solver_failure: return "solver_failure";
    case ErrorCode::overflow: return "overflow";
    case ErrorCode::level_exceeded: return "level_exceeded";
    case ErrorCode::headroom_exceeded: return "headroom_exceeded";
    case ErrorCode::noise_overflow: return "noise_overflow";
    case ErrorCode::transport_failure: return "transport_failure";
    case ErrorCode::protocol_error: return "protocol_error";
    case ErrorCode::schema_error: return "schema_error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

} // namespace efc
