#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace comodal {

// Error categories. Kept in sync with comodal_status in the public C header;
// the C API maps Error::code() onto its status enum one to one.
enum class ErrorCode : int {
    invalid_argument = 1,
    io = 2,
    format = 3,       // malformed file: bad magic/version/dtype/truncation/payload size
    invariant = 4,    // a domain invariant is violated (NaN intensities, bad spacing, ...)
    config = 5,       // configuration file or parameter rejected by schema validation
    shape_mismatch = 6,
    numeric = 7,      // non-finite values where finite ones are required
    not_found = 8,
    runtime = 9,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string message)
        : std::runtime_error(std::move(message)), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) fail(code, message);
}

inline const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::io: return "io";
        case ErrorCode::format: return "format";
        case ErrorCode::invariant: return "invariant";
        case ErrorCode::config: return "config";
        case ErrorCode::shape_mismatch: return "shape_mismatch";
        case ErrorCode::numeric: return "numeric";
        case ErrorCode::not_found: return "not_found";
        case ErrorCode::runtime: return "runtime";
    }
    return "unknown";
}

}  // namespace comodal
