#pragma once

#include <stdexcept>
#include <string>

namespace dagnet {

enum class ErrorCode {
    Argument,  // bad value, shape mismatch, unknown key
    Io,        // missing file, short read/write
    Format,    // bad magic, version, corrupt payload
    Numeric,   // NaN/Inf surfaced during computation
    Internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string message)
        : std::runtime_error(std::move(message)), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool cond, ErrorCode code, const std::string& message) {
    if (!cond) fail(code, message);
}

}  // namespace dagnet
