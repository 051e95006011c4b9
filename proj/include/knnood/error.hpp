#pragma once

#include <stdexcept>
#include <string>

namespace knnood {

enum class ErrorKind {
    InvalidArgument,
    Format,
    Io,
    Numeric,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid_argument";
        case ErrorKind::Format: return "format";
        case ErrorKind::Io: return "io";
        case ErrorKind::Numeric: return "numeric";
    }
    return "unknown";
}

/// Single exception type for the library; `kind()` is what the CLI reports.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace knnood
