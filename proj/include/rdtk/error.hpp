#pragma once

#include <stdexcept>
#include <string>

namespace rdtk {

// Error taxonomy: `data` covers I/O and malformed input, `numeric` covers
// degenerate or singular estimation problems, `usage` covers bad arguments.
enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    const char* kind_name() const noexcept {
        switch (kind_) {
            case ErrorKind::usage: return "usage";
            case ErrorKind::data: return "data";
            case ErrorKind::numeric: return "numeric";
        }
        return "unknown";
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(ErrorKind::usage, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrorKind::data, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(ErrorKind::numeric, msg); }

} // namespace rdtk
