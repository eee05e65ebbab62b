#pragma once

#include <stdexcept>
#include <string>

namespace orthoseg {

/// Broad failure categories. The HTTP facade maps these onto status codes.
enum class ErrorKind {
    invalid_argument,   // 400
    not_found,          // 404
    conflict,           // 409
    contract_violation, // 422
    io,                 // 500
    internal,           // 500
    cancelled,          // job stopped on request
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
    if (!cond)
        throw Error(ErrorKind::invalid_argument, what);
}

} // namespace orthoseg
