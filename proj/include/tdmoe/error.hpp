#pragma once

#include <stdexcept>
#include <string>

namespace tdmoe {

enum class ErrorCode {
    invalid_dimension,
    invalid_parameter,
    empty_batch,
    shape_mismatch,
    non_finite,
    unsupported_dimension,
    config,
    io,
};

const char* to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what)
{
    if (!condition)
        fail(code, what);
}

} // namespace tdmoe
