#include "tdmoe/random.hpp"

#include <cmath>
#include <numbers>

#include "tdmoe/error.hpp"

namespace tdmoe {

const char* to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::invalid_dimension: return "invalid dimension";
    case ErrorCode::invalid_parameter: return "invalid parameter";
    case ErrorCode::empty_batch: return "empty batch";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::non_finite: return "non-finite value";
    case ErrorCode::unsupported_dimension: return "unsupported dimension";
    case ErrorCode::config: return "config error";
    case ErrorCode::io: return "i/o error";
    }
    return "unknown";
}

double RandomStream::normal()
{
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RandomStream::exponential() { return -std::log(uniform_open()); }

RandomStream RandomStream::split() { return RandomStream(mix_seed(engine_())); }

std::uint64_t mix_seed(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace tdmoe
