#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace tdmoe {

/// Seeded single-owner random stream.
///
/// Every transform consumes a fixed number of engine draws, so the amount of
/// state used by an operation depends only on its arguments. Transforms are
/// written out here rather than taken from <random> distributions because the
/// latter are implementation-defined and may reject or cache draws.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1], safe as a logarithm argument.
    double uniform_open() { return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53; }

    /// Index uniform on [0, n), one engine draw. The bias from using 53 bits is below 2^-53 * n.
    std::size_t index_below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

    /// Standard normal via Box-Muller; two engine draws, the sine branch is discarded.
    double normal();

    /// Unit-mean exponential; one engine draw.
    double exponential();

    /// Independent child stream seeded from this one (one engine draw).
    RandomStream split();

private:
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used to derive well-separated child seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

} // namespace tdmoe
