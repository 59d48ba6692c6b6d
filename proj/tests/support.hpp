#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "tdmoe/random.hpp"

namespace tdmoe::testing {

/// |a - b| relative to the larger magnitude; differences below `abs_floor`
/// count as zero so near-zero components do not blow up the ratio.
inline double rel_err(double a, double b, double abs_floor)
{
    const double d = std::abs(a - b);
    if (d <= abs_floor)
        return 0.0;
    return d / std::max({std::abs(a), std::abs(b), abs_floor});
}

inline std::vector<double> random_powers(RandomStream& rng, std::size_t k, double p_max)
{
    std::vector<double> p(k);
    for (double& v : p)
        v = p_max * rng.uniform();
    return p;
}

} // namespace tdmoe::testing
