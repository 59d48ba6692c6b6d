#pragma once

#include <span>
#include <vector>

#include "tdmoe/env.hpp"

namespace tdmoe {

/// Transmit powers in linear units, noise power normalized to 1.
using PowerVector = std::vector<double>;

/// Sum over receivers of log2(1 + SINR_i), interference treated as noise.
double sum_rate(const ChannelMatrix& g, std::span<const double> p);

/// dR/dp_i for every transmitter i.
std::vector<double> sum_rate_grad(const ChannelMatrix& g, std::span<const double> p);

/// Both at once, sharing the interference sums. Inputs are validated.
double sum_rate_with_grad(const ChannelMatrix& g, std::span<const double> p, std::span<double> grad);

} // namespace tdmoe
