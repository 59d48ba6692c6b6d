#include "tdmoe/rate.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "tdmoe/error.hpp"

namespace tdmoe {
namespace {

void check_inputs(const ChannelMatrix& g, std::span<const double> p)
{
    require(g.size() >= 1 && p.size() == g.size(), ErrorCode::shape_mismatch,
            "sum_rate: power vector length " + std::to_string(p.size()) +
                " does not match channel side " + std::to_string(g.size()));
    for (double v : g.entries()) {
        require(std::isfinite(v), ErrorCode::non_finite, "sum_rate: non-finite gain");
        require(v >= 0.0, ErrorCode::invalid_parameter, "sum_rate: negative gain");
    }
    for (double v : p) {
        require(std::isfinite(v), ErrorCode::non_finite, "sum_rate: non-finite power");
        require(v >= 0.0, ErrorCode::invalid_parameter, "sum_rate: negative power");
    }
}

// Interference (excluding the unit noise) seen at receiver rx.
double interference(const ChannelMatrix& g, std::span<const double> p, std::size_t rx)
{
    double acc = 0.0;
    for (std::size_t tx = 0; tx < g.size(); ++tx)
        if (tx != rx)
            acc += g(tx, rx) * p[tx];
    return acc;
}

} // namespace

double sum_rate(const ChannelMatrix& g, std::span<const double> p)
{
    check_inputs(g, p);
    double r = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        r += std::log2(1.0 + g(i, i) * p[i] / (1.0 + interference(g, p, i)));
    return r;
}

double sum_rate_with_grad(const ChannelMatrix& g, std::span<const double> p, std::span<double> grad)
{
    check_inputs(g, p);
    const std::size_t k = g.size();
    require(grad.size() == k, ErrorCode::shape_mismatch, "sum_rate_grad: gradient buffer size");

    constexpr double inv_ln2 = 1.0 / std::numbers::ln2;
    // own[m] = 1 / (1 + I_m + G_mm p_m); cross[m] = G_mm p_m / ((1 + I_m)(1 + I_m + G_mm p_m))
    std::vector<double> own(k), cross(k);

    double r = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
        const double noise_plus_interf = 1.0 + interference(g, p, m);
        const double signal = g(m, m) * p[m];
        const double total = noise_plus_interf + signal;
        r += std::log2(1.0 + signal / noise_plus_interf);
        own[m] = 1.0 / total;
        cross[m] = signal / (noise_plus_interf * total);
    }
    for (std::size_t i = 0; i < k; ++i) {
        double d = g(i, i) * own[i];
        for (std::size_t m = 0; m < k; ++m)
            if (m != i)
                d -= g(i, m) * cross[m];
        grad[i] = inv_ln2 * d;
    }
    return r;
}

std::vector<double> sum_rate_grad(const ChannelMatrix& g, std::span<const double> p)
{
    std::vector<double> grad(g.size());
    sum_rate_with_grad(g, p, grad);
    return grad;
}

} // namespace tdmoe
