#include "tdmoe/env.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tdmoe/error.hpp"

namespace tdmoe {

ChannelMatrix::ChannelMatrix(std::size_t k) : k_(k), entries_(k * k, 0.0)
{
    require(k >= 1, ErrorCode::invalid_dimension, "channel matrix side must be >= 1");
}

ChannelMatrix::ChannelMatrix(std::size_t k, std::vector<double> row_major)
    : k_(k), entries_(std::move(row_major))
{
    require(k >= 1, ErrorCode::invalid_dimension, "channel matrix side must be >= 1");
    require(entries_.size() == k * k, ErrorCode::invalid_dimension,
            "channel matrix needs " + std::to_string(k * k) + " entries, got " +
                std::to_string(entries_.size()));
}

bool ChannelMatrix::all_finite() const noexcept
{
    return std::all_of(entries_.begin(), entries_.end(), [](double v) { return std::isfinite(v); });
}

bool ChannelMatrix::nonnegative() const noexcept
{
    return std::all_of(entries_.begin(), entries_.end(), [](double v) { return v >= 0.0; });
}

void QualityVector::validate() const
{
    require(!gammas.empty(), ErrorCode::invalid_dimension, "quality vector is empty");
    for (double g : gammas)
        require(g >= 0.0 && g <= 1.0, ErrorCode::invalid_parameter,
                "quality coefficient outside [0,1]: " + std::to_string(g));
}

void ChannelLaw::validate() const
{
    require(dof >= 1, ErrorCode::invalid_parameter, "chi-squared degrees of freedom must be >= 1");
    require(scale > 0.0 && std::isfinite(scale), ErrorCode::invalid_parameter,
            "channel scale must be positive");
}

double ChannelLaw::draw(RandomStream& rng) const
{
    // A pair of squared standard normals sums to 2 * Exp(1).
    double chi2 = 0.0;
    for (int i = 0; i + 1 < dof; i += 2)
        chi2 += 2.0 * rng.exponential();
    if (dof % 2 == 1) {
        const double z = rng.normal();
        chi2 += z * z;
    }
    return scale * chi2;
}

ChannelMatrix sample_channel(RandomStream& rng, std::size_t k, const ChannelLaw& law)
{
    require(k >= 1, ErrorCode::invalid_dimension, "sample_channel: k must be >= 1");
    std::vector<double> e(k * k);
    for (double& v : e)
        v = law.draw(rng);
    return ChannelMatrix(k, std::move(e));
}

ChannelMatrix corrupt_csi(const ChannelMatrix& g, double gamma, RandomStream& rng,
                          const ChannelLaw& law)
{
    require(gamma >= 0.0 && gamma <= 1.0, ErrorCode::invalid_parameter,
            "corrupt_csi: gamma outside [0,1]: " + std::to_string(gamma));
    require(g.size() >= 1 && g.all_finite() && g.nonnegative(), ErrorCode::invalid_parameter,
            "corrupt_csi: channel must be finite and nonnegative");
    const double mix = std::sqrt(1.0 - gamma * gamma);
    const std::size_t k = g.size();
    std::vector<double> e(k * k);
    for (std::size_t n = 0; n < e.size(); ++n)
        e[n] = gamma * g.entries()[n] + mix * law.draw(rng);
    ChannelMatrix out(k, std::move(e));
    require(out.nonnegative(), ErrorCode::non_finite, "corrupt_csi produced a negative gain");
    return out;
}

QualityEstimate estimate_quality(const QualityVector& gamma, double sigma_n, RandomStream& rng)
{
    require(sigma_n >= 0.0 && std::isfinite(sigma_n), ErrorCode::invalid_parameter,
            "estimate_quality: sigma_n must be >= 0");
    QualityEstimate est;
    est.values.reserve(gamma.size());
    for (double g : gamma.gammas)
        est.values.push_back(g + sigma_n * rng.normal());
    return est;
}

QualityVector sample_quality_uniform(RandomStream& rng, std::size_t k)
{
    require(k >= 1, ErrorCode::invalid_dimension, "sample_quality_uniform: k must be >= 1");
    QualityVector q;
    q.gammas.resize(k);
    for (double& g : q.gammas)
        g = rng.uniform();
    return q;
}

Sample draw_sample(const QualityVector& gamma, const EnvParams& env, RandomStream& rng)
{
    gamma.validate();
    const std::size_t k = gamma.size();
    Sample s;
    s.true_channel = sample_channel(rng, k, env.law);
    s.observations.resize(k);
    for (std::size_t i = 0; i < k; ++i)
        s.observations[i].csi = corrupt_csi(s.true_channel, gamma.gammas[i], rng, env.law);
    const QualityEstimate est = estimate_quality(gamma, env.sigma_n, rng);
    for (auto& obs : s.observations)
        obs.quality_estimate = est;
    s.quality = gamma;
    return s;
}

std::vector<Sample> sample_batch(const QualityVector& gamma, double sigma_n, std::size_t n,
                                 RandomStream& rng, const ChannelLaw& law)
{
    require(n >= 1, ErrorCode::empty_batch, "sample_batch: n must be >= 1");
    const EnvParams env{law, sigma_n};
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(draw_sample(gamma, env, rng));
    return out;
}

std::vector<Sample> sample_mixed_quality_set(std::size_t k, const EnvParams& env, std::size_t n,
                                             RandomStream& rng)
{
    require(n >= 1, ErrorCode::empty_batch, "sample_mixed_quality_set: n must be >= 1");
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const QualityVector q = sample_quality_uniform(rng, k);
        out.push_back(draw_sample(q, env, rng));
    }
    return out;
}

} // namespace tdmoe
