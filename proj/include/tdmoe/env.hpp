#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tdmoe/random.hpp"

namespace tdmoe {

/// K x K nonnegative power-gain matrix. Entry (tx, rx) is the gain from
/// transmitter tx to receiver rx, so the diagonal holds the direct links.
/// Stored row-major: entries()[tx * K + rx].
class ChannelMatrix {
public:
    ChannelMatrix() = default;
    explicit ChannelMatrix(std::size_t k);
    ChannelMatrix(std::size_t k, std::vector<double> row_major);

    std::size_t size() const noexcept { return k_; }
    double operator()(std::size_t tx, std::size_t rx) const { return entries_[tx * k_ + rx]; }
    double& operator()(std::size_t tx, std::size_t rx) { return entries_[tx * k_ + rx]; }
    std::span<const double> entries() const noexcept { return entries_; }

    bool all_finite() const noexcept;
    bool nonnegative() const noexcept;

    bool operator==(const ChannelMatrix&) const = default;

private:
    std::size_t k_ = 0;
    std::vector<double> entries_;
};

/// Per-transmitter CSI quality coefficients, each in [0, 1]. 1 means the
/// transmitter's gain feedback is exact.
struct QualityVector {
    std::vector<double> gammas;

    std::size_t size() const noexcept { return gammas.size(); }
    void validate() const;
    bool operator==(const QualityVector&) const = default;
};

/// Noisy network-provided estimate of the QualityVector. Not clipped.
struct QualityEstimate {
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    bool operator==(const QualityEstimate&) const = default;
};

struct Observation {
    ChannelMatrix csi;
    QualityEstimate quality_estimate;

    bool operator==(const Observation&) const = default;
};

/// One training/evaluation draw. `quality` is the ground truth that generated
/// the observations; policies never see it.
struct Sample {
    ChannelMatrix true_channel;
    std::vector<Observation> observations;
    QualityVector quality;

    std::size_t size() const noexcept { return true_channel.size(); }
    bool operator==(const Sample&) const = default;
};

/// Channel entries are `scale * chi2(dof)`. The default (dof 2, scale 1/2) is the
/// squared magnitude of a unit circularly-symmetric complex Gaussian, i.e.
/// Rayleigh fading with unit-mean exponential power gains.
struct ChannelLaw {
    int dof = 2;
    double scale = 0.5;

    void validate() const;
    double draw(RandomStream& rng) const;
};

struct EnvParams {
    ChannelLaw law{};
    double sigma_n = 0.0; ///< std-dev of the additive Gaussian noise on the quality estimate
};

ChannelMatrix sample_channel(RandomStream& rng, std::size_t k, const ChannelLaw& law = {});

/// gamma * G + sqrt(1 - gamma^2) * Delta, with Delta drawn from `law`.
/// Delta is always drawn, so the random state consumed does not depend on gamma.
ChannelMatrix corrupt_csi(const ChannelMatrix& g, double gamma, RandomStream& rng,
                          const ChannelLaw& law = {});

QualityEstimate estimate_quality(const QualityVector& gamma, double sigma_n, RandomStream& rng);

QualityVector sample_quality_uniform(RandomStream& rng, std::size_t k);

/// Fresh channel, one corrupted CSI per agent, one shared quality estimate.
Sample draw_sample(const QualityVector& gamma, const EnvParams& env, RandomStream& rng);

std::vector<Sample> sample_batch(const QualityVector& gamma, double sigma_n, std::size_t n,
                                 RandomStream& rng, const ChannelLaw& law = {});

/// Training set with a fresh uniform quality per sample.
std::vector<Sample> sample_mixed_quality_set(std::size_t k, const EnvParams& env, std::size_t n,
                                             RandomStream& rng);

} // namespace tdmoe
