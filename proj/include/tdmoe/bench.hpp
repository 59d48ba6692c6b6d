#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "tdmoe/env.hpp"
#include "tdmoe/policies.hpp"
#include "tdmoe/train.hpp"

namespace tdmoe {

struct Trajectory {
    std::vector<QualityVector> intervals;
    std::size_t slots_per_interval = 10;

    std::size_t slots() const noexcept { return intervals.size() * slots_per_interval; }
    const QualityVector& quality_at_slot(std::size_t slot) const { return intervals.at(slot / slots_per_interval); }
    void validate() const;
};

/// Two-user trajectory over 20 intervals: exact CSI, user 2 fades to blind by
/// interval 6, user 1 by interval 11, joint recovery by 16, then four mixed points.
Trajectory default_trajectory();

struct BenchConfig {
    Trajectory trajectory = default_trajectory();
    std::size_t eval_realizations = 10000;
    double sigma_n = 0.0;
    double p_max = 10.0;
    /// Any of dmoe, teamdnn, wmmse_naive, tdma, oracle. teamdnn expands to
    /// one teamdnn_rup<k> entry per value in r_up.
    std::vector<std::string> algorithms{"dmoe", "teamdnn", "wmmse_naive", "tdma", "oracle"};
    std::vector<std::size_t> r_up{10, 100};
    std::size_t n_slot_train = 30000;
    std::size_t retrain_batch = 1000;
    ChannelLaw law{};
    std::uint64_t seed = 1;

    void validate() const;
    /// Expanded, sorted algorithm names; this is the row order within a slot.
    std::vector<std::string> algorithm_names() const;

    static BenchConfig desk_scale();
};

struct SlotResult {
    std::size_t slot = 0;     ///< 1-based
    std::size_t interval = 0; ///< 1-based
    QualityVector quality;
    std::string algorithm;
    double mean_sum_rate = 0.0;
    double std_err = 0.0;
};

struct MeanEstimate {
    double mean = 0.0;
    double std_err = 0.0;
};

/// Sample mean and standard error (n - 1 denominator; 0 for a single value).
MeanEstimate mean_and_error(std::span<const double> values);

/// Called after each slot with (slot index, total slots).
using ProgressFn = std::function<void(std::size_t, std::size_t)>;

/// Evaluates every configured algorithm on the same fresh samples in each slot.
/// `teamdnn_training` supplies the imitation budget and learning rates of the
/// retraining baseline.
std::vector<SlotResult> run_benchmark(const BenchConfig& cfg, const DmoeTeam& trained,
                                      const TrainConfig& teamdnn_training, const ProgressFn& progress = {});

/// Trajectory average of one algorithm's slot means; the error combines the
/// per-slot errors as independent.
MeanEstimate trajectory_average(std::span<const SlotResult> results, std::string_view algorithm);

struct SweepPoint {
    double sigma_n = 0.0;
    double mean_sum_rate = 0.0;
    double std_err = 0.0;
};

inline const std::vector<double> default_sigma_grid{0.0, 0.05, 0.1, 0.2, 0.3};

/// Team-DMoE trajectory averages per sigma_n. Every sigma_n value sees the
/// same channels and the same standard-normal draws behind the quality estimate.
std::vector<SweepPoint> sweep_sigma(const BenchConfig& base, std::span<const double> sigmas, const DmoeTeam& trained);

inline constexpr std::string_view results_csv_header = "slot,interval,gamma1,gamma2,algorithm,mean_sum_rate,std_err";
inline constexpr std::string_view sweep_csv_header = "sigma_n,mean_sum_rate,std_err";

void write_results_csv(std::ostream& os, std::span<const SlotResult> results);
void write_sweep_csv(std::ostream& os, std::span<const SweepPoint> points);

/// Everything a run needs, as read from a JSON config file.
struct ExperimentConfig {
    TrainConfig train = TrainConfig::desk_scale();
    BenchConfig bench = BenchConfig::desk_scale();
    std::vector<double> sweep_sigmas = default_sigma_grid;
};

/// Unknown or mistyped keys raise ErrorCode::config naming the key path.
ExperimentConfig parse_experiment_config(std::string_view json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Command-line entry point; returns the process exit code.
int cli_main(int argc, const char* const* argv);

} // namespace tdmoe
