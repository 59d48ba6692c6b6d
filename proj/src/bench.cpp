#include "tdmoe/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>

#include "tdmoe/error.hpp"
#include "tdmoe/rate.hpp"

namespace tdmoe {
namespace {

constexpr std::string_view teamdnn_prefix = "teamdnn_rup";

// Evaluation samples of a slot depend on (seed, slot) only, so every
// algorithm, every sigma_n and every run see the same channels.
RandomStream slot_stream(std::uint64_t seed, std::size_t slot)
{
    return RandomStream(mix_seed(mix_seed(seed) ^ (0x5107ULL + slot)));
}

std::string format_g6(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct RetrainRun {
    std::size_t r_up = 0;
    TeamDnnTeam team;
    TeamOptimizers opt;
    RandomStream rng;
};

std::vector<double> rates_of(std::span<const Sample> samples, const std::vector<PowerVector>& powers)
{
    std::vector<double> r(samples.size());
    for (std::size_t c = 0; c < samples.size(); ++c)
        r[c] = sum_rate(samples[c].true_channel, powers[c]);
    return r;
}

std::vector<PowerVector> transpose(const std::vector<std::vector<double>>& per_agent, std::size_t n)
{
    std::vector<PowerVector> out(n, PowerVector(per_agent.size()));
    for (std::size_t j = 0; j < per_agent.size(); ++j)
        for (std::size_t c = 0; c < n; ++c)
            out[c][j] = per_agent[j][c];
    return out;
}

std::vector<PowerVector> dmoe_powers(const DmoeTeam& team, std::span<const Sample> samples)
{
    std::vector<std::vector<double>> p;
    for (std::size_t j = 0; j < team.size(); ++j)
        p.push_back(dmoe_decide_batch(team[j], samples, j));
    return transpose(p, samples.size());
}

std::vector<PowerVector> teamdnn_powers(const TeamDnnTeam& team, std::span<const Sample> samples)
{
    std::vector<std::vector<double>> p;
    for (std::size_t j = 0; j < team.size(); ++j)
        p.push_back(teamdnn_decide_batch(team[j], samples, j));
    return transpose(p, samples.size());
}

void check_trained(const DmoeTeam& trained, const BenchConfig& cfg)
{
    const std::size_t k = cfg.trajectory.intervals.front().size();
    require(trained.size() == k, ErrorCode::shape_mismatch,
            "trained team has " + std::to_string(trained.size()) + " agents, trajectory has " + std::to_string(k));
    for (const auto& m : trained.members) {
        m.validate();
        require(m.agents() == k, ErrorCode::shape_mismatch, "trained policy width does not match K");
        require(m.p_max == cfg.p_max, ErrorCode::shape_mismatch,
                "trained p_max " + format_g6(m.p_max) + " differs from bench p_max " + format_g6(cfg.p_max));
    }
}

} // namespace

void Trajectory::validate() const
{
    require(!intervals.empty(), ErrorCode::config, "trajectory has no intervals");
    require(slots_per_interval >= 1, ErrorCode::config, "slots_per_interval must be >= 1");
    for (const auto& q : intervals) {
        try {
            q.validate();
        } catch (const Error& e) {
            fail(ErrorCode::config, std::string("trajectory: ") + e.what());
        }
        require(q.size() == intervals.front().size(), ErrorCode::config, "trajectory intervals differ in size");
    }
}

Trajectory default_trajectory()
{
    Trajectory t;
    for (int i = 0; i <= 5; ++i)
        t.intervals.push_back(QualityVector{{1.0, 1.0 - i / 5.0}});
    for (int i = 1; i <= 5; ++i)
        t.intervals.push_back(QualityVector{{1.0 - i / 5.0, 0.0}});
    for (int i = 1; i <= 5; ++i)
        t.intervals.push_back(QualityVector{{i / 5.0, i / 5.0}});
    t.intervals.push_back(QualityVector{{1.0, 0.5}});
    t.intervals.push_back(QualityVector{{0.5, 1.0}});
    t.intervals.push_back(QualityVector{{0.5, 0.5}});
    t.intervals.push_back(QualityVector{{1.0, 1.0}});
    return t;
}

void BenchConfig::validate() const
{
    trajectory.validate();
    require(eval_realizations >= 1, ErrorCode::config, "eval_realizations must be >= 1");
    require(sigma_n >= 0.0 && std::isfinite(sigma_n), ErrorCode::config, "sigma_n must be >= 0");
    require(p_max > 0.0 && std::isfinite(p_max), ErrorCode::config, "p_max must be positive");
    require(!algorithms.empty(), ErrorCode::config, "no algorithms selected");
    for (const auto& a : algorithms)
        require(a == "dmoe" || a == "teamdnn" || a == "wmmse_naive" || a == "tdma" || a == "oracle",
                ErrorCode::config, "unknown algorithm '" + a + "'");
    if (std::find(algorithms.begin(), algorithms.end(), "teamdnn") != algorithms.end()) {
        require(!r_up.empty(), ErrorCode::config, "teamdnn needs at least one r_up value");
        SlotRetrainConfig{n_slot_train, 1, retrain_batch}.validate();
    }
    for (std::size_t r : r_up)
        require(r >= 1, ErrorCode::config, "r_up values must be >= 1");
    law.validate();
}

std::vector<std::string> BenchConfig::algorithm_names() const
{
    std::vector<std::string> names;
    for (const auto& a : algorithms) {
        if (a == "teamdnn") {
            for (std::size_t r : r_up)
                names.push_back(std::string(teamdnn_prefix) + std::to_string(r));
        } else {
            names.push_back(a);
        }
    }
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
}

BenchConfig BenchConfig::desk_scale()
{
    BenchConfig cfg;
    cfg.eval_realizations = 2000;
    return cfg;
}

MeanEstimate mean_and_error(std::span<const double> values)
{
    require(!values.empty(), ErrorCode::empty_batch, "mean of an empty set");
    const double n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values)
        sum += v;
    const double mean = sum / n;
    if (values.size() == 1)
        return {mean, 0.0};
    double ss = 0.0;
    for (double v : values)
        ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

std::vector<SlotResult> run_benchmark(const BenchConfig& cfg, const DmoeTeam& trained,
                                      const TrainConfig& teamdnn_training, const ProgressFn& progress)
{
    cfg.validate();
    const auto names = cfg.algorithm_names();
    const bool need_dmoe = std::find(names.begin(), names.end(), "dmoe") != names.end();
    if (need_dmoe)
        check_trained(trained, cfg);
    const std::size_t k = cfg.trajectory.intervals.front().size();
    const EnvParams env{cfg.law, cfg.sigma_n};

    // The retraining baselines share one WMMSE-imitation starting point.
    std::vector<RetrainRun> retrain;
    RandomStream base(mix_seed(cfg.seed ^ 0x7eadULL));
    if (std::any_of(names.begin(), names.end(), [](const std::string& n) { return n.starts_with(teamdnn_prefix); })) {
        RandomStream init_rng = base.split();
        TrainConfig imitation = teamdnn_training;
        imitation.env = env;
        TeamDnnTeam start = make_teamdnn_team(k, cfg.p_max, init_rng);
        pretrain_to_wmmse(start, imitation, cfg.trajectory.intervals.front(), init_rng);
        for (std::size_t r : cfg.r_up)
            retrain.push_back({r, start, make_team_optimizers(start, teamdnn_training.rates.retrain),
                               RandomStream(mix_seed(cfg.seed ^ (0x3a11ULL + r)))});
    }

    std::vector<SlotResult> results;
    std::map<std::string, std::vector<double>> rates;
    for (std::size_t slot = 0; slot < cfg.trajectory.slots(); ++slot) {
        const QualityVector& quality = cfg.trajectory.quality_at_slot(slot);
        RandomStream eval = slot_stream(cfg.seed, slot);
        const std::vector<Sample> samples = sample_batch(quality, cfg.sigma_n, cfg.eval_realizations, eval, cfg.law);

        for (auto& run : retrain) {
            std::vector<Sample> slot_set;
            retrain_slot(run.team, SlotRetrainConfig{cfg.n_slot_train, run.r_up, cfg.retrain_batch}, quality, env,
                         slot_set, run.opt, run.rng);
        }

        rates.clear();
        for (const auto& name : names) {
            std::vector<PowerVector> powers;
            if (name == "dmoe") {
                powers = dmoe_powers(trained, samples);
            } else if (name == "wmmse_naive") {
                for (const auto& s : samples)
                    powers.push_back(naive_wmmse_team(s.observations, cfg.p_max));
            } else if (name == "tdma") {
                powers.assign(samples.size(), tdma_powers(k, slot, cfg.p_max));
            } else if (name == "oracle") {
                for (const auto& s : samples)
                    powers.push_back(perfect_csi_oracle(s.true_channel, cfg.p_max));
            } else {
                for (const auto& run : retrain)
                    if (name == std::string(teamdnn_prefix) + std::to_string(run.r_up))
                        powers = teamdnn_powers(run.team, samples);
            }
            const auto r = rates_of(samples, powers);
            const MeanEstimate m = mean_and_error(r);
            require(std::isfinite(m.mean) && std::isfinite(m.std_err), ErrorCode::non_finite,
                    "non-finite mean for " + name + " at slot " + std::to_string(slot + 1));
            results.push_back({slot + 1, slot / cfg.trajectory.slots_per_interval + 1, quality, name, m.mean, m.std_err});
        }
        if (progress)
            progress(slot + 1, cfg.trajectory.slots());
    }
    return results;
}

MeanEstimate trajectory_average(std::span<const SlotResult> results, std::string_view algorithm)
{
    double sum = 0.0, var = 0.0;
    std::size_t n = 0;
    for (const auto& r : results) {
        if (r.algorithm != algorithm)
            continue;
        sum += r.mean_sum_rate;
        var += r.std_err * r.std_err;
        ++n;
    }
    require(n > 0, ErrorCode::invalid_parameter, "no results for algorithm '" + std::string(algorithm) + "'");
    const double dn = static_cast<double>(n);
    return {sum / dn, std::sqrt(var) / dn};
}

std::vector<SweepPoint> sweep_sigma(const BenchConfig& base, std::span<const double> sigmas, const DmoeTeam& trained)
{
    require(!sigmas.empty(), ErrorCode::invalid_parameter, "sigma list is empty");
    std::vector<SweepPoint> out;
    for (double s : sigmas) {
        BenchConfig cfg = base;
        cfg.sigma_n = s;
        cfg.algorithms = {"dmoe"};
        const auto results = run_benchmark(cfg, trained, TrainConfig{});
        const MeanEstimate m = trajectory_average(results, "dmoe");
        out.push_back({s, m.mean, m.std_err});
    }
    return out;
}

void write_results_csv(std::ostream& os, std::span<const SlotResult> results)
{
    const std::size_t k = results.empty() ? 2 : results.front().quality.size();
    os << "slot,interval";
    for (std::size_t i = 0; i < k; ++i)
        os << ",gamma" << i + 1;
    os << ",algorithm,mean_sum_rate,std_err\n";
    for (const auto& r : results) {
        os << r.slot << ',' << r.interval;
        for (double g : r.quality.gammas)
            os << ',' << format_g6(g);
        os << ',' << r.algorithm << ',' << format_g6(r.mean_sum_rate) << ',' << format_g6(r.std_err) << '\n';
    }
    require(static_cast<bool>(os), ErrorCode::io, "failed writing results CSV");
}

void write_sweep_csv(std::ostream& os, std::span<const SweepPoint> points)
{
    os << sweep_csv_header << '\n';
    for (const auto& p : points)
        os << format_g6(p.sigma_n) << ',' << format_g6(p.mean_sum_rate) << ',' << format_g6(p.std_err) << '\n';
    require(static_cast<bool>(os), ErrorCode::io, "failed writing sweep CSV");
}

} // namespace tdmoe
