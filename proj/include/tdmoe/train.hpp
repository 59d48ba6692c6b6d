#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tdmoe/env.hpp"
#include "tdmoe/net.hpp"
#include "tdmoe/policies.hpp"

namespace tdmoe {

struct PhaseRates {
    double expert_init = 1e-3; ///< regime-specialized expert pretraining
    double expert = 3e-6;      ///< expert blocks of the alternation
    double gating = 3e-2;      ///< gating blocks of the alternation
    double imitation = 3e-3;   ///< regression onto WMMSE (Team-DNN and expert warm start)
    double retrain = 1e-3;     ///< per-slot Team-DNN updates
};

struct TrainConfig {
    std::size_t n_train = 100000;
    std::size_t total_updates = 8000;
    std::size_t batch_size = 1000;
    std::size_t alt_block = 50;
    std::size_t init_updates = 1000;
    /// WMMSE-regression steps that warm-start each CSI-using expert before
    /// its team ascent. 0 disables.
    std::size_t init_imitation_updates = 300;
    std::size_t imitation_updates = 2000;
    /// Checkpoint callback period in updates during train_dmoe; 0 disables.
    std::size_t checkpoint_every = 0;
    std::size_t k = 2;
    std::size_t n_experts = 2;
    double p_max = 10.0;
    /// Gaussian kernel width, in quality-estimate units, used to smooth the
    /// gating labels over the training set. 0 gives raw per-sample labels.
    double label_bandwidth = 0.1;
    /// Logit of the initial power fraction given to the blind expert: agent 0
    /// starts near sigmoid(+b) * p_max, the others near sigmoid(-b) * p_max.
    double blind_expert_bias = 2.197224577336219;
    PhaseRates rates;
    EnvParams env;
    std::uint64_t seed = 1;

    void validate() const;

    /// Reduced budget for laptop runs: 20000 samples, 2000 updates.
    static TrainConfig desk_scale();
};

struct SlotRetrainConfig {
    std::size_t n_slot_train = 30000;
    std::size_t r_up = 10; ///< 0 leaves the team untouched
    std::size_t batch_size = 1000;

    void validate() const;
};

using TeamOptimizers = std::vector<OptimizerState>;

/// Optimizer state for a whole DMoE team: experts[e][agent] and gating[agent].
struct DmoeOptimizers {
    std::vector<TeamOptimizers> experts;
    TeamOptimizers gating;
};

TeamOptimizers make_team_optimizers(const TeamDnnTeam& team, double learning_rate);
DmoeOptimizers make_dmoe_optimizers(const DmoeTeam& team, double expert_rate, double gating_rate);

/// Mean true-channel sum-rate of a batch and its gradient with respect to
/// every agent's network parameters.
struct TeamGradient {
    double value = 0.0;
    std::vector<MlpGrads> grads; ///< one per agent
};

TeamGradient teamdnn_utility_gradient(const TeamDnnTeam& team, std::span<const Sample> batch);
TeamGradient expert_utility_gradient(const DmoeTeam& team, std::size_t expert, std::span<const Sample> batch);

/// Gradient of the mean sum-rate of the soft mixture, as executed at inference.
struct MixtureGradient {
    double value = 0.0;
    std::vector<std::vector<MlpGrads>> experts; ///< [agent][expert]
    std::vector<MlpGrads> gating;               ///< [agent]
};

MixtureGradient mixture_utility_gradient(const DmoeTeam& team, std::span<const Sample> batch);

/// One ascent step on the mean sum-rate for every agent; returns the pre-update value.
double team_sumrate_step(TeamDnnTeam& team, std::span<const Sample> batch, TeamOptimizers& opt);
double expert_team_step(DmoeTeam& team, std::size_t expert, std::span<const Sample> batch, TeamOptimizers& opt);

/// Expert 0 trained as a team at quality all-ones, expert 1 at all-zeros,
/// init_updates steps each on fresh samples. The blind expert starts from a
/// biased operating point, the others from a short WMMSE regression. Gating
/// nets are not touched.
void pretrain_experts(DmoeTeam& team, const TrainConfig& cfg, DmoeOptimizers& opt, RandomStream& rng);

/// Joint-team label per sample: the expert index whose team achieves the
/// highest true sum-rate, lowest index on ties.
std::vector<std::size_t> gating_labels(const DmoeTeam& team, std::span<const Sample> batch);

/// As gating_labels, but each expert's score is the kernel-weighted mean of
/// its per-sample sum-rates over all of `samples`, with Gaussian weights on
/// the distance between quality estimates (binned on a grid of bandwidth/4
/// cells). bandwidth 0 reduces to gating_labels.
std::vector<std::size_t> smoothed_gating_labels(const DmoeTeam& team, std::span<const Sample> batch,
                                                double bandwidth);

/// Cross-entropy descent step for every agent's gating net; returns the
/// pre-update mean cross-entropy in nats.
double gating_step(DmoeTeam& team, std::span<const Sample> batch, std::span<const std::size_t> labels,
                   DmoeOptimizers& opt);

/// Expert index routed for each sample: argmax of the agents' summed gating
/// outputs, lowest index on ties.
std::vector<std::size_t> route_samples(const DmoeTeam& team, std::span<const Sample> batch);

enum class TrainPhase { expert, gating };

const char* to_string(TrainPhase phase) noexcept;

struct TrainRecord {
    std::size_t update = 0;
    TrainPhase phase = TrainPhase::expert;
    double objective = 0.0; ///< mean sum-rate for expert steps, cross-entropy for gating steps
    std::vector<std::size_t> routed; ///< per-expert sub-batch sizes (expert steps only)
    std::size_t skipped_experts = 0;
};

struct TrainLog {
    std::size_t n_experts = 0;
    std::vector<TrainRecord> records;
};

void write_train_log_csv(std::ostream& os, const TrainLog& log);

struct DmoeTrainResult {
    DmoeTeam team;
    TrainLog log;
};

/// Receives the number of completed updates and the current team.
using CheckpointFn = std::function<void(std::size_t, const DmoeTeam&)>;

DmoeTrainResult train_dmoe(const TrainConfig& cfg, RandomStream& rng, const CheckpointFn& checkpoint = {});

/// Regression of each agent's power onto its own component of WMMSE solved on
/// its CSI, imitation_updates steps on fresh samples. Returns the mean squared
/// error of the last step, measured before that step's update.
double pretrain_to_wmmse(TeamDnnTeam& team, const TrainConfig& cfg, const QualityVector& quality,
                         RandomStream& rng);

/// Draws a fresh slot set when `slot_set` is empty, then applies exactly
/// r_up team steps on batches drawn from it.
void retrain_slot(TeamDnnTeam& team, const SlotRetrainConfig& cfg, const QualityVector& quality,
                  const EnvParams& env, std::vector<Sample>& slot_set, TeamOptimizers& opt, RandomStream& rng);

/// Mean true sum-rate of a team over a sample set.
double mean_team_rate(const DmoeTeam& team, std::span<const Sample> batch);
double mean_team_rate(const TeamDnnTeam& team, std::span<const Sample> batch);
double mean_expert_team_rate(const DmoeTeam& team, std::size_t expert, std::span<const Sample> batch);

} // namespace tdmoe
