#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "tdmoe/env.hpp"
#include "tdmoe/net.hpp"
#include "tdmoe/rate.hpp"

namespace tdmoe {

/// Identifier written into policy bundles for the expert input layout:
/// the agent's CSI flattened row-major, followed by the quality estimate.
inline constexpr const char* expert_input_layout = "csi-row-major+quality-estimate/1";

struct DmoeArchitecture {
    std::vector<std::size_t> expert_hidden{10, 10, 10};
    std::vector<std::size_t> gating_hidden{10, 10};
};

/// One agent's mixture-of-experts power policy. Experts read (CSI, quality
/// estimate) and emit sigmoid * p_max; the gating net reads the quality
/// estimate only and emits softmax weights over the experts.
struct DmoePolicy {
    std::vector<MlpParams> experts;
    MlpParams gating;
    double p_max = 1.0;

    std::size_t n_experts() const noexcept { return experts.size(); }
    std::size_t agents() const noexcept { return gating.input_width(); }
    void validate() const;
};

/// One agent's plain Team-DNN policy: CSI only, sigmoid * p_max.
struct TeamDnnPolicy {
    MlpParams net;
    double p_max = 1.0;

    void validate() const;
};

template <class Policy>
struct TeamPolicySet {
    std::vector<Policy> members;

    std::size_t size() const noexcept { return members.size(); }
    Policy& operator[](std::size_t j) { return members[j]; }
    const Policy& operator[](std::size_t j) const { return members[j]; }
};

using DmoeTeam = TeamPolicySet<DmoePolicy>;
using TeamDnnTeam = TeamPolicySet<TeamDnnPolicy>;

DmoePolicy make_dmoe_policy(std::size_t k, std::size_t n_experts, double p_max, RandomStream& rng,
                            const DmoeArchitecture& arch = {});
DmoeTeam make_dmoe_team(std::size_t k, std::size_t n_experts, double p_max, RandomStream& rng,
                        const DmoeArchitecture& arch = {});
TeamDnnTeam make_teamdnn_team(std::size_t k, double p_max, RandomStream& rng,
                              const std::vector<std::size_t>& hidden = {10, 10, 10});

// Feature batches, one column per sample, for the given agent's observation.
Batch expert_inputs(std::span<const Sample> batch, std::size_t agent);
Batch csi_inputs(std::span<const Sample> batch, std::size_t agent);
Batch gating_inputs(std::span<const Sample> batch, std::size_t agent);

/// Sum_k expert_k(obs) * gate_k(quality estimate), in [0, p_max].
double dmoe_decide(const DmoePolicy& pol, const Observation& obs);
double teamdnn_decide(const TeamDnnPolicy& pol, const Observation& obs);

/// Per-sample powers of one agent over a batch.
std::vector<double> dmoe_decide_batch(const DmoePolicy& pol, std::span<const Sample> batch, std::size_t agent);
std::vector<double> teamdnn_decide_batch(const TeamDnnPolicy& pol, std::span<const Sample> batch,
                                         std::size_t agent);

/// Expert outputs (n_experts x batch, already scaled by p_max) and gating weights (n_experts x batch).
Batch expert_powers(const DmoePolicy& pol, std::span<const Sample> batch, std::size_t agent);
Batch gating_weights(const DmoePolicy& pol, std::span<const Sample> batch, std::size_t agent);

// ---------------------------------------------------------------------------
// Non-learned baselines

struct WmmseOptions {
    std::size_t max_iter = 200;
    double tol = 1e-6;
};

struct WmmseResult {
    PowerVector powers;
    std::size_t iterations = 0;
    bool converged = false;
    /// Weighted sum-MSE sum_i(w_i e_i - log w_i) after each iteration, if requested.
    std::vector<double> objective_trace;
};

/// Scalar WMMSE on amplitudes sqrt(g), started from full power.
WmmseResult wmmse_solve(const ChannelMatrix& g_hat, double p_max, const WmmseOptions& opts = {},
                        bool record_objective = false);

PowerVector wmmse_powers(const ChannelMatrix& g_hat, double p_max, std::size_t max_iter = 200, double tol = 1e-6);

/// Agent i solves WMMSE on its own CSI as if exact and keeps component i.
PowerVector naive_wmmse_team(std::span<const Observation> observations, double p_max, std::size_t max_iter = 200,
                             double tol = 1e-6);

/// Round-robin: transmitter (slot mod k) at p_max, the rest silent.
PowerVector tdma_powers(std::size_t k, std::size_t slot_index, double p_max);

/// Genie TDMA: the transmitter with the largest true direct gain (lowest index on ties).
PowerVector tdma_genie_powers(const ChannelMatrix& g, double p_max);

inline constexpr std::size_t oracle_max_users = 3;

/// Exhaustive search over {0, d, ..., p_max}^K plus {0, p_max}^K for the
/// sum-rate maximizer on the true channel; ties go to the lexicographically
/// smallest vector.
PowerVector perfect_csi_oracle(const ChannelMatrix& g, double p_max, std::size_t grid_points = 101);

// ---------------------------------------------------------------------------
// Bundle serialization: manifest lines plus one mlp block per network.

void write_policy_bundle(std::ostream& os, const DmoeTeam& team);
DmoeTeam read_dmoe_bundle(std::istream& is);
void write_policy_bundle(std::ostream& os, const TeamDnnTeam& team);
TeamDnnTeam read_teamdnn_bundle(std::istream& is);

void save_policy_bundle(const std::filesystem::path& path, const DmoeTeam& team);
DmoeTeam load_dmoe_bundle(const std::filesystem::path& path);

} // namespace tdmoe
