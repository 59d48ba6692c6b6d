#include "tdmoe/policies.hpp"

#include <cmath>
#include <string>

#include "tdmoe/error.hpp"

namespace tdmoe {
namespace {

void check_observation(const Observation& obs, std::size_t k)
{
    require(obs.csi.size() == k && obs.quality_estimate.size() == k, ErrorCode::shape_mismatch,
            "observation dimensions do not match policy (K=" + std::to_string(k) + ")");
    require(obs.csi.all_finite(), ErrorCode::non_finite, "observation CSI is not finite");
    for (double v : obs.quality_estimate.values)
        require(std::isfinite(v), ErrorCode::non_finite, "quality estimate is not finite");
}

void check_batch(std::span<const Sample> batch, std::size_t agent)
{
    require(!batch.empty(), ErrorCode::empty_batch, "empty batch");
    for (const auto& s : batch)
        require(agent < s.observations.size(), ErrorCode::shape_mismatch, "agent index out of range");
}

MlpParams make_net(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Activation last,
                   RandomStream& rng)
{
    std::vector<std::size_t> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    std::vector<Activation> acts(hidden.size(), Activation::relu);
    acts.push_back(last);
    return init_mlp(sizes, acts, rng);
}

} // namespace

void DmoePolicy::validate() const
{
    require(!experts.empty(), ErrorCode::shape_mismatch, "dmoe policy has no experts");
    require(p_max > 0.0 && std::isfinite(p_max), ErrorCode::invalid_parameter, "p_max must be positive");
    gating.validate();
    const std::size_t k = gating.input_width();
    require(gating.output_width() == experts.size(), ErrorCode::shape_mismatch,
            "gating output width must equal the number of experts");
    require(gating.layers.back().activation == Activation::softmax, ErrorCode::shape_mismatch,
            "gating must end in softmax");
    for (const auto& e : experts) {
        e.validate();
        require(e.input_width() == k * k + k && e.output_width() == 1, ErrorCode::shape_mismatch,
                "expert shape must be (K^2+K) -> 1");
        require(e.layers.back().activation == Activation::sigmoid, ErrorCode::shape_mismatch,
                "expert must end in sigmoid");
    }
}

void TeamDnnPolicy::validate() const
{
    require(p_max > 0.0 && std::isfinite(p_max), ErrorCode::invalid_parameter, "p_max must be positive");
    net.validate();
    require(net.output_width() == 1 && net.layers.back().activation == Activation::sigmoid,
            ErrorCode::shape_mismatch, "team-dnn net must end in a single sigmoid");
}

DmoePolicy make_dmoe_policy(std::size_t k, std::size_t n_experts, double p_max, RandomStream& rng,
                            const DmoeArchitecture& arch)
{
    require(k >= 1, ErrorCode::invalid_dimension, "k must be >= 1");
    require(n_experts >= 1, ErrorCode::invalid_parameter, "need at least one expert");
    DmoePolicy pol;
    pol.p_max = p_max;
    for (std::size_t e = 0; e < n_experts; ++e)
        pol.experts.push_back(make_net(k * k + k, arch.expert_hidden, 1, Activation::sigmoid, rng));
    pol.gating = make_net(k, arch.gating_hidden, n_experts, Activation::softmax, rng);
    pol.validate();
    return pol;
}

DmoeTeam make_dmoe_team(std::size_t k, std::size_t n_experts, double p_max, RandomStream& rng,
                        const DmoeArchitecture& arch)
{
    DmoeTeam team;
    for (std::size_t j = 0; j < k; ++j)
        team.members.push_back(make_dmoe_policy(k, n_experts, p_max, rng, arch));
    return team;
}

TeamDnnTeam make_teamdnn_team(std::size_t k, double p_max, RandomStream& rng, const std::vector<std::size_t>& hidden)
{
    require(k >= 1, ErrorCode::invalid_dimension, "k must be >= 1");
    TeamDnnTeam team;
    for (std::size_t j = 0; j < k; ++j) {
        TeamDnnPolicy pol;
        pol.p_max = p_max;
        pol.net = make_net(k * k, hidden, 1, Activation::sigmoid, rng);
        pol.validate();
        team.members.push_back(std::move(pol));
    }
    return team;
}

Batch expert_inputs(std::span<const Sample> batch, std::size_t agent)
{
    check_batch(batch, agent);
    const std::size_t k = batch.front().observations[agent].csi.size();
    Batch x(static_cast<Eigen::Index>(k * k + k), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t c = 0; c < batch.size(); ++c) {
        const Observation& obs = batch[c].observations[agent];
        check_observation(obs, k);
        const auto e = obs.csi.entries();
        for (std::size_t n = 0; n < k * k; ++n)
            x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c)) = e[n];
        for (std::size_t n = 0; n < k; ++n)
            x(static_cast<Eigen::Index>(k * k + n), static_cast<Eigen::Index>(c)) = obs.quality_estimate.values[n];
    }
    return x;
}

Batch csi_inputs(std::span<const Sample> batch, std::size_t agent)
{
    check_batch(batch, agent);
    const std::size_t k = batch.front().observations[agent].csi.size();
    Batch x(static_cast<Eigen::Index>(k * k), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t c = 0; c < batch.size(); ++c) {
        const Observation& obs = batch[c].observations[agent];
        check_observation(obs, k);
        const auto e = obs.csi.entries();
        for (std::size_t n = 0; n < k * k; ++n)
            x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c)) = e[n];
    }
    return x;
}

Batch gating_inputs(std::span<const Sample> batch, std::size_t agent)
{
    check_batch(batch, agent);
    const std::size_t k = batch.front().observations[agent].csi.size();
    Batch x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t c = 0; c < batch.size(); ++c) {
        const Observation& obs = batch[c].observations[agent];
        check_observation(obs, k);
        for (std::size_t n = 0; n < k; ++n)
            x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c)) = obs.quality_estimate.values[n];
    }
    return x;
}

Batch expert_powers(const DmoePolicy& pol, std::span<const Sample> batch, std::size_t agent)
{
    const Batch x = expert_inputs(batch, agent);
    Batch out(static_cast<Eigen::Index>(pol.n_experts()), x.cols());
    for (std::size_t e = 0; e < pol.n_experts(); ++e)
        out.row(static_cast<Eigen::Index>(e)) = pol.p_max * forward(pol.experts[e], x).row(0);
    return out;
}

Batch gating_weights(const DmoePolicy& pol, std::span<const Sample> batch, std::size_t agent)
{
    return forward(pol.gating, gating_inputs(batch, agent));
}

std::vector<double> dmoe_decide_batch(const DmoePolicy& pol, std::span<const Sample> batch, std::size_t agent)
{
    const Batch powers = expert_powers(pol, batch, agent);
    const Batch weights = gating_weights(pol, batch, agent);
    std::vector<double> out(batch.size());
    for (std::size_t c = 0; c < batch.size(); ++c) {
        const auto col = static_cast<Eigen::Index>(c);
        // Convex combination of values in [0, p_max]; clamp guards the last ulp.
        out[c] = std::min(pol.p_max, std::max(0.0, powers.col(col).dot(weights.col(col))));
    }
    return out;
}

std::vector<double> teamdnn_decide_batch(const TeamDnnPolicy& pol, std::span<const Sample> batch, std::size_t agent)
{
    const Batch y = forward(pol.net, csi_inputs(batch, agent));
    std::vector<double> out(batch.size());
    for (std::size_t c = 0; c < batch.size(); ++c)
        out[c] = std::min(pol.p_max, pol.p_max * y(0, static_cast<Eigen::Index>(c)));
    return out;
}

double dmoe_decide(const DmoePolicy& pol, const Observation& obs)
{
    const std::size_t k = pol.agents();
    check_observation(obs, k);
    Sample s;
    s.observations = {obs};
    return dmoe_decide_batch(pol, std::span<const Sample>(&s, 1), 0).front();
}

double teamdnn_decide(const TeamDnnPolicy& pol, const Observation& obs)
{
    const auto k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(pol.net.input_width()))));
    check_observation(obs, k);
    Sample s;
    s.observations = {obs};
    return teamdnn_decide_batch(pol, std::span<const Sample>(&s, 1), 0).front();
}

} // namespace tdmoe
