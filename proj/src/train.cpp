#include "tdmoe/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "text_io.hpp"
#include "tdmoe/error.hpp"
#include "tdmoe/rate.hpp"

namespace tdmoe {
namespace {

constexpr double prob_floor = 1e-300;

// Shuffled passes over a fixed sample set.
class BatchCursor {
public:
    BatchCursor(std::size_t n, RandomStream& rng) : order_(n), rng_(rng)
    {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        shuffle();
    }

    std::span<const std::size_t> next(std::size_t batch_size)
    {
        if (pos_ + batch_size > order_.size())
            shuffle();
        pos_ += batch_size;
        return std::span<const std::size_t>(order_).subspan(pos_ - batch_size, batch_size);
    }

private:
    void shuffle()
    {
        for (std::size_t i = order_.size(); i > 1; --i)
            std::swap(order_[i - 1], order_[rng_.index_below(i)]);
        pos_ = 0;
    }

    std::vector<std::size_t> order_;
    RandomStream& rng_;
    std::size_t pos_ = 0;
};

void check_team_batch(std::span<const Sample> batch, std::size_t k)
{
    require(!batch.empty(), ErrorCode::empty_batch, "training batch is empty");
    for (const auto& s : batch)
        require(s.size() == k && s.observations.size() == k, ErrorCode::shape_mismatch,
                "sample dimensions do not match the team size");
}

// Every agent's net emits y in (0,1) and transmits p_max * y. Returns the mean
// true sum-rate and the per-agent parameter gradients of that mean.
TeamGradient sigmoid_team_gradient(std::span<const MlpParams* const> nets, std::span<const Batch> inputs,
                                   double p_max, std::span<const Sample> batch)
{
    const std::size_t k = nets.size();
    const std::size_t n = batch.size();
    const auto cols = static_cast<Eigen::Index>(n);
    std::vector<ForwardCache> caches(k);
    std::vector<Batch> out(k), out_grad(k, Batch(1, cols));
    for (std::size_t j = 0; j < k; ++j)
        out[j] = forward(*nets[j], inputs[j], &caches[j]);

    TeamGradient tg;
    std::vector<double> p(k), grad(k);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c) {
        const auto col = static_cast<Eigen::Index>(c);
        for (std::size_t j = 0; j < k; ++j)
            p[j] = p_max * out[j](0, col);
        tg.value += sum_rate_with_grad(batch[c].true_channel, p, grad);
        for (std::size_t j = 0; j < k; ++j)
            out_grad[j](0, col) = grad[j] * p_max * inv_n;
    }
    tg.value *= inv_n;
    for (std::size_t j = 0; j < k; ++j)
        tg.grads.push_back(backward(*nets[j], caches[j], out_grad[j]).grads);
    return tg;
}

double apply_team_ascent(std::span<MlpParams* const> nets, const TeamGradient& tg, TeamOptimizers& opt)
{
    require(opt.size() == nets.size(), ErrorCode::shape_mismatch, "one optimizer state per agent is required");
    // Check everything before touching any agent so a bad batch leaves the team intact.
    for (const auto& g : tg.grads)
        require(g.all_finite(), ErrorCode::non_finite, "non-finite gradient in team step");
    for (std::size_t j = 0; j < nets.size(); ++j)
        optimizer_step(*nets[j], tg.grads[j], opt[j], Direction::ascend);
    return tg.value;
}

std::vector<const MlpParams*> expert_nets(const DmoeTeam& team, std::size_t expert)
{
    std::vector<const MlpParams*> nets;
    for (const auto& m : team.members) {
        require(expert < m.n_experts(), ErrorCode::shape_mismatch, "expert index out of range");
        nets.push_back(&m.experts[expert]);
    }
    return nets;
}

std::vector<Batch> per_agent(std::span<const Sample> batch, std::size_t k,
                             Batch (*build)(std::span<const Sample>, std::size_t))
{
    std::vector<Batch> x;
    for (std::size_t j = 0; j < k; ++j)
        x.push_back(build(batch, j));
    return x;
}

// Team sum-rate per sample when every agent uses expert e; [sample][expert].
std::vector<std::vector<double>> expert_team_rates(const DmoeTeam& team, std::span<const Sample> batch)
{
    const std::size_t k = team.size();
    const std::size_t n_exp = team[0].n_experts();
    std::vector<Batch> powers;
    for (std::size_t j = 0; j < k; ++j)
        powers.push_back(expert_powers(team[j], batch, j));
    std::vector<std::vector<double>> rates(batch.size(), std::vector<double>(n_exp));
    std::vector<double> p(k);
    for (std::size_t c = 0; c < batch.size(); ++c) {
        for (std::size_t e = 0; e < n_exp; ++e) {
            for (std::size_t j = 0; j < k; ++j)
                p[j] = powers[j](static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c));
            rates[c][e] = sum_rate(batch[c].true_channel, p);
        }
    }
    return rates;
}

std::size_t argmax_lowest(std::span<const double> v)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best])
            best = i;
    return best;
}

void check_dmoe_team(const DmoeTeam& team)
{
    require(team.size() >= 1, ErrorCode::shape_mismatch, "team is empty");
    for (const auto& m : team.members) {
        m.validate();
        require(m.agents() == team.size(), ErrorCode::shape_mismatch, "policy width does not match team size");
        require(m.n_experts() == team[0].n_experts(), ErrorCode::shape_mismatch, "agents disagree on expert count");
    }
}

// One descent step on the mean squared distance between each agent's power
// and its own component of WMMSE solved on that agent's CSI. Returns the
// pre-update loss averaged over agents.
double wmmse_imitation_step(std::span<MlpParams* const> nets, std::span<const Batch> inputs,
                            std::span<const Sample> batch, double p_max, TeamOptimizers& opt)
{
    const std::size_t k = nets.size();
    const auto cols = static_cast<Eigen::Index>(batch.size());
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    std::vector<MlpGrads> grads;
    double loss = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        ForwardCache cache;
        const Batch y = forward(*nets[j], inputs[j], &cache);
        Batch dy(1, cols);
        for (std::size_t c = 0; c < batch.size(); ++c) {
            const auto col = static_cast<Eigen::Index>(c);
            const double target = wmmse_powers(batch[c].observations[j].csi, p_max)[j];
            const double err = p_max * y(0, col) - target;
            loss += err * err * inv_n;
            dy(0, col) = 2.0 * err * p_max * inv_n;
        }
        grads.push_back(backward(*nets[j], cache, dy).grads);
    }
    for (const auto& g : grads)
        require(g.all_finite(), ErrorCode::non_finite, "non-finite gradient in imitation step");
    for (std::size_t j = 0; j < k; ++j)
        optimizer_step(*nets[j], grads[j], opt[j], Direction::descend);
    return loss / static_cast<double>(k);
}

// Pushes the blind expert's output layer towards a fixed operating point:
// agent 0 near full power, everyone else near silence.
void bias_blind_expert(DmoeTeam& team, std::size_t expert, double bias)
{
    for (std::size_t j = 0; j < team.size(); ++j) {
        DenseLayer& last = team[j].experts[expert].layers.back();
        last.weight *= 0.1;
        last.bias.setConstant(j == 0 ? bias : -bias);
    }
}

} // namespace

void TrainConfig::validate() const
{
    for (std::size_t c : {n_train, total_updates, batch_size, alt_block, init_updates, imitation_updates})
        require(c >= 1, ErrorCode::config, "training counts must be >= 1");
    require(batch_size <= n_train, ErrorCode::config, "batch_size must not exceed n_train");
    require(k >= 1, ErrorCode::config, "k must be >= 1");
    require(n_experts >= 1, ErrorCode::config, "n_experts must be >= 1");
    require(p_max > 0.0 && std::isfinite(p_max), ErrorCode::config, "p_max must be positive");
    require(label_bandwidth >= 0.0 && std::isfinite(label_bandwidth), ErrorCode::config,
            "label_bandwidth must be >= 0");
    require(std::isfinite(blind_expert_bias), ErrorCode::config, "blind_expert_bias must be finite");
    for (double r : {rates.expert_init, rates.expert, rates.gating, rates.imitation, rates.retrain})
        require(r > 0.0 && std::isfinite(r), ErrorCode::config, "learning rates must be positive");
    require(env.sigma_n >= 0.0 && std::isfinite(env.sigma_n), ErrorCode::config, "sigma_n must be >= 0");
    env.law.validate();
}

TrainConfig TrainConfig::desk_scale()
{
    TrainConfig cfg;
    cfg.n_train = 20000;
    cfg.total_updates = 2000;
    return cfg;
}

void SlotRetrainConfig::validate() const
{
    require(n_slot_train >= 1 && batch_size >= 1, ErrorCode::config, "slot set and batch sizes must be >= 1");
    require(batch_size <= n_slot_train, ErrorCode::config, "batch_size must not exceed n_slot_train");
}

TeamOptimizers make_team_optimizers(const TeamDnnTeam& team, double learning_rate)
{
    TeamOptimizers opt;
    for (const auto& m : team.members)
        opt.push_back(make_optimizer_state(m.net, OptimizerConfig{.learning_rate = learning_rate}));
    return opt;
}

DmoeOptimizers make_dmoe_optimizers(const DmoeTeam& team, double expert_rate, double gating_rate)
{
    check_dmoe_team(team);
    DmoeOptimizers opt;
    opt.experts.resize(team[0].n_experts());
    for (std::size_t e = 0; e < opt.experts.size(); ++e)
        for (const auto& m : team.members)
            opt.experts[e].push_back(make_optimizer_state(m.experts[e], OptimizerConfig{.learning_rate = expert_rate}));
    for (const auto& m : team.members)
        opt.gating.push_back(make_optimizer_state(m.gating, OptimizerConfig{.learning_rate = gating_rate}));
    return opt;
}

TeamGradient teamdnn_utility_gradient(const TeamDnnTeam& team, std::span<const Sample> batch)
{
    require(team.size() >= 1, ErrorCode::shape_mismatch, "team is empty");
    check_team_batch(batch, team.size());
    std::vector<const MlpParams*> nets;
    for (const auto& m : team.members) {
        m.validate();
        require(m.p_max == team[0].p_max, ErrorCode::shape_mismatch, "agents disagree on p_max");
        nets.push_back(&m.net);
    }
    const auto x = per_agent(batch, team.size(), csi_inputs);
    return sigmoid_team_gradient(nets, x, team[0].p_max, batch);
}

TeamGradient expert_utility_gradient(const DmoeTeam& team, std::size_t expert, std::span<const Sample> batch)
{
    check_dmoe_team(team);
    check_team_batch(batch, team.size());
    const auto nets = expert_nets(team, expert);
    const auto x = per_agent(batch, team.size(), expert_inputs);
    return sigmoid_team_gradient(nets, x, team[0].p_max, batch);
}

MixtureGradient mixture_utility_gradient(const DmoeTeam& team, std::span<const Sample> batch)
{
    check_dmoe_team(team);
    check_team_batch(batch, team.size());
    const std::size_t k = team.size();
    const std::size_t n_exp = team[0].n_experts();
    const std::size_t n = batch.size();
    const auto cols = static_cast<Eigen::Index>(n);

    std::vector<std::vector<ForwardCache>> e_cache(k, std::vector<ForwardCache>(n_exp));
    std::vector<ForwardCache> g_cache(k);
    std::vector<Batch> y(k, Batch(static_cast<Eigen::Index>(n_exp), cols)), w(k);
    for (std::size_t j = 0; j < k; ++j) {
        const Batch xe = expert_inputs(batch, j);
        for (std::size_t e = 0; e < n_exp; ++e)
            y[j].row(static_cast<Eigen::Index>(e)) = forward(team[j].experts[e], xe, &e_cache[j][e]).row(0);
        w[j] = forward(team[j].gating, gating_inputs(batch, j), &g_cache[j]);
    }

    MixtureGradient mg;
    std::vector<Batch> dp(k, Batch(1, cols));
    std::vector<double> p(k), grad(k);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c) {
        const auto col = static_cast<Eigen::Index>(c);
        for (std::size_t j = 0; j < k; ++j)
            p[j] = team[j].p_max * y[j].col(col).dot(w[j].col(col));
        mg.value += sum_rate_with_grad(batch[c].true_channel, p, grad);
        for (std::size_t j = 0; j < k; ++j)
            dp[j](0, col) = grad[j] * inv_n;
    }
    mg.value *= inv_n;

    mg.experts.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        const double pm = team[j].p_max;
        for (std::size_t e = 0; e < n_exp; ++e) {
            const Batch dy = (dp[j].array() * w[j].row(static_cast<Eigen::Index>(e)).array() * pm).matrix();
            mg.experts[j].push_back(backward(team[j].experts[e], e_cache[j][e], dy).grads);
        }
        Batch dw(static_cast<Eigen::Index>(n_exp), cols);
        for (std::size_t e = 0; e < n_exp; ++e)
            dw.row(static_cast<Eigen::Index>(e)) =
                (dp[j].array() * y[j].row(static_cast<Eigen::Index>(e)).array() * pm).matrix();
        mg.gating.push_back(backward(team[j].gating, g_cache[j], dw).grads);
    }
    return mg;
}

double team_sumrate_step(TeamDnnTeam& team, std::span<const Sample> batch, TeamOptimizers& opt)
{
    const TeamGradient tg = teamdnn_utility_gradient(team, batch);
    std::vector<MlpParams*> nets;
    for (auto& m : team.members)
        nets.push_back(&m.net);
    return apply_team_ascent(nets, tg, opt);
}

double expert_team_step(DmoeTeam& team, std::size_t expert, std::span<const Sample> batch, TeamOptimizers& opt)
{
    const TeamGradient tg = expert_utility_gradient(team, expert, batch);
    std::vector<MlpParams*> nets;
    for (auto& m : team.members)
        nets.push_back(&m.experts[expert]);
    return apply_team_ascent(nets, tg, opt);
}

void pretrain_experts(DmoeTeam& team, const TrainConfig& cfg, DmoeOptimizers& opt, RandomStream& rng)
{
    check_dmoe_team(team);
    const std::size_t k = team.size();
    const std::size_t n_exp = team[0].n_experts();
    require(opt.experts.size() == n_exp, ErrorCode::shape_mismatch, "optimizer/expert count mismatch");
    // Expert e is specialized at uniform quality 1 - e / (n_exp - 1): expert 0
    // sees exact CSI and the last expert sees none.
    for (std::size_t e = 0; e < n_exp; ++e) {
        const double q = n_exp == 1 ? 1.0 : 1.0 - static_cast<double>(e) / static_cast<double>(n_exp - 1);
        const QualityVector quality{std::vector<double>(k, q)};
        std::vector<MlpParams*> nets;
        for (auto& m : team.members)
            nets.push_back(&m.experts[e]);

        if (n_exp > 1 && e == n_exp - 1 && cfg.blind_expert_bias != 0.0) {
            bias_blind_expert(team, e, cfg.blind_expert_bias);
        } else if (cfg.init_imitation_updates > 0) {
            // Team ascent from a random start tends to lock an agent into a
            // saturated always-on or always-off output. A short regression onto
            // WMMSE gives every agent a CSI-responsive start instead.
            TeamOptimizers warm;
            for (const auto* n : nets)
                warm.push_back(make_optimizer_state(*n, OptimizerConfig{.learning_rate = cfg.rates.imitation}));
            for (std::size_t s = 0; s < cfg.init_imitation_updates; ++s) {
                const auto batch = sample_batch(quality, cfg.env.sigma_n, cfg.batch_size, rng, cfg.env.law);
                wmmse_imitation_step(nets, per_agent(batch, k, expert_inputs), batch, team[0].p_max, warm);
            }
        }

        for (auto& st : opt.experts[e])
            st.config.learning_rate = cfg.rates.expert_init;
        for (std::size_t s = 0; s < cfg.init_updates; ++s) {
            const auto batch = sample_batch(quality, cfg.env.sigma_n, cfg.batch_size, rng, cfg.env.law);
            expert_team_step(team, e, batch, opt.experts[e]);
        }
    }
}

std::vector<std::size_t> gating_labels(const DmoeTeam& team, std::span<const Sample> batch)
{
    return smoothed_gating_labels(team, batch, 0.0);
}

std::vector<std::size_t> smoothed_gating_labels(const DmoeTeam& team, std::span<const Sample> samples,
                                                double bandwidth)
{
    check_dmoe_team(team);
    check_team_batch(samples, team.size());
    require(bandwidth >= 0.0 && std::isfinite(bandwidth), ErrorCode::invalid_parameter, "bandwidth must be >= 0");
    const auto rates = expert_team_rates(team, samples);
    const std::size_t n = samples.size();
    std::vector<std::size_t> labels(n);
    if (bandwidth == 0.0) {
        for (std::size_t c = 0; c < n; ++c)
            labels[c] = argmax_lowest(rates[c]);
        return labels;
    }

    // Kernel regression of each expert's rate on the quality estimate,
    // evaluated on a regular grid: rates are binned, then blurred with a
    // separable Gaussian truncated at 4 bandwidths. The estimate is common to
    // all agents, so agent 0's copy is used.
    const std::size_t n_exp = team[0].n_experts();
    const std::size_t dims = team.size();
    constexpr std::size_t max_cells = std::size_t{1} << 22;
    std::vector<double> lo(dims, std::numeric_limits<double>::infinity());
    std::vector<double> hi(dims, -std::numeric_limits<double>::infinity());
    for (const auto& s : samples)
        for (std::size_t d = 0; d < dims; ++d) {
            const double v = s.observations[0].quality_estimate.values[d];
            lo[d] = std::min(lo[d], v);
            hi[d] = std::max(hi[d], v);
        }
    double cell = bandwidth / 4.0;
    std::vector<std::size_t> extent(dims);
    for (;;) {
        std::size_t total = 1;
        for (std::size_t d = 0; d < dims; ++d) {
            extent[d] = static_cast<std::size_t>((hi[d] - lo[d]) / cell) + 1;
            total = total > max_cells / extent[d] ? max_cells + 1 : total * extent[d];
        }
        if (total <= max_cells)
            break;
        cell *= 2.0;
    }
    std::vector<std::size_t> stride(dims, 1);
    for (std::size_t d = dims - 1; d > 0; --d)
        stride[d - 1] = stride[d] * extent[d];
    const std::size_t cells = stride[0] * extent[0];

    std::vector<std::size_t> cell_of(n);
    std::vector<double> field(cells * n_exp, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t idx = 0;
        for (std::size_t d = 0; d < dims; ++d) {
            const double v = samples[c].observations[0].quality_estimate.values[d];
            const auto b = std::min(extent[d] - 1, static_cast<std::size_t>((v - lo[d]) / cell));
            idx += b * stride[d];
        }
        cell_of[c] = idx;
        for (std::size_t e = 0; e < n_exp; ++e)
            field[idx * n_exp + e] += rates[c][e];
    }

    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * bandwidth / cell));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
        const double x = static_cast<double>(t) * cell / bandwidth;
        taps[static_cast<std::size_t>(t + radius)] = std::exp(-0.5 * x * x);
    }
    std::vector<double> blurred(field.size());
    for (std::size_t d = 0; d < dims; ++d) {
        std::fill(blurred.begin(), blurred.end(), 0.0);
        const auto ext = static_cast<std::ptrdiff_t>(extent[d]);
        const auto step = static_cast<std::ptrdiff_t>(stride[d]);
        for (std::size_t idx = 0; idx < cells; ++idx) {
            const auto pos = static_cast<std::ptrdiff_t>((idx / stride[d]) % extent[d]);
            for (std::ptrdiff_t t = std::max(-radius, -pos); t <= std::min(radius, ext - 1 - pos); ++t) {
                const auto src = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(idx) + t * step);
                const double w = taps[static_cast<std::size_t>(t + radius)];
                for (std::size_t e = 0; e < n_exp; ++e)
                    blurred[idx * n_exp + e] += w * field[src * n_exp + e];
            }
        }
        field.swap(blurred);
    }
    for (std::size_t c = 0; c < n; ++c)
        labels[c] = argmax_lowest(std::span<const double>(field).subspan(cell_of[c] * n_exp, n_exp));
    return labels;
}

double gating_step(DmoeTeam& team, std::span<const Sample> batch, std::span<const std::size_t> labels,
                   DmoeOptimizers& opt)
{
    check_dmoe_team(team);
    check_team_batch(batch, team.size());
    require(labels.size() == batch.size(), ErrorCode::shape_mismatch, "one label per sample is required");
    require(opt.gating.size() == team.size(), ErrorCode::shape_mismatch, "one gating optimizer per agent is required");
    const std::size_t n_exp = team[0].n_experts();
    for (std::size_t l : labels)
        require(l < n_exp, ErrorCode::invalid_parameter, "label out of range");

    const std::size_t n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<MlpGrads> grads;
    double ce_total = 0.0;
    for (std::size_t j = 0; j < team.size(); ++j) {
        ForwardCache cache;
        const Batch w = forward(team[j].gating, gating_inputs(batch, j), &cache);
        const Batch& logits = cache.pre.back();
        Batch dw = Batch::Zero(w.rows(), w.cols());
        double ce = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            const auto col = static_cast<Eigen::Index>(c);
            const auto lab = static_cast<Eigen::Index>(labels[c]);
            const double top = logits.col(col).maxCoeff();
            const double lse = top + std::log((logits.col(col).array() - top).exp().sum());
            ce += lse - logits(lab, col);
            dw(lab, col) = -inv_n / std::max(w(lab, col), prob_floor);
        }
        ce_total += ce * inv_n;
        grads.push_back(backward(team[j].gating, cache, dw).grads);
    }
    for (const auto& g : grads)
        require(g.all_finite(), ErrorCode::non_finite, "non-finite gradient in gating step");
    for (std::size_t j = 0; j < team.size(); ++j)
        optimizer_step(team[j].gating, grads[j], opt.gating[j], Direction::descend);
    return ce_total / static_cast<double>(team.size());
}

std::vector<std::size_t> route_samples(const DmoeTeam& team, std::span<const Sample> batch)
{
    check_dmoe_team(team);
    check_team_batch(batch, team.size());
    Batch total = gating_weights(team[0], batch, 0);
    for (std::size_t j = 1; j < team.size(); ++j)
        total += gating_weights(team[j], batch, j);
    std::vector<std::size_t> route(batch.size());
    std::vector<double> col(static_cast<std::size_t>(total.rows()));
    for (std::size_t c = 0; c < batch.size(); ++c) {
        for (std::size_t e = 0; e < col.size(); ++e)
            col[e] = total(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c));
        route[c] = argmax_lowest(col);
    }
    return route;
}

const char* to_string(TrainPhase phase) noexcept
{
    return phase == TrainPhase::expert ? "expert" : "gating";
}

void write_train_log_csv(std::ostream& os, const TrainLog& log)
{
    os << "update,phase,objective";
    for (std::size_t e = 0; e < log.n_experts; ++e)
        os << ",routed_e" << e;
    os << ",skipped_experts\n";
    for (const auto& r : log.records) {
        os << r.update << ',' << to_string(r.phase) << ',';
        detail::write_number(os, r.objective);
        for (std::size_t e = 0; e < log.n_experts; ++e)
            os << ',' << (e < r.routed.size() ? r.routed[e] : 0);
        os << ',' << r.skipped_experts << '\n';
    }
    require(static_cast<bool>(os), ErrorCode::io, "failed writing training log");
}

DmoeTrainResult train_dmoe(const TrainConfig& cfg, RandomStream& rng, const CheckpointFn& checkpoint)
{
    cfg.validate();
    RandomStream init_rng = rng.split();
    RandomStream data_rng = rng.split();
    RandomStream pretrain_rng = rng.split();
    RandomStream batch_rng = rng.split();

    DmoeTrainResult res;
    res.team = make_dmoe_team(cfg.k, cfg.n_experts, cfg.p_max, init_rng);
    res.log.n_experts = cfg.n_experts;
    DmoeOptimizers opt = make_dmoe_optimizers(res.team, cfg.rates.expert_init, cfg.rates.gating);
    const std::vector<Sample> pool = sample_mixed_quality_set(cfg.k, cfg.env, cfg.n_train, data_rng);

    pretrain_experts(res.team, cfg, opt, pretrain_rng);
    for (auto& per_expert : opt.experts)
        for (auto& st : per_expert)
            st.config.learning_rate = cfg.rates.expert;

    // Gating goes first: an untrained gating net would route arbitrarily and
    // pull the freshly specialized experts away from their regimes. Experts are
    // frozen during a gating block, so labels are computed once per block over
    // the whole pool; smoothing over the pool rather than one batch keeps the
    // labels stable near the edges of the quality range.
    BatchCursor cursor(pool.size(), batch_rng);
    std::vector<std::size_t> pool_labels;
    std::vector<Sample> batch(cfg.batch_size);
    std::vector<std::size_t> labels(cfg.batch_size);
    for (std::size_t u = 0; u < cfg.total_updates; ++u) {
        const auto picked = cursor.next(cfg.batch_size);
        for (std::size_t i = 0; i < picked.size(); ++i)
            batch[i] = pool[picked[i]];
        TrainRecord rec;
        rec.update = u;
        rec.phase = (u / cfg.alt_block) % 2 == 0 ? TrainPhase::gating : TrainPhase::expert;
        if (rec.phase == TrainPhase::gating) {
            if (u % cfg.alt_block == 0)
                pool_labels = smoothed_gating_labels(res.team, pool, cfg.label_bandwidth);
            for (std::size_t i = 0; i < picked.size(); ++i)
                labels[i] = pool_labels[picked[i]];
            rec.objective = gating_step(res.team, batch, labels, opt);
        } else {
            const auto route = route_samples(res.team, batch);
            rec.routed.assign(cfg.n_experts, 0);
            double weighted = 0.0;
            for (std::size_t e = 0; e < cfg.n_experts; ++e) {
                std::vector<Sample> sub;
                for (std::size_t c = 0; c < batch.size(); ++c)
                    if (route[c] == e)
                        sub.push_back(batch[c]);
                rec.routed[e] = sub.size();
                if (sub.empty()) {
                    ++rec.skipped_experts;
                    continue;
                }
                weighted += expert_team_step(res.team, e, sub, opt.experts[e]) * static_cast<double>(sub.size());
            }
            rec.objective = weighted / static_cast<double>(batch.size());
        }
        res.log.records.push_back(std::move(rec));
        if (checkpoint && cfg.checkpoint_every > 0 && (u + 1) % cfg.checkpoint_every == 0)
            checkpoint(u + 1, res.team);
    }
    return res;
}

double pretrain_to_wmmse(TeamDnnTeam& team, const TrainConfig& cfg, const QualityVector& quality, RandomStream& rng)
{
    require(team.size() >= 1, ErrorCode::shape_mismatch, "team is empty");
    quality.validate();
    require(quality.size() == team.size(), ErrorCode::shape_mismatch, "quality vector does not match team size");
    const std::size_t k = team.size();
    std::vector<MlpParams*> nets;
    for (auto& m : team.members) {
        m.validate();
        require(m.p_max == team[0].p_max, ErrorCode::shape_mismatch, "agents disagree on p_max");
        nets.push_back(&m.net);
    }
    TeamOptimizers opt = make_team_optimizers(team, cfg.rates.imitation);
    double loss = 0.0;
    for (std::size_t s = 0; s < cfg.imitation_updates; ++s) {
        const auto batch = sample_batch(quality, cfg.env.sigma_n, cfg.batch_size, rng, cfg.env.law);
        loss = wmmse_imitation_step(nets, per_agent(batch, k, csi_inputs), batch, team[0].p_max, opt);
    }
    return loss;
}

void retrain_slot(TeamDnnTeam& team, const SlotRetrainConfig& cfg, const QualityVector& quality,
                  const EnvParams& env, std::vector<Sample>& slot_set, TeamOptimizers& opt, RandomStream& rng)
{
    cfg.validate();
    if (cfg.r_up == 0)
        return;
    if (slot_set.empty())
        slot_set = sample_batch(quality, env.sigma_n, cfg.n_slot_train, rng, env.law);
    require(slot_set.size() >= cfg.batch_size, ErrorCode::config, "slot set is smaller than the batch size");
    std::vector<std::size_t> order(slot_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Sample> batch(cfg.batch_size);
    for (std::size_t r = 0; r < cfg.r_up; ++r) {
        // Partial Fisher-Yates: a batch drawn without replacement.
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            std::swap(order[i], order[i + rng.index_below(order.size() - i)]);
            batch[i] = slot_set[order[i]];
        }
        team_sumrate_step(team, batch, opt);
    }
}

double mean_team_rate(const DmoeTeam& team, std::span<const Sample> batch)
{
    check_dmoe_team(team);
    check_team_batch(batch, team.size());
    std::vector<std::vector<double>> p;
    for (std::size_t j = 0; j < team.size(); ++j)
        p.push_back(dmoe_decide_batch(team[j], batch, j));
    double total = 0.0;
    std::vector<double> pc(team.size());
    for (std::size_t c = 0; c < batch.size(); ++c) {
        for (std::size_t j = 0; j < team.size(); ++j)
            pc[j] = p[j][c];
        total += sum_rate(batch[c].true_channel, pc);
    }
    return total / static_cast<double>(batch.size());
}

double mean_team_rate(const TeamDnnTeam& team, std::span<const Sample> batch)
{
    require(team.size() >= 1, ErrorCode::shape_mismatch, "team is empty");
    check_team_batch(batch, team.size());
    std::vector<std::vector<double>> p;
    for (std::size_t j = 0; j < team.size(); ++j)
        p.push_back(teamdnn_decide_batch(team[j], batch, j));
    double total = 0.0;
    std::vector<double> pc(team.size());
    for (std::size_t c = 0; c < batch.size(); ++c) {
        for (std::size_t j = 0; j < team.size(); ++j)
            pc[j] = p[j][c];
        total += sum_rate(batch[c].true_channel, pc);
    }
    return total / static_cast<double>(batch.size());
}

double mean_expert_team_rate(const DmoeTeam& team, std::size_t expert, std::span<const Sample> batch)
{
    check_dmoe_team(team);
    check_team_batch(batch, team.size());
    require(expert < team[0].n_experts(), ErrorCode::shape_mismatch, "expert index out of range");
    const auto rates = expert_team_rates(team, batch);
    double total = 0.0;
    for (const auto& r : rates)
        total += r[expert];
    return total / static_cast<double>(batch.size());
}

} // namespace tdmoe
