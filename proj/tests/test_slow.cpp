#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tdmoe/bench.hpp"
#include "tdmoe/rate.hpp"
#include "tdmoe/train.hpp"

using namespace tdmoe;

namespace {

struct Pretrained {
    TrainConfig cfg = TrainConfig::desk_scale();
    DmoeTeam team;
};

const Pretrained& pretrained()
{
    static const Pretrained p = [] {
        Pretrained out;
        RandomStream rng(out.cfg.seed);
        RandomStream init_rng = rng.split();
        out.team = make_dmoe_team(2, 2, out.cfg.p_max, init_rng);
        auto opt = make_dmoe_optimizers(out.team, out.cfg.rates.expert_init, out.cfg.rates.gating);
        pretrain_experts(out.team, out.cfg, opt, rng);
        return out;
    }();
    return p;
}

const DmoeTeam& trained()
{
    static const DmoeTeam t = [] {
        const TrainConfig cfg = TrainConfig::desk_scale();
        RandomStream rng(cfg.seed);
        return train_dmoe(cfg, rng).team;
    }();
    return t;
}

double mean_rate(std::span<const Sample> samples, const PowerVector& p)
{
    double acc = 0.0;
    for (const auto& s : samples)
        acc += sum_rate(s.true_channel, p);
    return acc / static_cast<double>(samples.size());
}

} // namespace

TEST_CASE("pretrained CSI expert reaches 90% of the oracle with exact CSI")
{
    const auto& p = pretrained();
    RandomStream rng(101);
    const auto samples = sample_batch(QualityVector{{1.0, 1.0}}, 0.0, 2000, rng);
    double oracle = 0.0;
    for (const auto& s : samples)
        oracle += sum_rate(s.true_channel, perfect_csi_oracle(s.true_channel, p.cfg.p_max));
    oracle /= static_cast<double>(samples.size());
    const double expert = mean_expert_team_rate(p.team, 0, samples);
    MESSAGE("expert 0: " << expert << ", oracle: " << oracle);
    CHECK(expert >= 0.9 * oracle);
}

TEST_CASE("pretrained blind expert is within 15% of the best CSI-free scheme")
{
    const auto& p = pretrained();
    RandomStream rng(102);
    const auto samples = sample_batch(QualityVector{{0.0, 0.0}}, 0.0, 2000, rng);
    const double full = mean_rate(samples, PowerVector(2, p.cfg.p_max));
    const double tdma = mean_rate(samples, tdma_powers(2, 0, p.cfg.p_max));
    const double best = std::max(full, tdma);
    const double expert = mean_expert_team_rate(p.team, 1, samples);
    MESSAGE("expert 1: " << expert << ", full power: " << full << ", tdma: " << tdma);
    CHECK(std::abs(expert - best) <= 0.15 * best);
}

TEST_CASE("trained gating routes exact-CSI estimates to the CSI expert")
{
    RandomStream rng(103);
    const auto samples = sample_batch(QualityVector{{1.0, 1.0}}, 0.0, 200, rng);
    const auto& team = trained();
    double worst = 1.0;
    for (std::size_t j = 0; j < team.size(); ++j) {
        const Batch w = gating_weights(team[j], samples, j);
        worst = std::min(worst, w.row(0).minCoeff());
    }
    MESSAGE("smallest expert-0 weight at (1,1): " << worst);
    CHECK(worst >= 0.9);
}

TEST_CASE("soft mixture stays within the power budget after training")
{
    RandomStream rng(104);
    const auto samples = sample_mixed_quality_set(2, EnvParams{{}, 0.3}, 2000, rng);
    const auto& team = trained();
    for (std::size_t j = 0; j < team.size(); ++j) {
        const auto p = dmoe_decide_batch(team[j], samples, j);
        CHECK(*std::min_element(p.begin(), p.end()) >= 0.0);
        CHECK(*std::max_element(p.begin(), p.end()) <= team[j].p_max);
    }
}

TEST_CASE("team-dnn imitation tracks WMMSE within 5% of the power budget")
{
    const TrainConfig cfg = TrainConfig::desk_scale();
    RandomStream rng(105);
    auto team = make_teamdnn_team(2, cfg.p_max, rng);
    const QualityVector q{{1.0, 1.0}};
    pretrain_to_wmmse(team, cfg, q, rng);
    const auto samples = sample_batch(q, 0.0, 2000, rng);
    double mad = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
        const auto p = teamdnn_decide_batch(team[j], samples, j);
        for (std::size_t c = 0; c < samples.size(); ++c)
            mad += std::abs(p[c] - naive_wmmse_team(samples[c].observations, cfg.p_max)[j]);
    }
    mad /= 2.0 * static_cast<double>(samples.size());
    MESSAGE("mean absolute deviation from WMMSE: " << mad);
    CHECK(mad <= 0.05 * cfg.p_max);
}

TEST_CASE("a hundred retraining steps raise the slot-set utility")
{
    const TrainConfig cfg = TrainConfig::desk_scale();
    RandomStream rng(106);
    auto start = make_teamdnn_team(2, cfg.p_max, rng);
    pretrain_to_wmmse(start, cfg, QualityVector{{1.0, 1.0}}, rng);
    int improved = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto team = start;
        auto opt = make_team_optimizers(team, cfg.rates.retrain);
        const QualityVector q{{1.0, 1.0}};
        std::vector<Sample> slot_set = sample_batch(q, 0.0, 30000, rng);
        const double before = mean_team_rate(team, slot_set);
        retrain_slot(team, SlotRetrainConfig{30000, 100, 1000}, q, EnvParams{}, slot_set, opt, rng);
        improved += mean_team_rate(team, slot_set) > before;
    }
    CHECK(improved >= 18);
}
