#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "tdmoe/error.hpp"
#include "tdmoe/policies.hpp"

namespace tdmoe {
namespace {

constexpr double weight_floor = 1e-12;

void check_wmmse_inputs(const ChannelMatrix& g, double p_max, const WmmseOptions& opts)
{
    require(g.size() >= 1 && g.all_finite() && g.nonnegative(), ErrorCode::invalid_parameter,
            "wmmse: channel must be finite and nonnegative");
    require(p_max > 0.0 && std::isfinite(p_max), ErrorCode::invalid_parameter, "wmmse: p_max must be positive");
    require(opts.tol > 0.0, ErrorCode::invalid_parameter, "wmmse: tol must be > 0");
    require(opts.max_iter >= 1, ErrorCode::invalid_parameter, "wmmse: max_iter must be >= 1");
}

// sum_i (w_i e_i - log w_i) with e_i = 1 - 2 u_i h_ii v_i + u_i^2 (1 + sum_j h_ji^2 v_j^2).
double weighted_mse(const std::vector<double>& h2, std::size_t k, const std::vector<double>& u,
                    const std::vector<double>& w, const std::vector<double>& v)
{
    double f = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double rx_power = 1.0;
        for (std::size_t j = 0; j < k; ++j)
            rx_power += h2[j * k + i] * v[j] * v[j];
        const double hii = std::sqrt(h2[i * k + i]);
        const double e = 1.0 - 2.0 * u[i] * hii * v[i] + u[i] * u[i] * rx_power;
        f += w[i] * e - std::log(w[i]);
    }
    return f;
}

} // namespace

WmmseResult wmmse_solve(const ChannelMatrix& g_hat, double p_max, const WmmseOptions& opts, bool record_objective)
{
    check_wmmse_inputs(g_hat, p_max, opts);
    const std::size_t k = g_hat.size();
    const double v_max = std::sqrt(p_max);
    const std::vector<double> h2(g_hat.entries().begin(), g_hat.entries().end());
    std::vector<double> h_direct(k);
    for (std::size_t i = 0; i < k; ++i)
        h_direct[i] = std::sqrt(g_hat(i, i));

    std::vector<double> v(k, v_max), u(k), w(k), v_next(k);
    std::vector<bool> at_max(k, true);
    WmmseResult res;

    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        for (std::size_t i = 0; i < k; ++i) {
            double rx_power = 1.0;
            for (std::size_t j = 0; j < k; ++j)
                rx_power += h2[j * k + i] * v[j] * v[j];
            u[i] = h_direct[i] * v[i] / rx_power;
            w[i] = 1.0 / std::max(1.0 - u[i] * h_direct[i] * v[i], weight_floor);
        }
        double max_change = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double num = w[i] * u[i] * h_direct[i];
            double den = 0.0;
            for (std::size_t m = 0; m < k; ++m)
                den += w[m] * u[m] * u[m] * h2[i * k + m];
            double vi = num > 0.0 ? num / den : 0.0;
            require(std::isfinite(vi), ErrorCode::non_finite, "wmmse: non-finite transmit amplitude");
            at_max[i] = vi >= v_max;
            vi = std::clamp(vi, 0.0, v_max);
            max_change = std::max(max_change, std::abs(vi - v[i]));
            v_next[i] = vi;
        }
        v.swap(v_next);
        res.iterations = it + 1;
        if (record_objective) {
            const double f = weighted_mse(h2, k, u, w, v);
            require(std::isfinite(f), ErrorCode::non_finite, "wmmse: non-finite objective");
            res.objective_trace.push_back(f);
        }
        if (max_change < opts.tol) {
            res.converged = true;
            break;
        }
    }

    res.powers.resize(k);
    for (std::size_t i = 0; i < k; ++i)
        res.powers[i] = at_max[i] ? p_max : v[i] * v[i];
    return res;
}

PowerVector wmmse_powers(const ChannelMatrix& g_hat, double p_max, std::size_t max_iter, double tol)
{
    return wmmse_solve(g_hat, p_max, WmmseOptions{max_iter, tol}).powers;
}

PowerVector naive_wmmse_team(std::span<const Observation> observations, double p_max, std::size_t max_iter, double tol)
{
    const std::size_t k = observations.size();
    require(k >= 1, ErrorCode::shape_mismatch, "naive_wmmse_team: no observations");
    PowerVector p(k);
    for (std::size_t i = 0; i < k; ++i) {
        require(observations[i].csi.size() == k, ErrorCode::shape_mismatch,
                "naive_wmmse_team: CSI side does not match agent count");
        p[i] = wmmse_powers(observations[i].csi, p_max, max_iter, tol)[i];
    }
    return p;
}

PowerVector tdma_powers(std::size_t k, std::size_t slot_index, double p_max)
{
    require(k >= 1, ErrorCode::invalid_dimension, "tdma: k must be >= 1");
    PowerVector p(k, 0.0);
    p[slot_index % k] = p_max;
    return p;
}

PowerVector tdma_genie_powers(const ChannelMatrix& g, double p_max)
{
    require(g.size() >= 1, ErrorCode::invalid_dimension, "tdma: empty channel");
    std::size_t best = 0;
    for (std::size_t i = 1; i < g.size(); ++i)
        if (g(i, i) > g(best, best))
            best = i;
    PowerVector p(g.size(), 0.0);
    p[best] = p_max;
    return p;
}

PowerVector perfect_csi_oracle(const ChannelMatrix& g, double p_max, std::size_t grid_points)
{
    const std::size_t k = g.size();
    require(k >= 1, ErrorCode::invalid_dimension, "oracle: empty channel");
    require(k <= oracle_max_users, ErrorCode::unsupported_dimension,
            "oracle: grid search supports K <= " + std::to_string(oracle_max_users) + ", got " + std::to_string(k));
    require(grid_points >= 2, ErrorCode::invalid_parameter, "oracle: grid_points must be >= 2");
    require(p_max > 0.0 && std::isfinite(p_max), ErrorCode::invalid_parameter, "oracle: p_max must be positive");
    require(g.all_finite() && g.nonnegative(), ErrorCode::invalid_parameter, "oracle: invalid channel");

    std::vector<double> levels(grid_points);
    for (std::size_t n = 0; n < grid_points; ++n)
        levels[n] = p_max * static_cast<double>(n) / static_cast<double>(grid_points - 1);

    // The search ranks candidates by prod_i (1 + SINR_i), which is monotone in
    // the sum-rate and needs no logarithms. Candidates within a relative 1e-12
    // of the best product are then re-ranked by the exact sum-rate.
    constexpr double near_tie = 1e-12;
    std::array<double, oracle_max_users> p{};
    std::array<std::size_t, oracle_max_users> idx{};
    double best_prod = -1.0;
    std::vector<std::array<double, oracle_max_users>> finalists;

    auto consider = [&](const std::array<double, oracle_max_users>& cand) {
        double prod = 1.0;
        for (std::size_t i = 0; i < k; ++i) {
            double interf = 1.0;
            for (std::size_t j = 0; j < k; ++j)
                if (j != i)
                    interf += g(j, i) * cand[j];
            prod *= 1.0 + g(i, i) * cand[i] / interf;
        }
        if (prod > best_prod * (1.0 + near_tie)) {
            best_prod = prod;
            finalists.clear();
            finalists.push_back(cand);
        } else if (prod >= best_prod * (1.0 - near_tie)) {
            finalists.push_back(cand);
        }
    };

    if (k == 2) {
        const double g11 = g(0, 0), g22 = g(1, 1), g12 = g(0, 1), g21 = g(1, 0);
        for (std::size_t a = 0; a < grid_points; ++a) {
            const double p1 = levels[a];
            const double s1 = g11 * p1;
            const double i2 = 1.0 + g12 * p1;
            for (std::size_t b = 0; b < grid_points; ++b) {
                const double p2 = levels[b];
                const double i1 = 1.0 + g21 * p2;
                const double prod = (i1 + s1) * (i2 + g22 * p2) / (i1 * i2);
                if (prod >= best_prod * (1.0 - near_tie))
                    consider({p1, p2, 0.0});
            }
        }
    } else {
        for (;;) {
            for (std::size_t i = 0; i < k; ++i)
                p[i] = levels[idx[i]];
            consider(p);
            std::size_t d = k;
            while (d-- > 0) {
                if (++idx[d] < grid_points)
                    break;
                idx[d] = 0;
            }
            if (d == static_cast<std::size_t>(-1))
                break;
        }
    }
    // Binary corners; present on the grid already since levels end at p_max exactly.
    for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
        std::array<double, oracle_max_users> cand{};
        for (std::size_t i = 0; i < k; ++i)
            cand[i] = (mask >> (k - 1 - i)) & 1U ? p_max : 0.0;
        consider(cand);
    }

    PowerVector best;
    double best_rate = -1.0;
    for (const auto& cand : finalists) {
        PowerVector pv(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k));
        const double r = sum_rate(g, pv);
        if (r > best_rate || (r == best_rate && pv < best)) {
            best_rate = r;
            best = std::move(pv);
        }
    }
    return best;
}

} // namespace tdmoe
