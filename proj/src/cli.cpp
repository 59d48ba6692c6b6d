#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tdmoe/bench.hpp"
#include "tdmoe/error.hpp"
#include "tdmoe/train.hpp"

namespace tdmoe {
namespace {

namespace fs = std::filesystem;

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_config = 2, exit_runtime = 3 };

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    bool quiet = false;
};

ExperimentConfig resolve_config(const GlobalOptions& g)
{
    ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_experiment_config(g.config_path);
    if (g.seed) {
        cfg.train.seed = *g.seed;
        cfg.bench.seed = *g.seed;
    }
    return cfg;
}

fs::path prepare_out(const GlobalOptions& g)
{
    fs::path out(g.out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    require(!ec, ErrorCode::io, "cannot create output directory " + out.string() + ": " + ec.message());
    return out;
}

template <class Fn>
void write_file(const fs::path& path, Fn&& fn)
{
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), ErrorCode::io, "cannot open " + path.string() + " for writing");
    fn(os);
    os.flush();
    require(static_cast<bool>(os), ErrorCode::io, "failed writing " + path.string());
}

DmoeTeam load_checkpoint(const std::string& path)
{
    require(fs::exists(path), ErrorCode::io, "checkpoint file not found: " + path);
    return load_dmoe_bundle(path);
}

ProgressFn progress_printer(const GlobalOptions& g, const char* what)
{
    if (g.quiet)
        return {};
    return [what](std::size_t done, std::size_t total) {
        if (done == total || done % 20 == 0)
            std::fprintf(stderr, "%s: slot %zu/%zu\n", what, done, total);
    };
}

void print_powers(std::ostream& os, const std::string& name, const PowerVector& p, const ChannelMatrix& g)
{
    os << name;
    char buf[48];
    for (double v : p) {
        std::snprintf(buf, sizeof(buf), " %.6g", v);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), " sum_rate %.6g", sum_rate(g, p));
    os << buf << '\n';
}

int cmd_pretrain(const GlobalOptions& g)
{
    const ExperimentConfig cfg = resolve_config(g);
    const fs::path out = prepare_out(g);
    RandomStream rng(cfg.train.seed);
    RandomStream init_rng = rng.split();
    DmoeTeam team = make_dmoe_team(cfg.train.k, cfg.train.n_experts, cfg.train.p_max, init_rng);
    DmoeOptimizers opt = make_dmoe_optimizers(team, cfg.train.rates.expert_init, cfg.train.rates.gating);
    pretrain_experts(team, cfg.train, opt, rng);
    save_policy_bundle(out / "pretrained.policy", team);
    if (!g.quiet)
        std::fprintf(stderr, "wrote %s\n", (out / "pretrained.policy").string().c_str());
    return exit_ok;
}

int cmd_train(const GlobalOptions& g)
{
    const ExperimentConfig cfg = resolve_config(g);
    const fs::path out = prepare_out(g);
    RandomStream rng(cfg.train.seed);
    const auto res = train_dmoe(cfg.train, rng, [&](std::size_t done, const DmoeTeam& team) {
        save_policy_bundle(out / ("checkpoint_" + std::to_string(done) + ".policy"), team);
    });
    save_policy_bundle(out / "policy.txt", res.team);
    write_file(out / "train_log.csv", [&](std::ostream& os) { write_train_log_csv(os, res.log); });
    if (!g.quiet)
        std::fprintf(stderr, "wrote %s and %s\n", (out / "policy.txt").string().c_str(),
                     (out / "train_log.csv").string().c_str());
    return exit_ok;
}

int cmd_bench(const GlobalOptions& g, const std::string& checkpoint)
{
    const ExperimentConfig cfg = resolve_config(g);
    const fs::path out = prepare_out(g);
    const std::string path = checkpoint.empty() ? (out / "policy.txt").string() : checkpoint;
    const DmoeTeam team = load_checkpoint(path);
    const auto results = run_benchmark(cfg.bench, team, cfg.train, progress_printer(g, "bench"));
    write_file(out / "results.csv", [&](std::ostream& os) { write_results_csv(os, results); });
    if (!g.quiet)
        std::fprintf(stderr, "wrote %s\n", (out / "results.csv").string().c_str());
    return exit_ok;
}

int cmd_sweep(const GlobalOptions& g, const std::string& checkpoint, const std::vector<double>& sigmas)
{
    const ExperimentConfig cfg = resolve_config(g);
    const fs::path out = prepare_out(g);
    const std::string path = checkpoint.empty() ? (out / "policy.txt").string() : checkpoint;
    const DmoeTeam team = load_checkpoint(path);
    const auto points = sweep_sigma(cfg.bench, sigmas.empty() ? cfg.sweep_sigmas : sigmas, team);
    write_file(out / "sweep.csv", [&](std::ostream& os) { write_sweep_csv(os, points); });
    if (!g.quiet)
        std::fprintf(stderr, "wrote %s\n", (out / "sweep.csv").string().c_str());
    return exit_ok;
}

int cmd_eval_once(const GlobalOptions& g, const std::string& checkpoint, const std::vector<double>& gammas,
                  std::size_t slot)
{
    const ExperimentConfig cfg = resolve_config(g);
    const std::size_t k = cfg.train.k;
    QualityVector quality{gammas.empty() ? std::vector<double>(k, 1.0) : gammas};
    require(quality.size() == k, ErrorCode::config, "--gamma needs " + std::to_string(k) + " values");
    try {
        quality.validate();
    } catch (const Error& e) {
        fail(ErrorCode::config, e.what());
    }
    RandomStream rng(cfg.bench.seed);
    const Sample s = draw_sample(quality, EnvParams{cfg.bench.law, cfg.bench.sigma_n}, rng);
    const double p_max = cfg.bench.p_max;

    std::ostringstream os;
    os << "true_channel";
    for (double v : s.true_channel.entries())
        os << ' ' << v;
    os << "\nquality_estimate";
    for (double v : s.observations[0].quality_estimate.values)
        os << ' ' << v;
    os << '\n';
    if (!checkpoint.empty()) {
        const DmoeTeam team = load_checkpoint(checkpoint);
        require(team.size() == k, ErrorCode::shape_mismatch, "checkpoint agent count does not match config k");
        PowerVector p(k);
        for (std::size_t j = 0; j < k; ++j)
            p[j] = dmoe_decide(team[j], s.observations[j]);
        print_powers(os, "dmoe", p, s.true_channel);
    }
    print_powers(os, "oracle", perfect_csi_oracle(s.true_channel, p_max), s.true_channel);
    print_powers(os, "tdma", tdma_powers(k, slot, p_max), s.true_channel);
    print_powers(os, "wmmse_central", wmmse_powers(s.true_channel, p_max), s.true_channel);
    print_powers(os, "wmmse_naive", naive_wmmse_team(s.observations, p_max), s.true_channel);
    std::cout << os.str();
    return exit_ok;
}

} // namespace

int cli_main(int argc, const char* const* argv)
{
    CLI::App app{"Team mixture-of-experts power control on a K-user interference channel"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config_path, "JSON config file");
    app.add_option("--seed", g.seed, "Seed for training and evaluation");
    app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();
    app.add_flag("--quiet", g.quiet, "Suppress progress output");

    std::string checkpoint;
    std::vector<double> sigmas, gammas;
    std::size_t slot = 0;

    auto* pretrain = app.add_subcommand("pretrain", "Regime-specialized expert initialization only");
    auto* train = app.add_subcommand("train", "Full mixture training; writes policy.txt and train_log.csv");
    auto* bench = app.add_subcommand("bench", "Trajectory benchmark from a checkpoint; writes results.csv");
    bench->add_option("--checkpoint", checkpoint, "Policy bundle (default <out>/policy.txt)");
    auto* sweep = app.add_subcommand("sweep", "Quality-estimate noise sweep; writes sweep.csv");
    sweep->add_option("--checkpoint", checkpoint, "Policy bundle (default <out>/policy.txt)");
    sweep->add_option("--sigmas", sigmas, "Noise levels (default from config)");
    auto* eval_once = app.add_subcommand("eval-once", "One sample, every algorithm's powers and sum-rate");
    eval_once->add_option("--checkpoint", checkpoint, "Policy bundle to include the mixture policy");
    eval_once->add_option("--gamma", gammas, "True quality vector (default all ones)")->delimiter(',');
    eval_once->add_option("--slot", slot, "Slot index used by round-robin TDMA");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return exit_usage;
    }

    try {
        if (pretrain->parsed())
            return cmd_pretrain(g);
        if (train->parsed())
            return cmd_train(g);
        if (bench->parsed())
            return cmd_bench(g, checkpoint);
        if (sweep->parsed())
            return cmd_sweep(g, checkpoint, sigmas);
        return cmd_eval_once(g, checkpoint, gammas, slot);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == ErrorCode::config ? exit_config : exit_runtime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_runtime;
    }
}

} // namespace tdmoe
