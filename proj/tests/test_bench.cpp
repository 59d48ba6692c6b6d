#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tdmoe/bench.hpp"
#include "tdmoe/error.hpp"

using namespace tdmoe;
namespace fs = std::filesystem;

namespace {

DmoeTeam untrained_team(std::uint64_t seed = 1)
{
    RandomStream rng(seed);
    return make_dmoe_team(2, 2, 10.0, rng);
}

BenchConfig small_bench()
{
    BenchConfig cfg;
    cfg.trajectory.slots_per_interval = 2;
    cfg.trajectory.intervals = {QualityVector{{1.0, 1.0}}, QualityVector{{0.0, 0.0}}};
    cfg.eval_realizations = 200;
    cfg.n_slot_train = 400;
    cfg.retrain_batch = 100;
    cfg.r_up = {1, 3};
    return cfg;
}

TrainConfig small_imitation()
{
    TrainConfig t = TrainConfig::desk_scale();
    t.imitation_updates = 5;
    return t;
}

std::string read_all(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("tdmoe_test_" + tag + "_" + std::to_string(::getpid())))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Runs the CLI in-process with stdout and stderr captured.
struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun run_cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "tdmoe");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    CliRun r;
    r.code = cli_main(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

const char* tiny_config_json = R"({
  "train": {"n_train": 200, "total_updates": 20, "batch_size": 50, "alt_block": 5,
            "init_updates": 5, "init_imitation_updates": 5, "imitation_updates": 5},
  "bench": {"eval_realizations": 50, "n_slot_train": 200, "retrain_batch": 50, "r_up": [2]},
  "trajectory": {"slots_per_interval": 1, "intervals": [[1, 1], [0.5, 0], [0, 0]]},
  "sweep": {"sigmas": [0, 0.2]}
})";

} // namespace

TEST_CASE("default trajectory anchors")
{
    const Trajectory t = default_trajectory();
    REQUIRE(t.intervals.size() == 20);
    CHECK(t.slots() == 200);
    CHECK(t.intervals[0] == QualityVector{{1.0, 1.0}});
    CHECK(t.intervals[5] == QualityVector{{1.0, 0.0}});
    CHECK(t.intervals[10] == QualityVector{{0.0, 0.0}});
    CHECK(t.intervals[15] == QualityVector{{1.0, 1.0}});
    CHECK(t.intervals[16] == QualityVector{{1.0, 0.5}});
    CHECK(t.intervals[19] == QualityVector{{1.0, 1.0}});
    CHECK(t.quality_at_slot(0) == t.intervals[0]);
    CHECK(t.quality_at_slot(109) == t.intervals[10]);
    CHECK_NOTHROW(t.validate());
}

TEST_CASE("mean_and_error")
{
    const std::vector<double> one{2.5};
    CHECK(mean_and_error(one).mean == 2.5);
    CHECK(mean_and_error(one).std_err == 0.0);
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto m = mean_and_error(v);
    CHECK(m.mean == doctest::Approx(2.5));
    CHECK(m.std_err == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
    CHECK_THROWS_AS(mean_and_error(std::vector<double>{}), Error);
}

TEST_CASE("algorithm names expand the retraining baseline and sort")
{
    BenchConfig cfg;
    CHECK(cfg.algorithm_names() ==
          std::vector<std::string>{"dmoe", "oracle", "tdma", "teamdnn_rup10", "teamdnn_rup100", "wmmse_naive"});
    cfg.algorithms = {"nonsense"};
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("benchmark rows, oracle dominance and identities")
{
    const BenchConfig cfg = small_bench();
    const auto res = run_benchmark(cfg, untrained_team(), small_imitation());
    const auto names = cfg.algorithm_names();
    REQUIRE(res.size() == cfg.trajectory.slots() * names.size());
    for (std::size_t i = 0; i < res.size(); ++i) {
        const auto& r = res[i];
        CHECK(r.slot == i / names.size() + 1);
        CHECK(r.algorithm == names[i % names.size()]);
        CHECK(r.interval == (r.slot - 1) / 2 + 1);
        CHECK(r.mean_sum_rate >= 0.0);
        CHECK(r.std_err >= 0.0);
    }
    for (std::size_t s = 0; s < cfg.trajectory.slots(); ++s) {
        const SlotResult* oracle = nullptr;
        for (std::size_t a = 0; a < names.size(); ++a)
            if (res[s * names.size() + a].algorithm == "oracle")
                oracle = &res[s * names.size() + a];
        REQUIRE(oracle != nullptr);
        for (std::size_t a = 0; a < names.size(); ++a) {
            const auto& r = res[s * names.size() + a];
            CHECK(oracle->mean_sum_rate >= r.mean_sum_rate - 2.0 * (oracle->std_err + r.std_err));
        }
    }
}

TEST_CASE("benchmark is reproducible")
{
    BenchConfig cfg = small_bench();
    cfg.algorithms = {"dmoe", "tdma"};
    const auto team = untrained_team();
    const auto a = run_benchmark(cfg, team, TrainConfig{});
    const auto b = run_benchmark(cfg, team, TrainConfig{});
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].mean_sum_rate == b[i].mean_sum_rate);
        CHECK(a[i].std_err == b[i].std_err);
    }
}

TEST_CASE("benchmark rejects a team with the wrong power budget")
{
    BenchConfig cfg = small_bench();
    cfg.algorithms = {"dmoe"};
    RandomStream rng(2);
    const auto team = make_dmoe_team(2, 2, 1.0, rng);
    CHECK_THROWS_AS(run_benchmark(cfg, team, TrainConfig{}), Error);
}

TEST_CASE("sigma sweep at zero matches the benchmark and keeps the input order")
{
    BenchConfig cfg = small_bench();
    const auto team = untrained_team();
    const std::vector<double> sigmas{0.0, 0.3, 0.1};
    const auto pts = sweep_sigma(cfg, sigmas, team);
    REQUIRE(pts.size() == sigmas.size());
    for (std::size_t i = 0; i < sigmas.size(); ++i)
        CHECK(pts[i].sigma_n == sigmas[i]);
    cfg.algorithms = {"dmoe"};
    const auto res = run_benchmark(cfg, team, TrainConfig{});
    CHECK(pts[0].mean_sum_rate == trajectory_average(res, "dmoe").mean);
    CHECK_THROWS_AS(sweep_sigma(cfg, std::vector<double>{}, team), Error);
}

TEST_CASE("trajectory average")
{
    std::vector<SlotResult> rows{{1, 1, QualityVector{{1, 1}}, "a", 1.0, 0.3},
                                 {1, 1, QualityVector{{1, 1}}, "b", 9.0, 0.0},
                                 {2, 1, QualityVector{{1, 1}}, "a", 3.0, 0.4}};
    const auto m = trajectory_average(rows, "a");
    CHECK(m.mean == 2.0);
    CHECK(m.std_err == doctest::Approx(0.25));
    CHECK_THROWS_AS(trajectory_average(rows, "c"), Error);
}

TEST_CASE("results and sweep CSV formats")
{
    std::vector<SlotResult> rows{{3, 1, QualityVector{{1.0, 0.25}}, "oracle", 3.14159265, 0.001234567}};
    std::ostringstream os;
    write_results_csv(os, rows);
    CHECK(os.str() == std::string(results_csv_header) + "\n3,1,1,0.25,oracle,3.14159,0.00123457\n");

    std::vector<SweepPoint> pts{{0.05, 2.0, 1e-7}};
    std::ostringstream ss;
    write_sweep_csv(ss, pts);
    CHECK(ss.str() == "sigma_n,mean_sum_rate,std_err\n0.05,2,1e-07\n");
}

TEST_CASE("config parsing")
{
    const auto cfg = parse_experiment_config(tiny_config_json);
    CHECK(cfg.train.total_updates == 20);
    CHECK(cfg.bench.r_up == std::vector<std::size_t>{2});
    CHECK(cfg.bench.trajectory.intervals.size() == 3);
    CHECK(cfg.sweep_sigmas == std::vector<double>{0.0, 0.2});

    const auto defaults = parse_experiment_config("{}");
    CHECK(defaults.train.p_max == 10.0);
    CHECK(defaults.train.n_train == TrainConfig::desk_scale().n_train);

    try {
        parse_experiment_config(R"({"train": {"n_trian": 5}})");
        FAIL("unknown key accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::config);
        CHECK(std::string(e.what()).find("train.n_trian") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_experiment_config(R"({"train": {"batch_size": "big"}})"), Error);
    CHECK_THROWS_AS(parse_experiment_config(R"({"train": {"batch_size": -1}})"), Error);
    CHECK_THROWS_AS(parse_experiment_config(R"({"p_max": [1]})"), Error);
    CHECK_THROWS_AS(parse_experiment_config("{not json"), Error);
    CHECK_THROWS_AS(parse_experiment_config(R"({"trajectory": {"intervals": [[1.5, 1]]}})"), Error);
    CHECK_THROWS_AS(parse_experiment_config(R"({"sweep": {"sigmas": []}})"), Error);
}

TEST_CASE("CLI exit codes")
{
    TempDir dir("cli_codes");
    const auto missing = run_cli({"--quiet", "--out", dir.path.string(), "bench", "--checkpoint", "nowhere.policy"});
    CHECK(missing.code != 0);
    CHECK(missing.err.find("nowhere.policy") != std::string::npos);

    CHECK(run_cli({"frobnicate"}).code == 1);
    CHECK(run_cli({}).code == 1);

    const fs::path bad = dir.path / "bad.json";
    std::ofstream(bad) << R"({"bench": {"eval_realizations": 0}})";
    CHECK(run_cli({"--config", bad.string(), "eval-once"}).code == 2);
    CHECK(run_cli({"--config", (dir.path / "absent.json").string(), "eval-once"}).code == 2);
    CHECK(run_cli({"eval-once", "--gamma", "1,2"}).code == 2);
}

TEST_CASE("eval-once is deterministic for a fixed seed")
{
    const auto a = run_cli({"--seed", "7", "eval-once", "--gamma", "1,0.5"});
    const auto b = run_cli({"--seed", "7", "eval-once", "--gamma", "1,0.5"});
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(a.out.find("true_channel") == 0);
    for (const char* name : {"oracle ", "tdma ", "wmmse_central ", "wmmse_naive "})
        CHECK(a.out.find(name) != std::string::npos);
    const auto c = run_cli({"--seed", "8", "eval-once", "--gamma", "1,0.5"});
    CHECK(c.out != a.out);
}

TEST_CASE("train, bench and sweep through the CLI write the documented files")
{
    TempDir dir("cli_flow");
    const fs::path cfg = dir.path / "tiny.json";
    std::ofstream(cfg) << tiny_config_json;
    const std::string out = (dir.path / "run").string();
    const std::vector<std::string> common{"--quiet", "--config", cfg.string(), "--out", out};
    auto with = [&](std::vector<std::string> tail) {
        auto args = common;
        args.insert(args.end(), tail.begin(), tail.end());
        return run_cli(args);
    };

    REQUIRE(with({"pretrain"}).code == 0);
    CHECK(fs::exists(fs::path(out) / "pretrained.policy"));
    REQUIRE(with({"train"}).code == 0);
    REQUIRE(with({"bench"}).code == 0);
    REQUIRE(with({"sweep"}).code == 0);

    const std::string log = read_all(fs::path(out) / "train_log.csv");
    CHECK(log.rfind("update,phase,objective,routed_e0,routed_e1,skipped_experts\n", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 21);

    const std::string results = read_all(fs::path(out) / "results.csv");
    CHECK(results.rfind(std::string(results_csv_header) + "\n", 0) == 0);
    // 3 slots x (dmoe, oracle, tdma, teamdnn_rup2, wmmse_naive)
    CHECK(std::count(results.begin(), results.end(), '\n') == 1 + 3 * 5);

    const std::string sweep = read_all(fs::path(out) / "sweep.csv");
    CHECK(sweep.rfind("sigma_n,mean_sum_rate,std_err\n0,", 0) == 0);
    CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 3);

    const auto once = with({"eval-once", "--checkpoint", out + "/policy.txt"});
    CHECK(once.code == 0);
    CHECK(once.out.find("\ndmoe ") != std::string::npos);
}
