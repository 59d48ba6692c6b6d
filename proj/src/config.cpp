#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tdmoe/bench.hpp"
#include "tdmoe/error.hpp"

namespace tdmoe {
namespace {

using json = nlohmann::json;

// Walks one JSON object, dispatching each key to a handler and rejecting
// keys nobody claimed.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path))
    {
        require(obj_.is_object(), ErrorCode::config, where() + " must be an object");
    }

    ObjectReader& on(const std::string& key, const std::function<void(const json&, const std::string&)>& fn)
    {
        handlers_[key] = fn;
        return *this;
    }

    void run() const
    {
        for (const auto& [key, value] : obj_.items()) {
            const auto it = handlers_.find(key);
            require(it != handlers_.end(), ErrorCode::config, "unknown config key '" + child(key) + "'");
            it->second(value, child(key));
        }
    }

private:
    std::string where() const { return path_.empty() ? "config root" : "'" + path_ + "'"; }
    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& obj_;
    std::string path_;
    std::map<std::string, std::function<void(const json&, const std::string&)>> handlers_;
};

std::size_t as_count(const json& v, const std::string& key)
{
    require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), ErrorCode::config,
            "config key '" + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

std::uint64_t as_seed(const json& v, const std::string& key)
{
    require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), ErrorCode::config,
            "config key '" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

double as_real(const json& v, const std::string& key)
{
    require(v.is_number(), ErrorCode::config, "config key '" + key + "' must be a number");
    return v.get<double>();
}

std::vector<double> as_reals(const json& v, const std::string& key)
{
    require(v.is_array(), ErrorCode::config, "config key '" + key + "' must be an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(as_real(v[i], key + "[" + std::to_string(i) + "]"));
    return out;
}

auto count_into(std::size_t& dst)
{
    return [&dst](const json& v, const std::string& key) { dst = as_count(v, key); };
}

auto real_into(double& dst)
{
    return [&dst](const json& v, const std::string& key) { dst = as_real(v, key); };
}

void read_law(const json& v, const std::string& path, ChannelLaw& law)
{
    ObjectReader(v, path)
        .on("dof",
            [&](const json& x, const std::string& key) {
                require(x.is_number_integer(), ErrorCode::config, "config key '" + key + "' must be an integer");
                law.dof = x.get<int>();
            })
        .on("scale", real_into(law.scale))
        .run();
}

void read_train(const json& v, const std::string& path, TrainConfig& t)
{
    ObjectReader(v, path)
        .on("n_train", count_into(t.n_train))
        .on("total_updates", count_into(t.total_updates))
        .on("batch_size", count_into(t.batch_size))
        .on("alt_block", count_into(t.alt_block))
        .on("init_updates", count_into(t.init_updates))
        .on("init_imitation_updates", count_into(t.init_imitation_updates))
        .on("imitation_updates", count_into(t.imitation_updates))
        .on("checkpoint_every", count_into(t.checkpoint_every))
        .on("k", count_into(t.k))
        .on("n_experts", count_into(t.n_experts))
        .on("label_bandwidth", real_into(t.label_bandwidth))
        .on("blind_expert_bias", real_into(t.blind_expert_bias))
        .on("sigma_n", real_into(t.env.sigma_n))
        .on("seed", [&](const json& x, const std::string& key) { t.seed = as_seed(x, key); })
        .on("rates",
            [&](const json& x, const std::string& key) {
                ObjectReader(x, key)
                    .on("expert_init", real_into(t.rates.expert_init))
                    .on("expert", real_into(t.rates.expert))
                    .on("gating", real_into(t.rates.gating))
                    .on("imitation", real_into(t.rates.imitation))
                    .on("retrain", real_into(t.rates.retrain))
                    .run();
            })
        .run();
}

void read_bench(const json& v, const std::string& path, BenchConfig& b)
{
    ObjectReader(v, path)
        .on("eval_realizations", count_into(b.eval_realizations))
        .on("sigma_n", real_into(b.sigma_n))
        .on("n_slot_train", count_into(b.n_slot_train))
        .on("retrain_batch", count_into(b.retrain_batch))
        .on("seed", [&](const json& x, const std::string& key) { b.seed = as_seed(x, key); })
        .on("algorithms",
            [&](const json& x, const std::string& key) {
                require(x.is_array(), ErrorCode::config, "config key '" + key + "' must be an array of names");
                b.algorithms.clear();
                for (const auto& a : x) {
                    require(a.is_string(), ErrorCode::config, "config key '" + key + "' must be an array of names");
                    b.algorithms.push_back(a.get<std::string>());
                }
            })
        .on("r_up",
            [&](const json& x, const std::string& key) {
                require(x.is_array(), ErrorCode::config, "config key '" + key + "' must be an array of counts");
                b.r_up.clear();
                for (std::size_t i = 0; i < x.size(); ++i)
                    b.r_up.push_back(as_count(x[i], key + "[" + std::to_string(i) + "]"));
            })
        .run();
}

void read_trajectory(const json& v, const std::string& path, Trajectory& t)
{
    ObjectReader(v, path)
        .on("slots_per_interval", count_into(t.slots_per_interval))
        .on("intervals",
            [&](const json& x, const std::string& key) {
                require(x.is_array(), ErrorCode::config, "config key '" + key + "' must be an array of quality vectors");
                t.intervals.clear();
                for (std::size_t i = 0; i < x.size(); ++i)
                    t.intervals.push_back(QualityVector{as_reals(x[i], key + "[" + std::to_string(i) + "]")});
            })
        .run();
}

} // namespace

ExperimentConfig parse_experiment_config(std::string_view json_text)
{
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    ObjectReader(doc, "")
        .on("p_max",
            [&](const json& x, const std::string& key) {
                cfg.train.p_max = as_real(x, key);
                cfg.bench.p_max = cfg.train.p_max;
            })
        .on("channel",
            [&](const json& x, const std::string& key) {
                read_law(x, key, cfg.train.env.law);
                cfg.bench.law = cfg.train.env.law;
            })
        .on("train", [&](const json& x, const std::string& key) { read_train(x, key, cfg.train); })
        .on("bench", [&](const json& x, const std::string& key) { read_bench(x, key, cfg.bench); })
        .on("trajectory", [&](const json& x, const std::string& key) { read_trajectory(x, key, cfg.bench.trajectory); })
        .on("sweep",
            [&](const json& x, const std::string& key) {
                ObjectReader(x, key)
                    .on("sigmas", [&](const json& y, const std::string& k2) { cfg.sweep_sigmas = as_reals(y, k2); })
                    .run();
            })
        .run();
    cfg.train.validate();
    cfg.bench.validate();
    require(!cfg.sweep_sigmas.empty(), ErrorCode::config, "sweep.sigmas must not be empty");
    for (double s : cfg.sweep_sigmas)
        require(s >= 0.0 && std::isfinite(s), ErrorCode::config, "sweep.sigmas entries must be >= 0");
    require(cfg.bench.trajectory.intervals.front().size() == cfg.train.k, ErrorCode::config,
            "trajectory quality vectors must have train.k entries");
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorCode::config, "cannot open config file " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_experiment_config(ss.str());
}

} // namespace tdmoe
