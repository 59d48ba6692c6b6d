#include "tdmoe/net.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "tdmoe/error.hpp"
#include "text_io.hpp"

namespace tdmoe {
namespace {

constexpr double sigmoid_clamp = 40.0;
constexpr std::string_view mlp_magic = "tdmoe-mlp";
constexpr int mlp_version = 1;

void apply_activation(Activation a, const Batch& pre, Batch& post)
{
    switch (a) {
    case Activation::identity:
        post = pre;
        break;
    case Activation::relu:
        post = pre.cwiseMax(0.0);
        break;
    case Activation::sigmoid:
        post = pre.unaryExpr([](double z) {
            z = std::clamp(z, -sigmoid_clamp, sigmoid_clamp);
            return 1.0 / (1.0 + std::exp(-z));
        });
        break;
    case Activation::softmax:
        post.resize(pre.rows(), pre.cols());
        for (Eigen::Index c = 0; c < pre.cols(); ++c) {
            const double mx = pre.col(c).maxCoeff();
            post.col(c) = (pre.col(c).array() - mx).exp().matrix();
            post.col(c) /= post.col(c).sum();
        }
        break;
    }
}

// dLoss/dPre from dLoss/dPost.
Batch activation_backward(Activation a, const Batch& pre, const Batch& post, const Batch& upstream)
{
    switch (a) {
    case Activation::identity:
        return upstream;
    case Activation::relu:
        return upstream.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    case Activation::sigmoid:
        return upstream.cwiseProduct(post.cwiseProduct((1.0 - post.array()).matrix()));
    case Activation::softmax: {
        // Full Jacobian: dz = s * (u - <u, s>) per column.
        Batch dz(post.rows(), post.cols());
        for (Eigen::Index c = 0; c < post.cols(); ++c) {
            const double dot = upstream.col(c).dot(post.col(c));
            dz.col(c) = post.col(c).cwiseProduct((upstream.col(c).array() - dot).matrix());
        }
        return dz;
    }
    }
    return upstream;
}

double read_number(std::istream& is) { return detail::read_number(is, "mlp"); }

void expect_token(std::istream& is, std::string_view expected) { detail::expect_token(is, expected, "mlp"); }

std::size_t read_count(std::istream& is, std::string_view what) { return detail::read_count(is, what, "mlp"); }

} // namespace

const char* to_string(Activation a) noexcept
{
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
    case Activation::identity: return "identity";
    }
    return "?";
}

Activation activation_from_string(std::string_view name)
{
    for (Activation a : {Activation::relu, Activation::sigmoid, Activation::softmax, Activation::identity})
        if (name == to_string(a))
            return a;
    fail(ErrorCode::invalid_parameter, "unknown activation '" + std::string(name) + "'");
}

std::size_t MlpParams::parameter_count() const noexcept
{
    std::size_t n = 0;
    for (const auto& l : layers)
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

void MlpParams::validate() const
{
    require(!layers.empty(), ErrorCode::shape_mismatch, "mlp has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        require(l.out() >= 1 && l.in() >= 1, ErrorCode::shape_mismatch, "mlp layer with zero width");
        require(static_cast<std::size_t>(l.bias.size()) == l.out(), ErrorCode::shape_mismatch,
                "mlp bias length does not match layer output");
        if (i > 0)
            require(layers[i - 1].out() == l.in(), ErrorCode::shape_mismatch,
                    "mlp layer dimensions do not chain at layer " + std::to_string(i));
        require(l.activation != Activation::softmax || i + 1 == layers.size(), ErrorCode::shape_mismatch,
                "softmax allowed only as the final activation");
        require(l.weight.allFinite() && l.bias.allFinite(), ErrorCode::non_finite,
                "mlp has non-finite parameters");
    }
}

bool MlpParams::operator==(const MlpParams& other) const
{
    if (layers.size() != other.layers.size())
        return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& a = layers[i];
        const auto& b = other.layers[i];
        if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
            a.weight.cols() != b.weight.cols() || a.bias.size() != b.bias.size())
            return false;
        if (a.weight != b.weight || a.bias != b.bias)
            return false;
    }
    return true;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& m)
{
    MlpGrads g;
    g.layers.reserve(m.layers.size());
    for (const auto& l : m.layers)
        g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                            Eigen::VectorXd::Zero(l.bias.size())});
    return g;
}

bool MlpGrads::all_finite() const
{
    return std::all_of(layers.begin(), layers.end(),
                       [](const LayerGrads& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

MlpGrads& MlpGrads::operator+=(const MlpGrads& other)
{
    require(layers.size() == other.layers.size(), ErrorCode::shape_mismatch, "gradient layer count");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weight += other.layers[i].weight;
        layers[i].bias += other.layers[i].bias;
    }
    return *this;
}

MlpGrads& MlpGrads::operator*=(double c)
{
    for (auto& l : layers) {
        l.weight *= c;
        l.bias *= c;
    }
    return *this;
}

MlpParams init_mlp(std::span<const std::size_t> layer_sizes, std::span<const Activation> activations,
                   RandomStream& rng)
{
    require(layer_sizes.size() >= 2, ErrorCode::shape_mismatch, "init_mlp: need at least one layer");
    require(activations.size() + 1 == layer_sizes.size(), ErrorCode::shape_mismatch,
            "init_mlp: activation count must equal layer count");
    MlpParams m;
    for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
        const std::size_t fan_in = layer_sizes[i];
        const std::size_t fan_out = layer_sizes[i + 1];
        require(fan_in >= 1 && fan_out >= 1, ErrorCode::shape_mismatch, "init_mlp: zero layer width");
        const double limit = activations[i] == Activation::relu
                                 ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                 : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        DenseLayer l;
        l.activation = activations[i];
        l.weight.resize(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
        // Row-major draw order so the stream consumption matches the serialized layout.
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                l.weight(r, c) = limit * (2.0 * rng.uniform() - 1.0);
        l.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fan_out));
        m.layers.push_back(std::move(l));
    }
    m.validate();
    return m;
}

Batch forward(const MlpParams& m, const Batch& x, ForwardCache* cache)
{
    require(!m.layers.empty(), ErrorCode::shape_mismatch, "forward: empty network");
    require(static_cast<std::size_t>(x.rows()) == m.input_width(), ErrorCode::shape_mismatch,
            "forward: input width " + std::to_string(x.rows()) + " != network input width " +
                std::to_string(m.input_width()));
    require(x.allFinite(), ErrorCode::non_finite, "forward: non-finite input");

    if (cache) {
        cache->input = x;
        cache->pre.resize(m.layers.size());
        cache->post.resize(m.layers.size());
    }
    Batch current = x;
    Batch pre;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const auto& l = m.layers[i];
        pre.noalias() = l.weight * current;
        pre.colwise() += l.bias;
        Batch post;
        apply_activation(l.activation, pre, post);
        if (cache) {
            cache->pre[i] = pre;
            cache->post[i] = post;
        }
        current = std::move(post);
    }
    return current;
}

BackwardResult backward(const MlpParams& m, const ForwardCache& cache, const Batch& output_grad)
{
    const std::size_t n = m.layers.size();
    require(cache.pre.size() == n && cache.post.size() == n, ErrorCode::shape_mismatch,
            "backward: cache does not match network depth");
    require(output_grad.rows() == cache.post.back().rows() && output_grad.cols() == cache.post.back().cols(),
            ErrorCode::shape_mismatch, "backward: output gradient shape does not match forward output");

    BackwardResult res;
    res.grads.layers.resize(n);
    Batch upstream = output_grad;
    for (std::size_t idx = n; idx-- > 0;) {
        const auto& l = m.layers[idx];
        const Batch dz = activation_backward(l.activation, cache.pre[idx], cache.post[idx], upstream);
        const Batch& layer_input = idx == 0 ? cache.input : cache.post[idx - 1];
        res.grads.layers[idx].weight.noalias() = dz * layer_input.transpose();
        res.grads.layers[idx].bias = dz.rowwise().sum();
        upstream.noalias() = l.weight.transpose() * dz;
    }
    res.input_grad = std::move(upstream);
    return res;
}

OptimizerState make_optimizer_state(const MlpParams& m, const OptimizerConfig& config)
{
    require(config.learning_rate > 0.0 && std::isfinite(config.learning_rate), ErrorCode::invalid_parameter,
            "optimizer learning rate must be positive");
    OptimizerState st;
    st.config = config;
    st.first_moment = MlpGrads::zeros_like(m);
    st.second_moment = MlpGrads::zeros_like(m);
    return st;
}

void optimizer_step(MlpParams& m, const MlpGrads& grads, OptimizerState& state, Direction direction)
{
    require(grads.layers.size() == m.layers.size() && state.first_moment.layers.size() == m.layers.size(),
            ErrorCode::shape_mismatch, "optimizer_step: layer count mismatch");
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        require(grads.layers[i].weight.rows() == m.layers[i].weight.rows() &&
                    grads.layers[i].weight.cols() == m.layers[i].weight.cols() &&
                    grads.layers[i].bias.size() == m.layers[i].bias.size(),
                ErrorCode::shape_mismatch, "optimizer_step: gradient shape mismatch");
    require(grads.all_finite(), ErrorCode::non_finite, "optimizer_step: non-finite gradient rejected");

    // Everything below works on the descent gradient; negation is exact, so
    // ascending f and descending -f see identical numbers.
    const double sign = direction == Direction::ascend ? -1.0 : 1.0;
    const OptimizerConfig& cfg = state.config;
    ++state.step;

    if (cfg.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            m.layers[i].weight -= cfg.learning_rate * (sign * grads.layers[i].weight);
            m.layers[i].bias -= cfg.learning_rate * (sign * grads.layers[i].bias);
        }
        return;
    }

    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg.beta2, t);
    auto update = [&](auto& param, auto& m1, auto& m2, const auto& g) {
        const auto gd = (sign * g.array()).eval();
        m1.array() = cfg.beta1 * m1.array() + (1.0 - cfg.beta1) * gd;
        m2.array() = cfg.beta2 * m2.array() + (1.0 - cfg.beta2) * gd.square();
        param.array() -= cfg.learning_rate * (m1.array() / bias1) / ((m2.array() / bias2).sqrt() + cfg.epsilon);
    };
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        update(m.layers[i].weight, state.first_moment.layers[i].weight, state.second_moment.layers[i].weight,
               grads.layers[i].weight);
        update(m.layers[i].bias, state.first_moment.layers[i].bias, state.second_moment.layers[i].bias,
               grads.layers[i].bias);
    }
}

std::vector<double> flatten(const MlpParams& m)
{
    std::vector<double> out;
    out.reserve(m.parameter_count());
    for (const auto& l : m.layers) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                out.push_back(l.weight(r, c));
        for (Eigen::Index r = 0; r < l.bias.size(); ++r)
            out.push_back(l.bias(r));
    }
    return out;
}

std::vector<double> flatten(const MlpGrads& g)
{
    std::vector<double> out;
    for (const auto& l : g.layers) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                out.push_back(l.weight(r, c));
        for (Eigen::Index r = 0; r < l.bias.size(); ++r)
            out.push_back(l.bias(r));
    }
    return out;
}

void assign_flat(MlpParams& m, std::span<const double> values)
{
    require(values.size() == m.parameter_count(), ErrorCode::shape_mismatch, "assign_flat: size mismatch");
    std::size_t n = 0;
    for (auto& l : m.layers) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                l.weight(r, c) = values[n++];
        for (Eigen::Index r = 0; r < l.bias.size(); ++r)
            l.bias(r) = values[n++];
    }
}

// Format:
//   tdmoe-mlp 1
//   layers <n>
//   dense <in> <out> <activation>
//   w <out*in numbers, row-major>
//   b <out numbers>
//   ... (per layer)
//   end
void write_mlp(std::ostream& os, const MlpParams& m)
{
    m.validate();
    os << mlp_magic << ' ' << mlp_version << '\n';
    os << "layers " << m.layers.size() << '\n';
    for (const auto& l : m.layers) {
        os << "dense " << l.in() << ' ' << l.out() << ' ' << to_string(l.activation) << '\n';
        os << 'w';
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                os << ' ';
                detail::write_number(os, l.weight(r, c));
            }
        os << "\nb";
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
            os << ' ';
            detail::write_number(os, l.bias(r));
        }
        os << '\n';
    }
    os << "end\n";
}

MlpParams read_mlp(std::istream& is)
{
    expect_token(is, mlp_magic);
    int version = 0;
    require(static_cast<bool>(is >> version) && version == mlp_version, ErrorCode::io,
            "mlp: unsupported format version " + std::to_string(version));
    expect_token(is, "layers");
    const std::size_t n = read_count(is, "layer count");
    MlpParams m;
    m.layers.resize(n);
    for (auto& l : m.layers) {
        expect_token(is, "dense");
        const std::size_t in = read_count(is, "input width");
        const std::size_t out = read_count(is, "output width");
        std::string act;
        require(static_cast<bool>(is >> act), ErrorCode::io, "mlp: missing activation");
        l.activation = activation_from_string(act);
        l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
        l.bias.resize(static_cast<Eigen::Index>(out));
        expect_token(is, "w");
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                l.weight(r, c) = read_number(is);
        expect_token(is, "b");
        for (Eigen::Index r = 0; r < l.bias.size(); ++r)
            l.bias(r) = read_number(is);
    }
    expect_token(is, "end");
    m.validate();
    return m;
}

} // namespace tdmoe
