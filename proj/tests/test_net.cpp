#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "tdmoe/error.hpp"
#include "tdmoe/net.hpp"

using namespace tdmoe;
using tdmoe::testing::rel_err;

namespace {

Batch random_batch(RandomStream& rng, std::size_t rows, std::size_t cols)
{
    Batch x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            x(r, c) = 2.0 * rng.uniform() - 1.0;
    return x;
}

MlpParams random_net(RandomStream& rng, const std::vector<std::size_t>& sizes, const std::vector<Activation>& acts)
{
    MlpParams m = init_mlp(sizes, acts, rng);
    // Nonzero biases so every layer's bias gradient is exercised.
    for (auto& l : m.layers)
        for (Eigen::Index i = 0; i < l.bias.size(); ++i)
            l.bias(i) = 0.2 * (rng.uniform() - 0.5);
    return m;
}

// Scalar loss sum(u .* forward(m, x)), the contraction backward() differentiates.
double contracted(const MlpParams& m, const Batch& x, const Batch& u)
{
    return forward(m, x).cwiseProduct(u).sum();
}

double worst_parameter_error(const MlpParams& m, const Batch& x, const Batch& u)
{
    ForwardCache cache;
    forward(m, x, &cache);
    const auto analytic = flatten(backward(m, cache, u).grads);
    auto theta = flatten(m);
    MlpParams probe = m;
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + h;
        assign_flat(probe, theta);
        const double up = contracted(probe, x, u);
        theta[i] = keep - h;
        assign_flat(probe, theta);
        const double down = contracted(probe, x, u);
        theta[i] = keep;
        worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h), 1e-7));
    }
    return worst;
}

} // namespace

TEST_CASE("init_mlp builds the expert and gating shapes")
{
    RandomStream rng(1);
    const auto expert = init_mlp(std::vector<std::size_t>{6, 10, 10, 10, 1},
                                 std::vector<Activation>{Activation::relu, Activation::relu, Activation::relu,
                                                         Activation::sigmoid},
                                 rng);
    REQUIRE(expert.layers.size() == 4);
    CHECK(expert.input_width() == 6);
    CHECK(expert.output_width() == 1);
    CHECK(expert.parameter_count() == 70 + 110 + 110 + 11);
    CHECK(expert.layers.back().activation == Activation::sigmoid);

    const auto gating = init_mlp(std::vector<std::size_t>{2, 10, 10, 2},
                                 std::vector<Activation>{Activation::relu, Activation::relu, Activation::softmax}, rng);
    REQUIRE(gating.layers.size() == 3);
    CHECK(gating.input_width() == 2);
    CHECK(gating.output_width() == 2);
    CHECK(gating.layers.back().activation == Activation::softmax);
}

TEST_CASE("init_mlp is seeded, uses fan-in limits and zero biases")
{
    const std::vector<std::size_t> sizes{4, 8, 3};
    const std::vector<Activation> acts{Activation::relu, Activation::sigmoid};
    RandomStream a(5), b(5);
    const auto m = init_mlp(sizes, acts, a);
    CHECK(m == init_mlp(sizes, acts, b));
    CHECK(m.layers[0].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 4.0));
    CHECK(m.layers[1].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 11.0));
    for (const auto& l : m.layers)
        CHECK(l.bias.isZero(0.0));
}

TEST_CASE("init_mlp rejects mismatched activation lists")
{
    RandomStream rng(1);
    CHECK_THROWS_AS(init_mlp(std::vector<std::size_t>{3, 2}, std::vector<Activation>{}, rng), Error);
    CHECK_THROWS_AS(init_mlp(std::vector<std::size_t>{3}, std::vector<Activation>{}, rng), Error);
}

TEST_CASE("forward with zero parameters and a sigmoid output gives one half")
{
    RandomStream rng(2);
    auto m = init_mlp(std::vector<std::size_t>{3, 5, 1}, std::vector<Activation>{Activation::relu, Activation::sigmoid}, rng);
    for (auto& l : m.layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
    const Batch y = forward(m, random_batch(rng, 3, 7));
    CHECK((y.array() == 0.5).all());
}

TEST_CASE("forward through an identity layer returns the input")
{
    MlpParams m;
    m.layers.push_back({Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3), Activation::identity});
    RandomStream rng(3);
    const Batch x = random_batch(rng, 3, 4);
    CHECK(forward(m, x) == x);
}

TEST_CASE("forward with zero weights and a softmax output is uniform")
{
    MlpParams m;
    m.layers.push_back({Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2), Activation::softmax});
    const Batch y = forward(m, Batch::Ones(2, 3));
    CHECK((y.array() == 0.5).all());
}

TEST_CASE("softmax outputs are positive and sum to one")
{
    RandomStream rng(4);
    const auto m = random_net(rng, {2, 10, 10, 4}, {Activation::relu, Activation::relu, Activation::softmax});
    const Batch y = forward(m, 5.0 * random_batch(rng, 2, 200));
    CHECK((y.array() > 0.0).all());
    for (Eigen::Index c = 0; c < y.cols(); ++c)
        CHECK(std::abs(y.col(c).sum() - 1.0) < 1e-9);
}

TEST_CASE("forward rejects wrong widths and non-finite input")
{
    RandomStream rng(5);
    const auto m = random_net(rng, {3, 2}, {Activation::identity});
    CHECK_THROWS_AS(forward(m, Batch::Zero(4, 2)), Error);
    Batch bad = Batch::Zero(3, 2);
    bad(1, 1) = NAN;
    CHECK_THROWS_AS(forward(m, bad), Error);
}

TEST_CASE("forward does not modify parameters and is repeatable")
{
    RandomStream rng(6);
    const auto m = random_net(rng, {3, 4, 1}, {Activation::relu, Activation::sigmoid});
    const auto copy = m;
    const Batch x = random_batch(rng, 3, 5);
    const Batch y1 = forward(m, x);
    const Batch y2 = forward(m, x);
    CHECK(y1 == y2);
    CHECK(m == copy);
}

TEST_CASE("sigmoid saturates without overflow for huge pre-activations")
{
    MlpParams m;
    m.layers.push_back({Eigen::MatrixXd::Constant(1, 1, 1e6), Eigen::VectorXd::Zero(1), Activation::sigmoid});
    Batch x(1, 2);
    x << 1.0, -1.0;
    const Batch y = forward(m, x);
    CHECK(std::isfinite(y(0, 0)));
    CHECK(y(0, 0) > 0.999);
    CHECK(y(0, 1) < 1e-12);
}

TEST_CASE("backward with zero upstream gradient is zero")
{
    RandomStream rng(7);
    const auto m = random_net(rng, {3, 4, 2}, {Activation::relu, Activation::softmax});
    ForwardCache cache;
    const Batch x = random_batch(rng, 3, 6);
    forward(m, x, &cache);
    const auto r = backward(m, cache, Batch::Zero(2, 6));
    for (double g : flatten(r.grads))
        CHECK(g == 0.0);
    CHECK(r.input_grad.isZero(0.0));
}

TEST_CASE("backward is linear in the upstream gradient")
{
    RandomStream rng(8);
    const auto m = random_net(rng, {3, 5, 1}, {Activation::relu, Activation::sigmoid});
    ForwardCache cache;
    const Batch x = random_batch(rng, 3, 4);
    forward(m, x, &cache);
    const Batch u = random_batch(rng, 1, 4);
    const auto g1 = flatten(backward(m, cache, u).grads);
    const auto g3 = flatten(backward(m, cache, 3.0 * u).grads);
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(g3[i] == doctest::Approx(3.0 * g1[i]).epsilon(1e-12));
}

TEST_CASE("backward of a tiny net matches central differences")
{
    RandomStream rng(9);
    const auto m = random_net(rng, {3, 4, 1}, {Activation::relu, Activation::sigmoid});
    const Batch x = random_batch(rng, 3, 5);
    const Batch u = random_batch(rng, 1, 5);
    CHECK(worst_parameter_error(m, x, u) < 1e-4);
}

TEST_CASE("backward matches central differences on 20 random configurations")
{
    RandomStream rng(10);
    const Activation hidden[] = {Activation::relu, Activation::sigmoid, Activation::identity};
    const Activation last[] = {Activation::sigmoid, Activation::softmax, Activation::identity, Activation::relu};
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const std::size_t depth = 1 + static_cast<std::size_t>(t % 4);
        std::vector<std::size_t> sizes{2 + rng.index_below(9)};
        std::vector<Activation> acts;
        for (std::size_t l = 0; l < depth; ++l) {
            sizes.push_back(2 + rng.index_below(9));
            acts.push_back(l + 1 == depth ? last[t % 4] : hidden[(t + l) % 3]);
        }
        const auto m = random_net(rng, sizes, acts);
        const Batch x = random_batch(rng, sizes.front(), 3);
        const Batch u = random_batch(rng, sizes.back(), 3);
        worst = std::max(worst, worst_parameter_error(m, x, u));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("backward input gradient matches central differences")
{
    RandomStream rng(11);
    const auto m = random_net(rng, {4, 6, 3}, {Activation::sigmoid, Activation::softmax});
    Batch x = random_batch(rng, 4, 2);
    const Batch u = random_batch(rng, 3, 2);
    ForwardCache cache;
    forward(m, x, &cache);
    const Batch analytic = backward(m, cache, u).input_grad;
    const double h = 1e-6;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double keep = x(r, c);
            x(r, c) = keep + h;
            const double up = contracted(m, x, u);
            x(r, c) = keep - h;
            const double down = contracted(m, x, u);
            x(r, c) = keep;
            CHECK(rel_err(analytic(r, c), (up - down) / (2.0 * h), 1e-7) < 1e-4);
        }
}

TEST_CASE("optimizer_step with zero gradient on a fresh state leaves parameters unchanged")
{
    RandomStream rng(12);
    auto m = random_net(rng, {3, 4, 1}, {Activation::relu, Activation::sigmoid});
    const auto before = m;
    auto st = make_optimizer_state(m);
    optimizer_step(m, MlpGrads::zeros_like(m), st, Direction::ascend);
    CHECK(m == before);
    CHECK(st.step == 1);
}

TEST_CASE("optimizer_step ascend on a constant positive gradient increases the parameter every step")
{
    MlpParams m;
    m.layers.push_back({Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1), Activation::identity});
    auto st = make_optimizer_state(m);
    auto g = MlpGrads::zeros_like(m);
    g.layers[0].weight(0, 0) = 0.3;
    double prev = m.layers[0].weight(0, 0);
    for (int s = 0; s < 50; ++s) {
        optimizer_step(m, g, st, Direction::ascend);
        CHECK(m.layers[0].weight(0, 0) > prev);
        prev = m.layers[0].weight(0, 0);
    }
}

TEST_CASE("ascending on f is bit-identical to descending on -f")
{
    RandomStream rng(13);
    auto a = random_net(rng, {3, 4, 2}, {Activation::relu, Activation::identity});
    auto b = a;
    auto sa = make_optimizer_state(a), sb = make_optimizer_state(b);
    for (int s = 0; s < 10; ++s) {
        auto g = MlpGrads::zeros_like(a);
        for (auto& l : g.layers) {
            for (Eigen::Index i = 0; i < l.weight.size(); ++i)
                l.weight.data()[i] = rng.uniform() - 0.5;
            for (Eigen::Index i = 0; i < l.bias.size(); ++i)
                l.bias(i) = rng.uniform() - 0.5;
        }
        auto neg = g;
        neg *= -1.0;
        optimizer_step(a, g, sa, Direction::ascend);
        optimizer_step(b, neg, sb, Direction::descend);
        CHECK(a == b);
    }
}

TEST_CASE("identical nets with identical gradient sequences stay identical")
{
    RandomStream rng(14);
    auto a = random_net(rng, {2, 3, 1}, {Activation::relu, Activation::sigmoid});
    auto b = a;
    OptimizerConfig sgd{.kind = OptimizerKind::sgd, .learning_rate = 0.1};
    auto sa = make_optimizer_state(a, sgd), sb = make_optimizer_state(b, sgd);
    for (int s = 0; s < 5; ++s) {
        ForwardCache ca, cb;
        const Batch x = random_batch(rng, 2, 4);
        forward(a, x, &ca);
        forward(b, x, &cb);
        optimizer_step(a, backward(a, ca, Batch::Ones(1, 4)).grads, sa, Direction::descend);
        optimizer_step(b, backward(b, cb, Batch::Ones(1, 4)).grads, sb, Direction::descend);
    }
    CHECK(a == b);
}

TEST_CASE("optimizer_step rejects non-finite gradients without touching parameters")
{
    RandomStream rng(15);
    auto m = random_net(rng, {2, 3, 1}, {Activation::relu, Activation::sigmoid});
    const auto before = m;
    auto st = make_optimizer_state(m);
    auto g = MlpGrads::zeros_like(m);
    g.layers[1].bias(0) = INFINITY;
    CHECK_THROWS_AS(optimizer_step(m, g, st, Direction::ascend), Error);
    CHECK(m == before);
    CHECK(st.step == 0);
}

TEST_CASE("mlp text format round-trips byte for byte")
{
    RandomStream rng(16);
    const auto m = random_net(rng, {6, 10, 10, 10, 1},
                              {Activation::relu, Activation::relu, Activation::relu, Activation::sigmoid});
    std::ostringstream first;
    write_mlp(first, m);
    std::istringstream in(first.str());
    const auto back = read_mlp(in);
    CHECK(back == m);
    std::ostringstream second;
    write_mlp(second, back);
    CHECK(second.str() == first.str());
}

TEST_CASE("read_mlp rejects malformed input")
{
    std::istringstream garbage("not-an-mlp 1\n");
    CHECK_THROWS_AS(read_mlp(garbage), Error);
    RandomStream rng(17);
    std::ostringstream os;
    write_mlp(os, random_net(rng, {2, 2}, {Activation::identity}));
    std::string text = os.str();
    std::istringstream truncated(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(read_mlp(truncated), Error);
}

TEST_CASE("validate rejects softmax before the last layer")
{
    MlpParams m;
    m.layers.push_back({Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2), Activation::softmax});
    m.layers.push_back({Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1), Activation::identity});
    CHECK_THROWS_AS(m.validate(), Error);
}
