#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tdmoe/random.hpp"

namespace tdmoe {

enum class Activation : std::uint8_t { relu, sigmoid, softmax, identity };

const char* to_string(Activation a) noexcept;
Activation activation_from_string(std::string_view name);

/// Batches are column-major: one column per sample, one row per feature.
using Batch = Eigen::MatrixXd;

struct DenseLayer {
    Eigen::MatrixXd weight; ///< out x in
    Eigen::VectorXd bias;   ///< out
    Activation activation = Activation::identity;

    std::size_t in() const noexcept { return static_cast<std::size_t>(weight.cols()); }
    std::size_t out() const noexcept { return static_cast<std::size_t>(weight.rows()); }
};

struct MlpParams {
    std::vector<DenseLayer> layers;

    std::size_t input_width() const noexcept { return layers.empty() ? 0 : layers.front().in(); }
    std::size_t output_width() const noexcept { return layers.empty() ? 0 : layers.back().out(); }
    std::size_t parameter_count() const noexcept;

    /// Dimensions chain, softmax only last, parameters finite.
    void validate() const;

    bool operator==(const MlpParams& other) const;
};

struct ForwardCache {
    Batch input;
    std::vector<Batch> pre;  ///< per layer, before activation
    std::vector<Batch> post; ///< per layer, after activation
};

struct LayerGrads {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
};

struct MlpGrads {
    std::vector<LayerGrads> layers;

    static MlpGrads zeros_like(const MlpParams& m);
    bool all_finite() const;
    MlpGrads& operator+=(const MlpGrads& other);
    MlpGrads& operator*=(double c);
};

/// Weights uniform with He limit sqrt(6/fan_in) on relu layers and Glorot
/// limit sqrt(6/(fan_in+fan_out)) elsewhere; zero biases.
MlpParams init_mlp(std::span<const std::size_t> layer_sizes, std::span<const Activation> activations,
                   RandomStream& rng);

/// Pass a cache to keep the intermediates needed by backward().
Batch forward(const MlpParams& m, const Batch& x, ForwardCache* cache = nullptr);

struct BackwardResult {
    MlpGrads grads;
    Batch input_grad;
};

/// Reverse-mode gradients of a scalar loss given dLoss/dOutput for every column.
/// Gradients are summed over the batch columns.
BackwardResult backward(const MlpParams& m, const ForwardCache& cache, const Batch& output_grad);

enum class Direction { ascend, descend };
enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    OptimizerConfig config;
    std::uint64_t step = 0;
    MlpGrads first_moment;
    MlpGrads second_moment;
};

OptimizerState make_optimizer_state(const MlpParams& m, const OptimizerConfig& config = {});

/// Ascend on f is bit-identical to descend on -f. Non-finite gradients throw
/// before anything is modified.
void optimizer_step(MlpParams& m, const MlpGrads& grads, OptimizerState& state, Direction direction);

/// All parameters in layer order, each layer's weight row-major then bias.
std::vector<double> flatten(const MlpParams& m);
std::vector<double> flatten(const MlpGrads& g);
void assign_flat(MlpParams& m, std::span<const double> values);

/// Versioned text format; write -> read -> write is byte-identical.
void write_mlp(std::ostream& os, const MlpParams& m);
MlpParams read_mlp(std::istream& is);

} // namespace tdmoe
