#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eng/rng.hpp"

namespace eng {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

struct UserItem {
    UserId user = 0;
    ItemId item = 0;
    friend bool operator==(const UserItem&, const UserItem&) = default;
};

/// Raised when a loss, gradient or parameter stops being finite.
/// `term()` names the offending quantity.
class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(std::string term, const std::string& what)
        : std::runtime_error(what), term_(std::move(term)) {}
    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

enum class InitRule { FanUniform };

struct NetworkConfig {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::size_t embedding_dim = 8;
    std::vector<std::size_t> hidden_sizes{32};
    double dropout_rate = 0.0;
    InitRule init_rule = InitRule::FanUniform;

    /// Throws std::invalid_argument on zero dims, 0 or >3 hidden layers,
    /// or a dropout rate outside [0, 1).
    void validate() const;
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Fully connected layer; `weight` is out x in, row-major.
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weight;
    std::vector<double> bias;
};

/// Every trainable array of the scorer, in declaration order:
/// user embeddings, item embeddings, then (weight, bias) per dense layer.
/// The same layout backs parameters, gradients and optimizer moments.
struct ParameterSet {
    std::vector<double> user_embeddings;  // n_users x embedding_dim
    std::vector<double> item_embeddings;  // n_items x embedding_dim
    std::vector<DenseLayer> layers;       // hidden layers, then the 1-wide output layer

    /// Visits each array as (span, is_bias).
    template <class F>
    void for_each_array(F&& f) {
        f(std::span<double>(user_embeddings), false);
        f(std::span<double>(item_embeddings), false);
        for (auto& layer : layers) {
            f(std::span<double>(layer.weight), false);
            f(std::span<double>(layer.bias), true);
        }
    }
    template <class F>
    void for_each_array(F&& f) const {
        f(std::span<const double>(user_embeddings), false);
        f(std::span<const double>(item_embeddings), false);
        for (const auto& layer : layers) {
            f(std::span<const double>(layer.weight), false);
            f(std::span<const double>(layer.bias), true);
        }
    }

    ParameterSet zeros_like() const;
    std::size_t size() const;
    bool all_finite() const;
    bool same_shape(const ParameterSet& other) const;
    void set_zero();
};

struct Gradients : ParameterSet {};

struct Network {
    NetworkConfig config;
    ParameterSet params;
    std::uint64_t seed = 0;
};

enum class ForwardMode {
    Deterministic,        // no dropout
    TrainDropout,         // fresh inverted-dropout masks, used while fitting
    StochasticInference,  // fresh inverted-dropout masks, used for posterior-sample scoring
};

/// Fan-based uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
/// Draws come from `rng` only; the network records `rng.seed()`.
Network init_network(const NetworkConfig& config, RngStream rng);

/// All-zero parameters with the right shapes.
Network zero_network(const NetworkConfig& config);

std::size_t param_count(const Network& net);

double sigmoid(double z) noexcept;

/// p(r=1 | user, item). Stochastic modes consume `rng`; Deterministic does not.
double forward(const Network& net, UserId user, ItemId item, ForwardMode mode, RngStream& rng);

/// Elementwise forward; each element gets its own mask draw in stochastic modes.
std::vector<double> forward_batch(const Network& net, std::span<const UserItem> pairs,
                                  ForwardMode mode, RngStream& rng);

/// Per-output loss contribution and its derivative with respect to the
/// predicted probability. Sample weights are folded in by the caller.
struct OutputLoss {
    double value = 0.0;
    double d_prob = 0.0;
};
using OutputLossFn = std::function<OutputLoss(std::size_t index, double prob)>;

struct LossAndGrads {
    double loss = 0.0;
    Gradients grads;
};

/// Sum of squares of embeddings and weight matrices (biases excluded).
double squared_weight_norm(const ParameterSet& params);

/// Scalar loss  sum_i loss_fn(i, p_i) + l2_coeff * squared_weight_norm
/// and its exact gradient. One dropout mask per input is drawn and shared by
/// the value and the gradient. Throws NonFiniteError when any term is not finite.
LossAndGrads loss_and_grads(const Network& net, std::span<const UserItem> inputs,
                            const OutputLossFn& loss_fn, double l2_coeff, ForwardMode mode,
                            RngStream& rng);

enum class OptimizerKind { Sgd, Adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon_hat = 1e-8;
    std::uint64_t step = 0;
    ParameterSet first_moment;
    ParameterSet second_moment;

    static OptimizerState sgd(double learning_rate);
    static OptimizerState adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                               double epsilon_hat = 1e-8);
};

/// In-place update. Non-finite or shape-mismatched gradients are rejected
/// before anything is touched.
void apply_update(OptimizerState& opt, Network& net, const Gradients& grads);

} // namespace eng
