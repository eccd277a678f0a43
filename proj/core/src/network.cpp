#include "eng/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace eng {

namespace {

void check_ids(const Network& net, UserId user, ItemId item) {
    if (user >= net.config.n_users)
        throw std::out_of_range("user id " + std::to_string(user) + " out of range (n_users=" +
                                std::to_string(net.config.n_users) + ")");
    if (item >= net.config.n_items)
        throw std::out_of_range("item id " + std::to_string(item) + " out of range (n_items=" +
                                std::to_string(net.config.n_items) + ")");
}

bool stochastic(ForwardMode mode) {
    return mode != ForwardMode::Deterministic;
}

// Activations of one forward pass, kept for the backward pass.
struct Trace {
    std::vector<std::vector<double>> inputs;     // input to each layer
    std::vector<std::vector<double>> pre;        // hidden pre-activations
    std::vector<std::vector<double>> mask;       // hidden dropout multipliers (0 or 1/(1-p))
    double logit = 0.0;
    double prob = 0.0;

    explicit Trace(const Network& net) {
        const auto& layers = net.params.layers;
        inputs.resize(layers.size());
        pre.resize(layers.size() - 1);
        mask.resize(layers.size() - 1);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            inputs[l].resize(layers[l].in);
            if (l + 1 < layers.size()) {
                pre[l].resize(layers[l].out);
                mask[l].resize(layers[l].out);
            }
        }
    }
};

void run_forward(const Network& net, UserId user, ItemId item, ForwardMode mode,
                 RngStream& rng, Trace& t) {
    const std::size_t d = net.config.embedding_dim;
    const auto& p = net.params;
    std::copy_n(p.user_embeddings.begin() + static_cast<std::ptrdiff_t>(user * d), d,
                t.inputs[0].begin());
    std::copy_n(p.item_embeddings.begin() + static_cast<std::ptrdiff_t>(item * d), d,
                t.inputs[0].begin() + static_cast<std::ptrdiff_t>(d));

    const double keep = 1.0 - net.config.dropout_rate;
    const bool drop = stochastic(mode) && net.config.dropout_rate > 0.0;
    const std::size_t n_hidden = p.layers.size() - 1;

    for (std::size_t l = 0; l < n_hidden; ++l) {
        const DenseLayer& layer = p.layers[l];
        const auto& x = t.inputs[l];
        auto& next = t.inputs[l + 1];
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double* w = layer.weight.data() + o * layer.in;
            double z = layer.bias[o];
            for (std::size_t i = 0; i < layer.in; ++i) z += w[i] * x[i];
            t.pre[l][o] = z;
            double m = 1.0;
            if (drop) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
            t.mask[l][o] = m;
            next[o] = (z > 0.0 ? z : 0.0) * m;
        }
    }

    const DenseLayer& out = p.layers.back();
    const auto& x = t.inputs[n_hidden];
    double z = out.bias[0];
    for (std::size_t i = 0; i < out.in; ++i) z += out.weight[i] * x[i];
    t.logit = z;
    t.prob = sigmoid(z);
}

} // namespace

void NetworkConfig::validate() const {
    if (n_users == 0 || n_items == 0)
        throw std::invalid_argument("network config: n_users and n_items must be positive");
    if (embedding_dim == 0)
        throw std::invalid_argument("network config: embedding_dim must be positive");
    if (hidden_sizes.empty() || hidden_sizes.size() > 3)
        throw std::invalid_argument("network config: 1 to 3 hidden layers required");
    for (auto h : hidden_sizes)
        if (h == 0) throw std::invalid_argument("network config: hidden sizes must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw std::invalid_argument("network config: dropout_rate must lie in [0, 1)");
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet z = *this;
    z.set_zero();
    return z;
}

void ParameterSet::set_zero() {
    for_each_array([](std::span<double> a, bool) { std::fill(a.begin(), a.end(), 0.0); });
}

std::size_t ParameterSet::size() const {
    std::size_t n = 0;
    for_each_array([&](std::span<const double> a, bool) { n += a.size(); });
    return n;
}

bool ParameterSet::all_finite() const {
    bool ok = true;
    for_each_array([&](std::span<const double> a, bool) {
        for (double v : a)
            if (!std::isfinite(v)) ok = false;
    });
    return ok;
}

bool ParameterSet::same_shape(const ParameterSet& other) const {
    if (user_embeddings.size() != other.user_embeddings.size() ||
        item_embeddings.size() != other.item_embeddings.size() ||
        layers.size() != other.layers.size())
        return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].in != other.layers[l].in || layers[l].out != other.layers[l].out ||
            layers[l].weight.size() != other.layers[l].weight.size() ||
            layers[l].bias.size() != other.layers[l].bias.size())
            return false;
    }
    return true;
}

Network zero_network(const NetworkConfig& config) {
    config.validate();
    Network net;
    net.config = config;
    const std::size_t d = config.embedding_dim;
    net.params.user_embeddings.assign(config.n_users * d, 0.0);
    net.params.item_embeddings.assign(config.n_items * d, 0.0);
    std::size_t in = 2 * d;
    auto add = [&](std::size_t out) {
        DenseLayer layer;
        layer.in = in;
        layer.out = out;
        layer.weight.assign(in * out, 0.0);
        layer.bias.assign(out, 0.0);
        net.params.layers.push_back(std::move(layer));
        in = out;
    };
    for (auto h : config.hidden_sizes) add(h);
    add(1);
    return net;
}

Network init_network(const NetworkConfig& config, RngStream rng) {
    Network net = zero_network(config);
    net.seed = rng.seed();
    const std::size_t d = config.embedding_dim;
    auto fill = [&](std::span<double> a, std::size_t fan_in, std::size_t fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : a) v = rng.uniform(-bound, bound);
    };
    fill(net.params.user_embeddings, config.n_users, d);
    fill(net.params.item_embeddings, config.n_items, d);
    for (auto& layer : net.params.layers) fill(layer.weight, layer.in, layer.out);
    return net;
}

std::size_t param_count(const Network& net) {
    return net.params.size();
}

double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double forward(const Network& net, UserId user, ItemId item, ForwardMode mode, RngStream& rng) {
    check_ids(net, user, item);
    Trace t(net);
    run_forward(net, user, item, mode, rng, t);
    return t.prob;
}

std::vector<double> forward_batch(const Network& net, std::span<const UserItem> pairs,
                                  ForwardMode mode, RngStream& rng) {
    std::vector<double> out;
    out.reserve(pairs.size());
    if (pairs.empty()) return out;
    Trace t(net);
    for (const auto& pr : pairs) {
        check_ids(net, pr.user, pr.item);
        run_forward(net, pr.user, pr.item, mode, rng, t);
        out.push_back(t.prob);
    }
    return out;
}

double squared_weight_norm(const ParameterSet& params) {
    double s = 0.0;
    params.for_each_array([&](std::span<const double> a, bool is_bias) {
        if (is_bias) return;
        for (double v : a) s += v * v;
    });
    return s;
}

LossAndGrads loss_and_grads(const Network& net, std::span<const UserItem> inputs,
                            const OutputLossFn& loss_fn, double l2_coeff, ForwardMode mode,
                            RngStream& rng) {
    if (inputs.empty()) throw std::invalid_argument("loss_and_grads: empty minibatch");
    LossAndGrads result;
    result.grads.ParameterSet::operator=(net.params.zeros_like());
    auto& g = result.grads;
    const std::size_t d = net.config.embedding_dim;
    const auto& layers = net.params.layers;
    const std::size_t n_hidden = layers.size() - 1;

    Trace t(net);
    std::vector<std::vector<double>> grad_in(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) grad_in[l].resize(layers[l].in);

    double data_loss = 0.0;
    for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
        const auto [user, item] = inputs[idx];
        check_ids(net, user, item);
        run_forward(net, user, item, mode, rng, t);
        const OutputLoss term = loss_fn(idx, t.prob);
        if (!std::isfinite(term.value) || !std::isfinite(term.d_prob))
            throw NonFiniteError("output term " + std::to_string(idx),
                                 "non-finite loss at output term " + std::to_string(idx) +
                                     " (p=" + std::to_string(t.prob) + ")");
        data_loss += term.value;

        // d loss / d logit through the sigmoid
        double dz = term.d_prob * t.prob * (1.0 - t.prob);

        {
            const DenseLayer& out = layers.back();
            DenseLayer& gout = g.layers.back();
            const auto& x = t.inputs[n_hidden];
            for (std::size_t i = 0; i < out.in; ++i) {
                gout.weight[i] += dz * x[i];
                grad_in[n_hidden][i] = dz * out.weight[i];
            }
            gout.bias[0] += dz;
        }
        for (std::size_t l = n_hidden; l-- > 0;) {
            const DenseLayer& layer = layers[l];
            DenseLayer& gl = g.layers[l];
            const auto& x = t.inputs[l];
            auto& gx = grad_in[l];
            std::fill(gx.begin(), gx.end(), 0.0);
            for (std::size_t o = 0; o < layer.out; ++o) {
                const double dh = grad_in[l + 1][o] * t.mask[l][o];
                const double dpre = t.pre[l][o] > 0.0 ? dh : 0.0;
                if (dpre == 0.0) continue;
                gl.bias[o] += dpre;
                const double* w = layer.weight.data() + o * layer.in;
                double* gw = gl.weight.data() + o * layer.in;
                for (std::size_t i = 0; i < layer.in; ++i) {
                    gw[i] += dpre * x[i];
                    gx[i] += dpre * w[i];
                }
            }
        }
        double* gu = g.user_embeddings.data() + user * d;
        double* gi = g.item_embeddings.data() + item * d;
        for (std::size_t k = 0; k < d; ++k) {
            gu[k] += grad_in[0][k];
            gi[k] += grad_in[0][d + k];
        }
    }

    double reg = 0.0;
    if (l2_coeff != 0.0) {
        reg = squared_weight_norm(net.params);
        auto add_reg = [&](const std::vector<double>& theta, std::vector<double>& grad) {
            for (std::size_t k = 0; k < theta.size(); ++k) grad[k] += 2.0 * l2_coeff * theta[k];
        };
        add_reg(net.params.user_embeddings, g.user_embeddings);
        add_reg(net.params.item_embeddings, g.item_embeddings);
        for (std::size_t l = 0; l < layers.size(); ++l)
            add_reg(layers[l].weight, g.layers[l].weight);
    }

    result.loss = data_loss + l2_coeff * reg;
    if (!std::isfinite(result.loss))
        throw NonFiniteError("l2 term", "non-finite regularized loss");
    if (!g.all_finite()) throw NonFiniteError("gradient", "non-finite gradient entry");
    return result;
}

OptimizerState OptimizerState::sgd(double learning_rate) {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    OptimizerState s;
    s.kind = OptimizerKind::Sgd;
    s.learning_rate = learning_rate;
    return s;
}

OptimizerState OptimizerState::adam(double learning_rate, double beta1, double beta2,
                                    double epsilon_hat) {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    OptimizerState s;
    s.kind = OptimizerKind::Adam;
    s.learning_rate = learning_rate;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon_hat = epsilon_hat;
    return s;
}

void apply_update(OptimizerState& opt, Network& net, const Gradients& grads) {
    if (!net.params.same_shape(grads))
        throw std::invalid_argument("apply_update: gradient shape does not match network");
    if (!grads.all_finite())
        throw NonFiniteError("gradient", "apply_update: non-finite gradient rejected");
    if (!(opt.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");

    std::vector<std::span<double>> theta;
    std::vector<std::span<const double>> g;
    net.params.for_each_array([&](std::span<double> a, bool) { theta.push_back(a); });
    grads.for_each_array([&](std::span<const double> a, bool) { g.push_back(a); });

    ++opt.step;
    if (opt.kind == OptimizerKind::Sgd) {
        for (std::size_t a = 0; a < theta.size(); ++a)
            for (std::size_t k = 0; k < theta[a].size(); ++k)
                theta[a][k] -= opt.learning_rate * g[a][k];
    } else {
        if (!opt.first_moment.same_shape(net.params)) {
            opt.first_moment = net.params.zeros_like();
            opt.second_moment = net.params.zeros_like();
        }
        std::vector<std::span<double>> m, v;
        opt.first_moment.for_each_array([&](std::span<double> a, bool) { m.push_back(a); });
        opt.second_moment.for_each_array([&](std::span<double> a, bool) { v.push_back(a); });
        const double t = static_cast<double>(opt.step);
        const double c1 = 1.0 - std::pow(opt.beta1, t);
        const double c2 = 1.0 - std::pow(opt.beta2, t);
        for (std::size_t a = 0; a < theta.size(); ++a) {
            for (std::size_t k = 0; k < theta[a].size(); ++k) {
                const double gk = g[a][k];
                m[a][k] = opt.beta1 * m[a][k] + (1.0 - opt.beta1) * gk;
                v[a][k] = opt.beta2 * v[a][k] + (1.0 - opt.beta2) * gk * gk;
                const double mhat = m[a][k] / c1;
                const double vhat = v[a][k] / c2;
                theta[a][k] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.epsilon_hat);
            }
        }
    }
    if (!net.params.all_finite())
        throw NonFiniteError("parameters", "apply_update produced non-finite parameters");
}

} // namespace eng
