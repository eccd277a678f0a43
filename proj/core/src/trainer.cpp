#include "eng/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace eng {

namespace {

struct Distillation {
    const Network* teacher = nullptr;
    UnobservedSampler* unobserved = nullptr;
    double gamma_reg = 0.0;
    RegLossKind kind = RegLossKind::Jeffreys;
};

OptimizerState make_optimizer(const TrainConfig& cfg) {
    return cfg.optimizer == OptimizerKind::Adam ? OptimizerState::adam(cfg.learning_rate)
                                                : OptimizerState::sgd(cfg.learning_rate);
}

double validation_bce(const Network& net, std::span<const Interaction> val) {
    std::vector<UserItem> pairs;
    std::vector<int> labels;
    pairs.reserve(val.size());
    labels.reserve(val.size());
    for (const auto& x : val) {
        pairs.push_back(x.pair());
        labels.push_back(x.label);
    }
    RngStream unused(0);
    return bce_eval(forward_batch(net, pairs, ForwardMode::Deterministic, unused), labels);
}

// Minibatch training with early stopping on validation BCE. A null teacher
// (or gamma_reg == 0) fits BCE + L2 only.
Network fit(const NetworkConfig& net_cfg, double lambda, std::span<const Interaction> observed,
            const Distillation& distill, std::span<const Interaction> val, const TrainConfig& cfg,
            RngStream rng) {
    if (observed.empty()) throw std::invalid_argument("training: empty observed data");
    if (val.empty()) throw std::invalid_argument("training: empty validation data");

    Network net = init_network(net_cfg, rng.split("init"));
    OptimizerState opt = make_optimizer(cfg);
    RngStream order_rng = rng.split("order");
    RngStream dropout_rng = rng.split("dropout");
    EarlyStopper stopper(cfg.patience);

    const bool use_teacher = distill.teacher != nullptr && distill.gamma_reg != 0.0;
    std::vector<std::size_t> order(observed.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Interaction> batch;
    batch.reserve(cfg.minibatch_size);

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.minibatch_size);
            batch.clear();
            for (std::size_t k = start; k < end; ++k) batch.push_back(observed[order[k]]);

            Gradients grads;
            if (use_teacher) {
                const auto unobs = distill.unobserved->sample(cfg.unobserved_batch_size);
                const auto targets = teacher_targets(*distill.teacher, unobs);
                StudentTerms terms{batch, unobs, targets, distill.gamma_reg, lambda, distill.kind};
                grads = student_loss_and_grads(net, terms, ForwardMode::TrainDropout, dropout_rng).grads;
            } else {
                grads = teacher_loss_and_grads(net, batch, lambda, ForwardMode::TrainDropout, dropout_rng)
                            .grads;
            }
            apply_update(opt, net, grads);
        }
        if (!cfg.early_stopping) continue;
        if (stopper.update(validation_bce(net, val), net)) break;
    }
    return cfg.early_stopping ? stopper.best() : net;
}

std::vector<Interaction> concat(std::span<const Interaction> a, std::span<const Interaction> b) {
    std::vector<Interaction> out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

TrainConfig for_round(const TrainConfig& cfg, std::size_t round) {
    TrainConfig c = cfg;
    c.seed = RngStream(cfg.seed).split("round", round).seed();
    return c;
}

} // namespace

std::string_view to_string(Method m) noexcept {
    switch (m) {
    case Method::EngMae: return "eng_mae";
    case Method::EngMse: return "eng_mse";
    case Method::EngKl: return "eng_kl";
    case Method::EngJeffreys: return "eng_jeffreys";
    case Method::Union: return "union";
    case Method::Uniform: return "uniform";
    }
    return "?";
}

Method parse_method(std::string_view s) {
    for (auto m : {Method::EngMae, Method::EngMse, Method::EngKl, Method::EngJeffreys, Method::Union,
                   Method::Uniform})
        if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

bool is_eng(Method m) noexcept {
    return m != Method::Union && m != Method::Uniform;
}

RegLossKind reg_kind_of(Method m) {
    switch (m) {
    case Method::EngMae: return RegLossKind::MAE;
    case Method::EngMse: return RegLossKind::MSE;
    case Method::EngKl: return RegLossKind::KL;
    case Method::EngJeffreys: return RegLossKind::Jeffreys;
    default: throw std::invalid_argument("baseline methods have no distillation loss");
    }
}

void TrainConfig::validate() const {
    if (lambda_t < 0.0 || lambda_s < 0.0 || gamma_reg < 0.0)
        throw std::invalid_argument("train config: regularization weights must be nonnegative");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be positive");
    if (minibatch_size == 0 || unobserved_batch_size == 0)
        throw std::invalid_argument("train config: batch sizes must be positive");
    if (max_epochs == 0) throw std::invalid_argument("train config: max_epochs must be positive");
    if (patience == 0) throw std::invalid_argument("train config: patience must be at least 1");
}

void TrainConfig::validate_for_distillation() const {
    validate();
    teacher.validate();
    student.validate();
    const auto p = param_count(zero_network(teacher));
    const auto q = param_count(zero_network(student));
    if (!(p < q))
        throw std::invalid_argument("train config: teacher must have fewer parameters than student (" +
                                    std::to_string(p) + " >= " + std::to_string(q) + ")");
}

TrainConfig TrainConfig::with_dims(std::size_t n_users, std::size_t n_items) const {
    TrainConfig c = *this;
    c.teacher.n_users = c.student.n_users = n_users;
    c.teacher.n_items = c.student.n_items = n_items;
    return c;
}

void SequentialConfig::validate() const {
    if (batches == 0) throw std::invalid_argument("sequential config: M must be at least 1");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("sequential config: rho must lie in (0, 1]");
}

double uniform_fraction_for_ratio(std::size_t n_uniform, std::size_t n_biased, double ratio) {
    if (n_uniform == 0) throw std::invalid_argument("uniform_fraction_for_ratio: no uniform data");
    const double f = ratio * static_cast<double>(n_biased) / static_cast<double>(n_uniform);
    return std::clamp(f, 1e-6, 0.999);
}

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_bce_(std::numeric_limits<double>::infinity()) {
    if (patience == 0) throw std::invalid_argument("early stopper: patience must be at least 1");
}

bool EarlyStopper::update(double validation_bce, const Network& net) {
    const std::size_t epoch = epoch_++;
    if (!best_ || validation_bce < best_bce_) {
        best_bce_ = validation_bce;
        best_epoch_ = epoch;
        best_ = net;
        since_ = 0;
        return false;
    }
    ++since_;
    return since_ >= patience_;
}

const Network& EarlyStopper::best() const {
    if (!best_) throw std::logic_error("early stopper: no epoch recorded");
    return *best_;
}

Network train_teacher(std::span<const Interaction> uniform_train,
                      std::span<const Interaction> uniform_val, const TrainConfig& cfg) {
    cfg.validate();
    if (uniform_train.empty()) throw std::invalid_argument("train_teacher: empty training set");
    for (const auto& x : uniform_train)
        if (x.source != Source::Uniform)
            throw std::invalid_argument("train_teacher: teacher data must come from the uniform log");
    return fit(cfg.teacher, cfg.lambda_t, uniform_train, {}, uniform_val, cfg,
               RngStream(cfg.seed).split("teacher"));
}

Network train_student(const Network& teacher, std::span<const Interaction> selected_uniform,
                      std::span<const Interaction> selected_biased, UnobservedSampler& unobserved,
                      std::span<const Interaction> uniform_val, const TrainConfig& cfg) {
    cfg.validate();
    const auto observed = concat(selected_uniform, selected_biased);
    if (observed.empty()) throw std::invalid_argument("train_student: empty observed data");
    Distillation d{&teacher, &unobserved, cfg.gamma_reg, cfg.reg_kind};
    return fit(cfg.student, cfg.lambda_s, observed, d, uniform_val, cfg,
               RngStream(cfg.seed).split("student"));
}

Network train_union(std::span<const Interaction> all_data, std::span<const Interaction> uniform_val,
                    const TrainConfig& cfg) {
    cfg.validate();
    if (all_data.empty()) throw std::invalid_argument("train_union: empty data");
    return fit(cfg.student, cfg.lambda_s, all_data, {}, uniform_val, cfg,
               RngStream(cfg.seed).split("student"));
}

Network train_uniform(std::span<const Interaction> uniform_train,
                      std::span<const Interaction> uniform_val, const TrainConfig& cfg) {
    return train_union(uniform_train, uniform_val, cfg);
}

std::size_t winner_count(std::size_t batch_size, double rho) {
    if (batch_size == 0) return 0;
    const auto k = static_cast<std::size_t>(std::floor(rho * static_cast<double>(batch_size) + 1e-9));
    return std::clamp<std::size_t>(k, 1, batch_size);
}

Selection select_winners(const Network& model, std::span<const Interaction> batch, double rho,
                         bool thompson, RngStream& rng) {
    if (batch.empty()) throw std::invalid_argument("select_winners: empty batch");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("select_winners: rho must lie in (0, 1]");
    std::vector<UserItem> pairs;
    pairs.reserve(batch.size());
    for (const auto& x : batch) pairs.push_back(x.pair());
    const auto mode = thompson ? ForwardMode::StochasticInference : ForwardMode::Deterministic;
    const auto scores = forward_batch(model, pairs, mode, rng);

    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const std::size_t k = winner_count(batch.size(), rho);
    Selection s;
    s.winners.reserve(k);
    s.discarded.reserve(batch.size() - k);
    for (std::size_t r = 0; r < order.size(); ++r)
        (r < k ? s.winners : s.discarded).push_back(batch[order[r]]);
    return s;
}

SequentialState run_sequential(std::span<const Interaction> uniform_train,
                               std::span<const Interaction> biased, UnobservedSampler& unobserved,
                               std::span<const Interaction> uniform_val,
                               std::span<const Interaction> eval_set, const TrainConfig& cfg_in,
                               const SequentialConfig& scfg, Method method) {
    scfg.validate();
    TrainConfig cfg = cfg_in;
    if (is_eng(method)) {
        cfg.reg_kind = reg_kind_of(method);
        cfg.validate_for_distillation();
    } else {
        cfg.validate();
        cfg.student.validate();
    }

    RngStream root(cfg.seed);
    RngStream batch_rng = root.split("partition");
    const auto uniform_batches = partition_batches(uniform_train, scfg.batches, batch_rng);
    const auto biased_batches = partition_batches(biased, scfg.batches, batch_rng);

    SequentialState state;
    state.model = init_network(cfg.student, root.split("student", 0));

    for (std::size_t i = 1; i <= scfg.batches; ++i) {
        state.round = i;
        RngStream select_rng = root.split("select", i);
        auto sel = select_winners(state.model, biased_batches[i - 1], scfg.rho, scfg.thompson, select_rng);
        state.selected_biased.insert(state.selected_biased.end(), sel.winners.begin(), sel.winners.end());
        state.discarded.insert(state.discarded.end(), sel.discarded.begin(), sel.discarded.end());
        const auto& d_r = uniform_batches[i - 1];
        state.selected_uniform.insert(state.selected_uniform.end(), d_r.begin(), d_r.end());

        const TrainConfig round_cfg = for_round(cfg, i);
        switch (method) {
        case Method::Union:
            state.model = train_union(concat(state.selected_uniform, state.selected_biased), uniform_val,
                                      round_cfg);
            break;
        case Method::Uniform:
            state.model = train_uniform(state.selected_uniform, uniform_val, round_cfg);
            break;
        default: {
            const Network teacher = train_teacher(state.selected_uniform, uniform_val, round_cfg);
            state.model = train_student(teacher, state.selected_uniform, state.selected_biased, unobserved,
                                        uniform_val, round_cfg);
        }
        }

        RoundRecord rec;
        rec.round = i;
        rec.metrics = evaluate(state.model, eval_set);
        rec.n_selected_uniform = state.selected_uniform.size();
        rec.n_selected_biased = state.selected_biased.size();
        state.history.push_back(rec);
    }
    return state;
}

ConventionalResult run_conventional(std::span<const Interaction> uniform_train,
                                    std::span<const Interaction> biased, UnobservedSampler& unobserved,
                                    std::span<const Interaction> uniform_val,
                                    std::span<const Interaction> eval_set, const TrainConfig& cfg_in,
                                    Method method) {
    TrainConfig cfg = cfg_in;
    ConventionalResult r;
    switch (method) {
    case Method::Union:
        cfg.validate();
        r.model = train_union(concat(uniform_train, biased), uniform_val, cfg);
        break;
    case Method::Uniform:
        cfg.validate();
        r.model = train_uniform(uniform_train, uniform_val, cfg);
        break;
    default:
        cfg.reg_kind = reg_kind_of(method);
        cfg.validate_for_distillation();
        r.teacher = train_teacher(uniform_train, uniform_val, cfg);
        r.model = train_student(*r.teacher, uniform_train, biased, unobserved, uniform_val, cfg);
    }
    r.metrics = evaluate(r.model, eval_set);
    return r;
}

} // namespace eng
