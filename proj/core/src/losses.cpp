#include "eng/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace eng {

namespace {

double kl(double a, double b) {
    return a * std::log(a / b) + (1.0 - a) * std::log((1.0 - a) / (1.0 - b));
}

std::vector<UserItem> pairs_of(std::span<const Interaction> xs) {
    std::vector<UserItem> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(x.pair());
    return out;
}

void check_student_terms(const StudentTerms& t) {
    if (t.observed.empty()) throw std::invalid_argument("student_loss: empty observed batch");
    if (t.teacher_targets.size() != t.unobserved.size())
        throw std::invalid_argument("student_loss: teacher target count " +
                                    std::to_string(t.teacher_targets.size()) +
                                    " != unobserved batch size " +
                                    std::to_string(t.unobserved.size()));
}

bool uses_distillation(const StudentTerms& t) {
    return t.gamma_reg != 0.0 && !t.unobserved.empty();
}

} // namespace

std::string_view to_string(RegLossKind kind) noexcept {
    switch (kind) {
    case RegLossKind::MAE: return "mae";
    case RegLossKind::MSE: return "mse";
    case RegLossKind::KL: return "kl";
    case RegLossKind::Jeffreys: return "jeffreys";
    }
    return "?";
}

RegLossKind parse_reg_loss_kind(std::string_view s) {
    if (s == "mae") return RegLossKind::MAE;
    if (s == "mse") return RegLossKind::MSE;
    if (s == "kl") return RegLossKind::KL;
    if (s == "jeffreys") return RegLossKind::Jeffreys;
    throw std::invalid_argument("unknown reg loss kind '" + std::string(s) + "'");
}

double ClampPolicy::operator()(double p) const noexcept {
    return std::clamp(p, eps, 1.0 - eps);
}

double bce(double p_hat, int y, ClampPolicy clamp) {
    if (y != 0 && y != 1) throw std::invalid_argument("bce: label must be 0 or 1");
    const double p = clamp(p_hat);
    return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double bce_grad(double p_hat, int y, ClampPolicy clamp) {
    if (y != 0 && y != 1) throw std::invalid_argument("bce_grad: label must be 0 or 1");
    const double p = clamp(p_hat);
    return y == 1 ? -1.0 / p : 1.0 / (1.0 - p);
}

double weighted_empirical_risk(std::span<const double> losses, std::span<const double> weights) {
    if (losses.size() != weights.size())
        throw std::invalid_argument("weighted_empirical_risk: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (weights[i] < 0.0) throw std::invalid_argument("weighted_empirical_risk: negative weight");
        s += weights[i] * losses[i];
    }
    return s;
}

double l2_reg(const Network& net) {
    return squared_weight_norm(net.params);
}

double reg_loss(RegLossKind kind, double p_teacher, double p_student, ClampPolicy clamp) {
    const double t = clamp(p_teacher);
    const double s = clamp(p_student);
    switch (kind) {
    case RegLossKind::MAE: return std::abs(t - s);
    case RegLossKind::MSE: return (t - s) * (t - s);
    case RegLossKind::KL: return std::max(0.0, kl(t, s));
    case RegLossKind::Jeffreys: return std::max(0.0, kl(t, s) + kl(s, t));
    }
    throw std::invalid_argument("reg_loss: unknown kind");
}

double reg_loss_grad(RegLossKind kind, double p_teacher, double p_student, ClampPolicy clamp) {
    const double t = clamp(p_teacher);
    const double s = clamp(p_student);
    const double d_kl_ts = -t / s + (1.0 - t) / (1.0 - s);
    switch (kind) {
    case RegLossKind::MAE: return s > t ? 1.0 : (s < t ? -1.0 : 0.0);
    case RegLossKind::MSE: return 2.0 * (s - t);
    case RegLossKind::KL: return d_kl_ts;
    case RegLossKind::Jeffreys:
        return d_kl_ts + std::log(s / t) - std::log((1.0 - s) / (1.0 - t));
    }
    throw std::invalid_argument("reg_loss_grad: unknown kind");
}

LossBreakdown teacher_loss(const Network& teacher, std::span<const Interaction> batch, double lambda_t,
                           ClampPolicy clamp) {
    if (batch.empty()) throw std::invalid_argument("teacher_loss: empty batch");
    RngStream unused(0);
    const auto pairs = pairs_of(batch);
    const auto probs = forward_batch(teacher, pairs, ForwardMode::Deterministic, unused);
    LossBreakdown b;
    for (std::size_t i = 0; i < batch.size(); ++i) b.data_term += bce(probs[i], batch[i].label, clamp);
    b.data_term /= static_cast<double>(batch.size());
    b.lambda = lambda_t;
    b.reg_term = l2_reg(teacher);
    b.total = b.recompose();
    return b;
}

LossBreakdown student_loss(const Network& student, const StudentTerms& terms, ClampPolicy clamp) {
    check_student_terms(terms);
    RngStream unused(0);
    const auto obs_pairs = pairs_of(terms.observed);
    const auto probs = forward_batch(student, obs_pairs, ForwardMode::Deterministic, unused);
    LossBreakdown b;
    for (std::size_t i = 0; i < probs.size(); ++i) b.data_term += bce(probs[i], terms.observed[i].label, clamp);
    b.data_term /= static_cast<double>(probs.size());
    if (!terms.unobserved.empty()) {
        const auto ps = forward_batch(student, terms.unobserved, ForwardMode::Deterministic, unused);
        for (std::size_t i = 0; i < ps.size(); ++i)
            b.distill_term += reg_loss(terms.kind, terms.teacher_targets[i], ps[i], clamp);
        b.distill_term /= static_cast<double>(ps.size());
    }
    b.gamma_reg = terms.gamma_reg;
    b.lambda = terms.lambda_s;
    b.reg_term = l2_reg(student);
    b.total = b.recompose();
    return b;
}

LossWithGrads teacher_loss_and_grads(const Network& teacher, std::span<const Interaction> batch,
                                     double lambda_t, ForwardMode mode, RngStream& rng,
                                     ClampPolicy clamp) {
    if (batch.empty()) throw std::invalid_argument("teacher_loss: empty batch");
    const auto pairs = pairs_of(batch);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double data = 0.0;
    auto fn = [&](std::size_t i, double p) {
        const double v = bce(p, batch[i].label, clamp);
        data += v;
        return OutputLoss{v * inv_n, bce_grad(p, batch[i].label, clamp) * inv_n};
    };
    auto lg = loss_and_grads(teacher, pairs, fn, lambda_t, mode, rng);
    LossWithGrads out;
    out.breakdown.data_term = data * inv_n;
    out.breakdown.lambda = lambda_t;
    out.breakdown.reg_term = l2_reg(teacher);
    out.breakdown.total = out.breakdown.recompose();
    out.grads = std::move(lg.grads);
    return out;
}

LossWithGrads student_loss_and_grads(const Network& student, const StudentTerms& terms,
                                     ForwardMode mode, RngStream& rng, ClampPolicy clamp) {
    check_student_terms(terms);
    const bool distill = uses_distillation(terms);
    const std::size_t n_obs = terms.observed.size();
    const std::size_t n_unobs = distill ? terms.unobserved.size() : 0;

    auto inputs = pairs_of(terms.observed);
    if (distill) inputs.insert(inputs.end(), terms.unobserved.begin(), terms.unobserved.end());

    const double inv_obs = 1.0 / static_cast<double>(n_obs);
    const double w_unobs = distill ? terms.gamma_reg / static_cast<double>(n_unobs) : 0.0;
    double data = 0.0;
    double dist = 0.0;
    auto fn = [&](std::size_t i, double p) {
        if (i < n_obs) {
            const int y = terms.observed[i].label;
            const double v = bce(p, y, clamp);
            data += v;
            return OutputLoss{v * inv_obs, bce_grad(p, y, clamp) * inv_obs};
        }
        const double t = terms.teacher_targets[i - n_obs];
        const double v = reg_loss(terms.kind, t, p, clamp);
        dist += v;
        return OutputLoss{v * w_unobs, reg_loss_grad(terms.kind, t, p, clamp) * w_unobs};
    };
    auto lg = loss_and_grads(student, inputs, fn, terms.lambda_s, mode, rng);

    LossWithGrads out;
    out.breakdown.data_term = data * inv_obs;
    out.breakdown.distill_term = n_unobs ? dist / static_cast<double>(n_unobs) : 0.0;
    out.breakdown.gamma_reg = terms.gamma_reg;
    out.breakdown.lambda = terms.lambda_s;
    out.breakdown.reg_term = l2_reg(student);
    out.breakdown.total = out.breakdown.recompose();
    out.grads = std::move(lg.grads);
    return out;
}

std::vector<double> teacher_targets(const Network& teacher, std::span<const UserItem> pairs) {
    RngStream unused(0);
    return forward_batch(teacher, pairs, ForwardMode::Deterministic, unused);
}

} // namespace eng
