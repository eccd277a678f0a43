#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "eng/data.hpp"
#include "eng/network.hpp"

namespace eng {

/// Distillation discrepancy between teacher and student probabilities.
enum class RegLossKind { MAE, MSE, KL, Jeffreys };

std::string_view to_string(RegLossKind kind) noexcept;
RegLossKind parse_reg_loss_kind(std::string_view s);

/// Every probability entering a logarithm is clamped into [eps, 1-eps].
struct ClampPolicy {
    double eps = 1e-7;
    double operator()(double p) const noexcept;
};

/// total = data_term + gamma_reg * distill_term + lambda * reg_term
struct LossBreakdown {
    double data_term = 0.0;
    double distill_term = 0.0;
    double reg_term = 0.0;
    double gamma_reg = 0.0;
    double lambda = 0.0;
    double total = 0.0;

    double recompose() const noexcept { return data_term + gamma_reg * distill_term + lambda * reg_term; }
};

double bce(double p_hat, int y, ClampPolicy clamp = {});
/// d bce / d p_hat. Uses the clamped probability and passes straight through
/// the clamp, so saturated wrong predictions still receive a gradient.
double bce_grad(double p_hat, int y, ClampPolicy clamp = {});

/// sum_i w_i * l_i. Throws on length mismatch or negative weights.
double weighted_empirical_risk(std::span<const double> losses, std::span<const double> weights);

/// Sum of squared embedding and weight-matrix entries; biases excluded.
double l2_reg(const Network& net);

/// MAE |t-s|, MSE (t-s)^2, KL(t||s) with the teacher as reference,
/// Jeffreys KL(t||s) + KL(s||t).
double reg_loss(RegLossKind kind, double p_teacher, double p_student, ClampPolicy clamp = {});
/// Derivative with respect to the student probability; the teacher is a constant.
double reg_loss_grad(RegLossKind kind, double p_teacher, double p_student, ClampPolicy clamp = {});

/// Mean BCE over a uniform batch + lambda_t * l2_reg(teacher).
LossBreakdown teacher_loss(const Network& teacher, std::span<const Interaction> batch, double lambda_t,
                           ClampPolicy clamp = {});

struct StudentTerms {
    std::span<const Interaction> observed;
    std::span<const UserItem> unobserved;
    std::span<const double> teacher_targets;  // same length as unobserved
    double gamma_reg = 0.0;
    double lambda_s = 0.0;
    RegLossKind kind = RegLossKind::Jeffreys;
};

/// Mean BCE over the observed batch + gamma_reg * mean reg_loss on the
/// unobserved batch + lambda_s * l2_reg(student). Deterministic scoring.
LossBreakdown student_loss(const Network& student, const StudentTerms& terms, ClampPolicy clamp = {});

struct LossWithGrads {
    LossBreakdown breakdown;
    Gradients grads;
};

/// Value and gradient of the teacher objective under `mode` (masks shared).
LossWithGrads teacher_loss_and_grads(const Network& teacher, std::span<const Interaction> batch,
                                     double lambda_t, ForwardMode mode, RngStream& rng,
                                     ClampPolicy clamp = {});

/// Value and gradient of the student objective under `mode`. Teacher targets
/// enter as constants, so no gradient reaches the teacher.
LossWithGrads student_loss_and_grads(const Network& student, const StudentTerms& terms,
                                     ForwardMode mode, RngStream& rng, ClampPolicy clamp = {});

/// Teacher targets for distillation, always scored without dropout.
std::vector<double> teacher_targets(const Network& teacher, std::span<const UserItem> pairs);

} // namespace eng
