#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "eng/losses.hpp"

using namespace eng;

namespace {

NetworkConfig tiny(std::size_t dim = 2, std::vector<std::size_t> hidden = {3}) {
    NetworkConfig c;
    c.n_users = 4;
    c.n_items = 4;
    c.embedding_dim = dim;
    c.hidden_sizes = std::move(hidden);
    return c;
}

// Single network whose output is a chosen constant: zero weights, output bias = logit(p).
Network constant_net(double p) {
    auto net = zero_network(tiny());
    net.params.layers.back().bias[0] = std::log(p / (1 - p));
    return net;
}

constexpr RegLossKind kAllKinds[] = {RegLossKind::MAE, RegLossKind::MSE, RegLossKind::KL, RegLossKind::Jeffreys};

} // namespace

TEST(Bce, ClosedForms) {
    EXPECT_NEAR(bce(0.5, 1), 0.693147, 1e-6);
    EXPECT_NEAR(bce(0.9, 0), 2.302585, 1e-6);
    EXPECT_NEAR(bce(1.0, 1), 0.0, 1e-6);
    EXPECT_NEAR(bce(1.0, 1), -std::log(1 - 1e-7), 1e-15);
    EXPECT_TRUE(std::isfinite(bce(0.0, 1)));
}

TEST(Bce, GradientMatchesDerivative) {
    for (double p : {0.1, 0.4, 0.77})
        for (int y : {0, 1}) {
            const double h = 1e-7;
            EXPECT_NEAR(bce_grad(p, y), (bce(p + h, y) - bce(p - h, y)) / (2 * h), 1e-6);
        }
}

TEST(Bce, RejectsBadLabel) {
    EXPECT_THROW(bce(0.5, 2), std::invalid_argument);
}

TEST(WeightedRisk, Examples) {
    const std::vector<double> l{1.0, 3.0};
    EXPECT_DOUBLE_EQ(weighted_empirical_risk(l, std::vector<double>{0.25, 0.75}), 2.5);
    EXPECT_DOUBLE_EQ(weighted_empirical_risk(l, std::vector<double>{0.5, 0.5}), 2.0);
    EXPECT_DOUBLE_EQ(weighted_empirical_risk(l, std::vector<double>{0.0, 0.0}), 0.0);
    EXPECT_THROW(weighted_empirical_risk(l, std::vector<double>{1.0}), std::invalid_argument);
    EXPECT_THROW(weighted_empirical_risk(l, std::vector<double>{1.0, -1.0}), std::invalid_argument);
}

TEST(L2Reg, Examples) {
    auto net = zero_network(tiny());
    EXPECT_EQ(l2_reg(net), 0.0);
    net.params.layers[0].weight[0] = 2.0;
    net.params.layers[0].bias[0] = 5.0;
    EXPECT_DOUBLE_EQ(l2_reg(net), 4.0);

    auto r = init_network(tiny(3, {4, 2}), RngStream(2));
    const double base = l2_reg(r);
    r.params.for_each_array([](std::span<double> a, bool is_bias) {
        if (!is_bias)
            for (double& v : a) v *= 3.0;
    });
    EXPECT_NEAR(l2_reg(r), 9.0 * base, 1e-12 * base);
}

TEST(RegLoss, KlClosedForm) {
    const double expected = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    EXPECT_NEAR(reg_loss(RegLossKind::KL, 0.9, 0.5), expected, 1e-12);
    EXPECT_NEAR(reg_loss(RegLossKind::KL, 0.9, 0.5), 0.368064, 1e-6);
}

TEST(RegLoss, OtherKindsClosedForm) {
    EXPECT_DOUBLE_EQ(reg_loss(RegLossKind::MAE, 0.2, 0.7), 0.5);
    EXPECT_DOUBLE_EQ(reg_loss(RegLossKind::MSE, 0.2, 0.7), 0.25);
    EXPECT_NEAR(reg_loss(RegLossKind::Jeffreys, 0.2, 0.7),
                reg_loss(RegLossKind::KL, 0.2, 0.7) + reg_loss(RegLossKind::KL, 0.7, 0.2), 1e-15);
}

TEST(RegLoss, IdentityNonnegativitySymmetry) {
    RngStream rng(5);
    for (int i = 0; i < 10000; ++i) {
        const double t = rng.uniform01(), s = rng.uniform01();
        for (auto k : kAllKinds) {
            EXPECT_EQ(reg_loss(k, t, t), 0.0);
            EXPECT_GE(reg_loss(k, t, s), 0.0);
        }
        EXPECT_EQ(reg_loss(RegLossKind::Jeffreys, t, s), reg_loss(RegLossKind::Jeffreys, s, t));
    }
}

TEST(RegLoss, GradientMatchesDerivative) {
    for (auto k : kAllKinds)
        for (double t : {0.15, 0.6})
            for (double s : {0.3, 0.85}) {
                const double h = 1e-7;
                EXPECT_NEAR(reg_loss_grad(k, t, s), (reg_loss(k, t, s + h) - reg_loss(k, t, s - h)) / (2 * h), 1e-6)
                    << to_string(k);
            }
}

TEST(RegLoss, ParseNames) {
    for (auto k : kAllKinds) EXPECT_EQ(parse_reg_loss_kind(to_string(k)), k);
    EXPECT_THROW(parse_reg_loss_kind("hellinger"), std::invalid_argument);
}

TEST(TeacherLoss, SingleSampleLn2) {
    const auto net = zero_network(tiny());
    const std::vector<Interaction> batch{make_interaction(0, 0, 5, Source::Uniform)};
    const auto b = teacher_loss(net, batch, 0.0);
    EXPECT_NEAR(b.total, std::log(2.0), 1e-15);
}

TEST(TeacherLoss, ZeroNetIgnoresLambda) {
    const auto net = zero_network(tiny());
    const std::vector<Interaction> batch{make_interaction(0, 0, 5, Source::Uniform),
                                         make_interaction(1, 2, 3, Source::Uniform)};
    const auto b = teacher_loss(net, batch, 1.0);
    EXPECT_NEAR(b.total, std::log(2.0), 1e-15);
    EXPECT_EQ(b.reg_term, 0.0);
}

TEST(TeacherLoss, LambdaLinearity) {
    const auto net = init_network(tiny(), RngStream(3));
    const std::vector<Interaction> batch{make_interaction(0, 1, 5, Source::Uniform),
                                         make_interaction(2, 3, 1, Source::Uniform)};
    const auto a = teacher_loss(net, batch, 0.1);
    const auto b = teacher_loss(net, batch, 0.2);
    EXPECT_EQ(a.data_term, b.data_term);
    EXPECT_NEAR(b.lambda * b.reg_term, 2.0 * a.lambda * a.reg_term, 1e-15);
    EXPECT_NEAR(a.recompose(), a.total, 1e-12);
}

TEST(StudentLoss, CombinedClosedForm) {
    const auto student = zero_network(tiny());
    const std::vector<Interaction> obs{make_interaction(0, 0, 5, Source::Biased)};
    const std::vector<UserItem> unobs{{1, 1}};
    const std::vector<double> targets{0.9};
    StudentTerms t{obs, unobs, targets, 1.0, 0.0, RegLossKind::KL};
    const auto b = student_loss(student, t);
    EXPECT_NEAR(b.data_term, 0.693147, 1e-6);
    EXPECT_NEAR(b.distill_term, 0.368064, 1e-6);
    EXPECT_NEAR(b.total, 1.061211, 1e-6);
    EXPECT_NEAR(b.recompose(), b.total, 1e-12);
}

TEST(StudentLoss, GammaZeroIsTeacherForm) {
    const auto net = init_network(tiny(), RngStream(8));
    const std::vector<Interaction> obs{make_interaction(0, 1, 5, Source::Biased),
                                       make_interaction(3, 2, 2, Source::Uniform)};
    const std::vector<UserItem> unobs{{1, 1}, {2, 2}};
    const std::vector<double> targets{0.1, 0.8};
    StudentTerms t{obs, unobs, targets, 0.0, 0.05, RegLossKind::Jeffreys};
    const auto s = student_loss(net, t);
    const auto te = teacher_loss(net, obs, 0.05);
    EXPECT_NEAR(s.total, te.total, 1e-15);
}

TEST(StudentLoss, MatchingTeacherHasZeroDistill) {
    const auto teacher = init_network(tiny(), RngStream(4));
    const std::vector<Interaction> obs{make_interaction(0, 1, 5, Source::Biased)};
    const std::vector<UserItem> unobs{{1, 1}, {2, 3}, {3, 0}};
    const auto targets = teacher_targets(teacher, unobs);
    for (auto k : kAllKinds) {
        StudentTerms t{obs, unobs, targets, 1.0, 0.0, k};
        EXPECT_EQ(student_loss(teacher, t).distill_term, 0.0);
    }
}

TEST(StudentLoss, TargetLengthMismatchThrows) {
    const auto net = zero_network(tiny());
    const std::vector<Interaction> obs{make_interaction(0, 0, 5, Source::Biased)};
    const std::vector<UserItem> unobs{{1, 1}};
    const std::vector<double> targets{0.9, 0.1};
    StudentTerms t{obs, unobs, targets, 1.0, 0.0, RegLossKind::KL};
    EXPECT_THROW(student_loss(net, t), std::invalid_argument);
}

TEST(LossGrads, ValueMatchesBreakdownAndFiniteDifferences) {
    auto net = init_network(tiny(3, {4, 3}), RngStream(12));
    net.params.for_each_array([](std::span<double> a, bool is_bias) {
        if (is_bias)
            for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.1 * static_cast<double>(i + 1);
    });
    const std::vector<Interaction> obs{make_interaction(0, 1, 5, Source::Biased),
                                       make_interaction(3, 2, 2, Source::Uniform),
                                       make_interaction(2, 0, 4, Source::Biased)};
    const std::vector<UserItem> unobs{{1, 1}, {2, 2}, {0, 3}};
    const std::vector<double> targets{0.2, 0.7, 0.45};
    for (auto k : kAllKinds) {
        StudentTerms t{obs, unobs, targets, 0.7, 0.01, k};
        RngStream rng(1);
        const auto lg = student_loss_and_grads(net, t, ForwardMode::Deterministic, rng);
        EXPECT_NEAR(lg.breakdown.total, student_loss(net, t).total, 1e-12);

        std::vector<double> analytic, numeric;
        lg.grads.for_each_array([&](std::span<const double> a, bool) { analytic.insert(analytic.end(), a.begin(), a.end()); });
        std::vector<double*> slots;
        net.params.for_each_array([&](std::span<double> a, bool) {
            for (double& v : a) slots.push_back(&v);
        });
        for (double* p : slots) {
            const double saved = *p, h = 1e-6;
            *p = saved + h;
            const double up = student_loss(net, t).total;
            *p = saved - h;
            const double down = student_loss(net, t).total;
            *p = saved;
            numeric.push_back((up - down) / (2 * h));
        }
        double diff = 0.0, norm = 0.0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            norm += analytic[i] * analytic[i] + numeric[i] * numeric[i];
        }
        EXPECT_LT(std::sqrt(diff / norm), 1e-4) << to_string(k);
    }
}

TEST(LossGrads, TeacherValueMatchesBreakdown) {
    const auto net = init_network(tiny(), RngStream(6));
    const std::vector<Interaction> batch{make_interaction(0, 1, 5, Source::Uniform),
                                         make_interaction(2, 3, 1, Source::Uniform)};
    RngStream rng(1);
    const auto lg = teacher_loss_and_grads(net, batch, 0.3, ForwardMode::Deterministic, rng);
    const auto b = teacher_loss(net, batch, 0.3);
    EXPECT_NEAR(lg.breakdown.total, b.total, 1e-12);
    EXPECT_NEAR(lg.breakdown.recompose(), lg.breakdown.total, 1e-12);
}

TEST(TeacherTargets, UseDeterministicScoring) {
    NetworkConfig c = tiny();
    c.dropout_rate = 0.5;
    const auto teacher = init_network(c, RngStream(9));
    const std::vector<UserItem> pairs{{0, 0}, {1, 2}};
    const auto a = teacher_targets(teacher, pairs);
    const auto b = teacher_targets(teacher, pairs);
    EXPECT_EQ(a, b);
    RngStream rng;
    EXPECT_EQ(a[1], forward(teacher, 1, 2, ForwardMode::Deterministic, rng));
}

TEST(ConstantNet, ProducesChosenProbability) {
    RngStream rng;
    EXPECT_NEAR(forward(constant_net(0.9), 0, 0, ForwardMode::Deterministic, rng), 0.9, 1e-15);
}
