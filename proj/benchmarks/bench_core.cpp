#include <benchmark/benchmark.h>

#include <vector>

#include "eng/losses.hpp"
#include "eng/metrics.hpp"
#include "eng/trainer.hpp"

using namespace eng;

namespace {

NetworkConfig student_shape() {
    NetworkConfig c;
    c.n_users = 290;
    c.n_items = 300;
    c.embedding_dim = 16;
    c.hidden_sizes = {64, 32};
    c.dropout_rate = 0.1;
    return c;
}

std::vector<UserItem> pairs(std::size_t n, RngStream rng) {
    std::vector<UserItem> out(n);
    for (auto& p : out) p = {static_cast<UserId>(rng.uniform_index(290)), static_cast<ItemId>(rng.uniform_index(300))};
    return out;
}

} // namespace

static void BM_ForwardBatch(benchmark::State& state) {
    const auto net = init_network(student_shape(), RngStream(1));
    const auto x = pairs(static_cast<std::size_t>(state.range(0)), RngStream(2));
    const auto mode = state.range(1) ? ForwardMode::StochasticInference : ForwardMode::Deterministic;
    RngStream rng(3);
    for (auto _ : state) benchmark::DoNotOptimize(forward_batch(net, x, mode, rng));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBatch)->Args({64, 0})->Args({64, 1})->Args({4096, 0});

static void BM_StudentLossAndGrads(benchmark::State& state) {
    const auto net = init_network(student_shape(), RngStream(1));
    RngStream rng(4);
    std::vector<Interaction> obs;
    for (const auto& p : pairs(64, RngStream(5)))
        obs.push_back(make_interaction(p.user, p.item, 1 + static_cast<int>(rng.uniform_index(5)), Source::Biased));
    const auto unobs = pairs(64, RngStream(6));
    std::vector<double> targets(64, 0.3);
    StudentTerms terms{obs, unobs, targets, 0.1, 1e-3, RegLossKind::Jeffreys};
    for (auto _ : state) benchmark::DoNotOptimize(student_loss_and_grads(net, terms, ForwardMode::TrainDropout, rng));
}
BENCHMARK(BM_StudentLossAndGrads);

static void BM_AdamStep(benchmark::State& state) {
    auto net = init_network(student_shape(), RngStream(1));
    RngStream rng(7);
    std::vector<Interaction> obs;
    for (const auto& p : pairs(64, RngStream(8))) obs.push_back(make_interaction(p.user, p.item, 5, Source::Uniform));
    auto opt = OptimizerState::adam(1e-3);
    for (auto _ : state) {
        const auto lg = teacher_loss_and_grads(net, obs, 1e-3, ForwardMode::TrainDropout, rng);
        apply_update(opt, net, lg.grads);
    }
}
BENCHMARK(BM_AdamStep);

static void BM_Auc(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    RngStream rng(9);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.uniform01();
        y[i] = rng.bernoulli(0.3);
    }
    y[0] = 1;
    y[1] = 0;
    for (auto _ : state) benchmark::DoNotOptimize(auc(s, y));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);

static void BM_UnobservedSample(benchmark::State& state) {
    SyntheticParams p;
    const auto [world, data] = generate_synthetic(p);
    UnobservedSampler sampler(data, RngStream(10));
    for (auto _ : state) benchmark::DoNotOptimize(sampler.sample(64));
}
BENCHMARK(BM_UnobservedSample);

static void BM_SelectWinners(benchmark::State& state) {
    const auto net = init_network(student_shape(), RngStream(1));
    std::vector<Interaction> batch;
    for (const auto& p : pairs(330, RngStream(11))) batch.push_back(make_interaction(p.user, p.item, 3, Source::Biased));
    RngStream rng(12);
    for (auto _ : state) benchmark::DoNotOptimize(select_winners(net, batch, 0.5, state.range(0) != 0, rng));
}
BENCHMARK(BM_SelectWinners)->Arg(0)->Arg(1);
BENCHMARK_MAIN();
