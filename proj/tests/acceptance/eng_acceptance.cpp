#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eng/losses.hpp"
#include "eng/metrics.hpp"
#include "eng/runner.hpp"

using namespace eng;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum class Verdict { Pass, Fail, Blocked };

struct Outcome {
    Verdict verdict = Verdict::Fail;
    std::string detail;
};

Outcome pass(std::string d) { return {Verdict::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Verdict::Fail, std::move(d)}; }
Outcome blocked(std::string d) { return {Verdict::Blocked, std::move(d)}; }
Outcome check(bool ok, std::string d) { return {ok ? Verdict::Pass : Verdict::Fail, std::move(d)}; }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path scratch_dir(const std::string& tag) {
    const auto dir = fs::temp_directory_path() / ("eng_acceptance_" + std::to_string(::getpid())) / tag;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::optional<fs::path> env_dir(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    fs::path p(v);
    if (!fs::is_directory(p)) return std::nullopt;
    return p;
}

std::vector<std::uint64_t> seed_range(std::uint64_t lo, std::uint64_t hi) {
    std::vector<std::uint64_t> s;
    for (auto i = lo; i <= hi; ++i) s.push_back(i);
    return s;
}

// ---------------------------------------------------------------- 1

std::vector<double> flatten(const ParameterSet& p) {
    std::vector<double> out;
    p.for_each_array([&](std::span<const double> a, bool) { out.insert(out.end(), a.begin(), a.end()); });
    return out;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        norm += a[i] * a[i] + b[i] * b[i];
    }
    return norm == 0.0 ? 0.0 : std::sqrt(diff / norm);
}

std::vector<double> numeric_grad(Network net, const std::function<double(const Network&)>& f) {
    std::vector<double*> slots;
    net.params.for_each_array([&](std::span<double> a, bool) {
        for (double& v : a) slots.push_back(&v);
    });
    std::vector<double> g;
    g.reserve(slots.size());
    const double h = 1e-6;
    for (double* p : slots) {
        const double saved = *p;
        *p = saved + h;
        const double up = f(net);
        *p = saved - h;
        const double down = f(net);
        *p = saved;
        g.push_back((up - down) / (2 * h));
    }
    return g;
}

Outcome gradient_oracle() {
    RngStream rng(101);
    const RegLossKind kinds[] = {RegLossKind::MAE, RegLossKind::MSE, RegLossKind::KL, RegLossKind::Jeffreys};
    const int n_nets = 12;
    double worst = 0.0;
    int checks = 0;
    for (int n = 0; n < n_nets; ++n) {
        NetworkConfig c;
        c.n_users = 2 + rng.uniform_index(7);
        c.n_items = 2 + rng.uniform_index(7);
        c.embedding_dim = 1 + rng.uniform_index(8);
        c.hidden_sizes.assign(1 + rng.uniform_index(3), 0);
        for (auto& h : c.hidden_sizes) h = 1 + rng.uniform_index(8);
        auto net = init_network(c, rng.split("net", n));
        // Nonzero biases keep pre-activations away from the ReLU kink.
        auto brng = rng.split("bias", n);
        net.params.for_each_array([&](std::span<double> a, bool is_bias) {
            if (is_bias)
                for (double& v : a) v = brng.uniform(-0.5, 0.5);
        });

        std::vector<Interaction> obs;
        for (int i = 0; i < 6; ++i)
            obs.push_back(make_interaction(static_cast<UserId>(rng.uniform_index(c.n_users)),
                                           static_cast<ItemId>(rng.uniform_index(c.n_items)),
                                           1 + static_cast<int>(rng.uniform_index(5)),
                                           i % 2 ? Source::Biased : Source::Uniform));
        std::vector<UserItem> unobs;
        std::vector<double> targets;
        for (int i = 0; i < 5; ++i) {
            unobs.push_back({static_cast<UserId>(rng.uniform_index(c.n_users)),
                             static_cast<ItemId>(rng.uniform_index(c.n_items))});
            targets.push_back(rng.uniform(0.05, 0.95));
        }
        const double lambda = rng.uniform(0.0, 0.05);

        RngStream unused(0);
        const auto tg = teacher_loss_and_grads(net, obs, lambda, ForwardMode::Deterministic, unused);
        const auto tn = numeric_grad(net, [&](const Network& m) { return teacher_loss(m, obs, lambda).total; });
        worst = std::max(worst, rel_error(flatten(tg.grads), tn));
        ++checks;

        const auto kind = kinds[n % 4];
        StudentTerms terms{obs, unobs, targets, rng.uniform(0.1, 2.0), lambda, kind};
        const auto sg = student_loss_and_grads(net, terms, ForwardMode::Deterministic, unused);
        const auto sn = numeric_grad(net, [&](const Network& m) { return student_loss(m, terms).total; });
        worst = std::max(worst, rel_error(flatten(sg.grads), sn));
        ++checks;
    }
    return check(worst < 1e-4, fmt("max relative error %.3g over %d gradients on %d networks (limit 1e-4)",
                                   worst, checks, n_nets));
}

// ---------------------------------------------------------------- 2

Outcome auc_oracle() {
    RngStream rng(202);
    double worst = 0.0;
    std::size_t tied = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(49);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.uniform01();
            y[i] = rng.bernoulli(0.5);
        }
        for (std::size_t i = 0; i < n / 3; ++i) s[rng.uniform_index(n)] = s[rng.uniform_index(n)];
        y[0] = 1;
        y[1] = 0;
        double wins = 0.0, pairs = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (y[i] == 1 && y[j] == 0) {
                    pairs += 1.0;
                    if (s[i] > s[j]) wins += 1.0;
                    else if (s[i] == s[j]) { wins += 0.5; ++tied; }
                }
        worst = std::max(worst, std::abs(auc(s, y) - wins / pairs));
    }
    return check(worst <= 1e-12,
                 fmt("max |rank - pairwise| = %.3g over 1000 instances, %zu tied pos/neg pairs", worst, tied));
}

// ---------------------------------------------------------------- 3

Outcome loss_identities() {
    RngStream rng(303);
    const RegLossKind kinds[] = {RegLossKind::MAE, RegLossKind::MSE, RegLossKind::KL, RegLossKind::Jeffreys};
    double max_self = 0.0, max_asym = 0.0, min_kl = 0.0, max_recompose = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double t = rng.uniform01();
        const double s = rng.uniform01();
        for (auto k : kinds) max_self = std::max(max_self, std::abs(reg_loss(k, t, t)));
        max_asym = std::max(max_asym, std::abs(reg_loss(RegLossKind::Jeffreys, t, s) -
                                               reg_loss(RegLossKind::Jeffreys, s, t)));
        min_kl = std::min(min_kl, reg_loss(RegLossKind::KL, t, s));
    }

    NetworkConfig c;
    c.n_users = 6;
    c.n_items = 5;
    c.embedding_dim = 3;
    c.hidden_sizes = {4};
    for (int n = 0; n < 50; ++n) {
        const auto net = init_network(c, rng.split("net", n));
        std::vector<Interaction> obs;
        for (int i = 0; i < 8; ++i)
            obs.push_back(make_interaction(static_cast<UserId>(rng.uniform_index(6)),
                                           static_cast<ItemId>(rng.uniform_index(5)),
                                           1 + static_cast<int>(rng.uniform_index(5)), Source::Biased));
        std::vector<UserItem> unobs{{0, 0}, {1, 4}, {5, 2}};
        std::vector<double> targets{rng.uniform01(), rng.uniform01(), rng.uniform01()};
        StudentTerms terms{obs, unobs, targets, rng.uniform(0, 3), rng.uniform(0, 0.1), kinds[n % 4]};
        const auto b = student_loss(net, terms);
        const auto tb = teacher_loss(net, obs, rng.uniform(0, 0.1));
        max_recompose = std::max({max_recompose, std::abs(b.recompose() - b.total),
                                  std::abs(tb.recompose() - tb.total)});
    }
    const bool ok = max_self == 0.0 && max_asym == 0.0 && min_kl >= 0.0 && max_recompose <= 1e-12;
    return check(ok, fmt("max reg(t,t) %.3g, Jeffreys asymmetry %.3g, min KL %.3g, recomposition error %.3g",
                         max_self, max_asym, min_kl, max_recompose));
}

// ---------------------------------------------------------------- 4

Outcome loader_fidelity() {
    const auto coat = env_dir("ENG_COAT_DIR");
    const auto yahoo = env_dir("ENG_YAHOO_DIR");
    if (!coat && !yahoo) return blocked("ENG_COAT_DIR and ENG_YAHOO_DIR not set; Coat and YahooR3 files unavailable");

    std::vector<std::string> parts;
    bool ok = true;
    auto near = [](double a, double b) { return std::abs(a - b) <= 0.005; };
    if (coat) {
        const auto d = load_coat(*coat / "train.ascii", *coat / "test.ascii");
        const auto nr = d.count(Source::Uniform), nb = d.count(Source::Biased);
        const double pr_r = d.positive_ratio(Source::Uniform), pr_b = d.positive_ratio(Source::Biased);
        ok = ok && nr == 4640 && nb == 6594 && near(pr_r, 0.05) && near(pr_b, 0.09);
        parts.push_back(fmt("coat %zu/%zu PR (%.4f, %.4f)", nr, nb, pr_r, pr_b));
    }
    if (yahoo) {
        const auto d = load_yahoo(*yahoo / "ydata-ymusic-rating-study-v1-u-train.txt",
                                  *yahoo / "ydata-ymusic-rating-study-v1-u-test.txt");
        const auto nr = d.count(Source::Uniform), nb = d.count(Source::Biased);
        const double pr_r = d.positive_ratio(Source::Uniform), pr_b = d.positive_ratio(Source::Biased);
        ok = ok && nr == 54000 && nb == 311704 && near(pr_r, 0.03) && near(pr_b, 0.24);
        parts.push_back(fmt("yahoo %zu/%zu PR (%.4f, %.4f)", nr, nb, pr_r, pr_b));
    }
    std::string detail;
    for (const auto& p : parts) detail += (detail.empty() ? "" : "; ") + p;
    if (!ok) return fail(detail);
    if (!coat) return blocked(detail + "; ENG_COAT_DIR not set");
    if (!yahoo) return blocked(detail + "; ENG_YAHOO_DIR not set");
    return pass(detail);
}

// ---------------------------------------------------------------- 5-7

std::optional<fs::path> prepared_coat(const std::string& tag) {
    const auto coat = env_dir("ENG_COAT_DIR");
    if (!coat) return std::nullopt;
    const auto dir = scratch_dir(tag) / "coat";
    prepare_coat(*coat / "train.ascii", *coat / "test.ascii", dir);
    return dir;
}

ExperimentConfig coat_config(const fs::path& dir, Method m, Schema schema) {
    ExperimentConfig c;
    c.dataset.kind = "prepared";
    c.dataset.dir = dir;
    c.method = m;
    c.schema = schema;
    if (schema == Schema::Sequential) c.per_round_uniform_ratio = 0.05;
    return c;
}

// Validation-only sweep; returns the chosen config with the evaluation seeds.
ExperimentConfig tuned(const ExperimentConfig& base, json grid) {
    const auto res = sweep(grid_from_json(json{{"base", to_json(base)}, {"grid", std::move(grid)}}));
    auto c = res.best_config;
    std::cerr << "  " << to_string(base.method) << " best: " << res.cells[res.best].label
              << fmt(" (val AUC %.4f)", res.cells[res.best].val_auc) << "\n";
    return c;
}

Aggregate evaluate_seeds(ExperimentConfig c, std::size_t n_seeds) {
    c.seeds = seed_range(1, n_seeds);
    c.out.clear();
    return run(c).summary;
}

Outcome coat_conventional() {
    const auto dir = prepared_coat("c5");
    if (!dir) return blocked("ENG_COAT_DIR not set; Coat files unavailable");
    const json eng_grid{{"gamma_reg", {1e-3, 1e-2, 1e-1, 1.0}},
                        {"lambda_t", {1e-4, 1e-3, 1e-2}},
                        {"lambda_s", {1e-4, 1e-3, 1e-2}},
                        {"minibatch_size", {64, 256}}};
    const json base_grid{{"lambda_s", {1e-4, 1e-3, 1e-2}}, {"minibatch_size", {64, 256}}};

    const auto eng = evaluate_seeds(tuned(coat_config(*dir, Method::EngJeffreys, Schema::Conventional), eng_grid), 10);
    const auto uni = evaluate_seeds(tuned(coat_config(*dir, Method::Union, Schema::Conventional), base_grid), 10);
    const auto unf = evaluate_seeds(tuned(coat_config(*dir, Method::Uniform, Schema::Conventional), base_grid), 10);
    const bool ok = eng.auc_mean >= 0.80 && eng.auc_mean - uni.auc_mean >= 0.04 && eng.auc_mean > uni.auc_mean &&
                    uni.auc_mean > unf.auc_mean;
    return check(ok, fmt("AUC EnG-Jeffreys %.4f, Union %.4f, Uniform %.4f (need >= 0.80, gap >= 0.04, ordered)",
                         eng.auc_mean, uni.auc_mean, unf.auc_mean));
}

Outcome coat_sequential() {
    const auto dir = prepared_coat("c6");
    if (!dir) return blocked("ENG_COAT_DIR not set; Coat files unavailable");
    const json eng_grid{{"gamma_reg", {1e-2, 1e-1, 1.0}}, {"lambda_s", {1e-4, 1e-3}}};
    const json base_grid{{"lambda_s", {1e-4, 1e-3, 1e-2}}};
    const auto eng = evaluate_seeds(tuned(coat_config(*dir, Method::EngKl, Schema::Sequential), eng_grid), 10);
    const auto uni = evaluate_seeds(tuned(coat_config(*dir, Method::Union, Schema::Sequential), base_grid), 10);
    const bool ok = eng.auc_mean >= 0.75 && eng.auc_mean - uni.auc_mean >= 0.04;
    return check(ok, fmt("sequential AUC EnG-KL %.4f, Union %.4f (need >= 0.75, gap >= 0.04)", eng.auc_mean,
                         uni.auc_mean));
}

Outcome thompson_direction() {
    const auto dir = prepared_coat("c7");
    if (!dir) return blocked("ENG_COAT_DIR not set; Coat files unavailable");
    auto on = coat_config(*dir, Method::EngKl, Schema::Sequential);
    on.sequential.thompson = true;
    auto off = on;
    off.sequential.thompson = false;
    const auto a = evaluate_seeds(on, 10);
    const auto b = evaluate_seeds(off, 10);
    const bool ok = a.bce_mean <= b.bce_mean + 0.01 && a.auc_mean >= b.auc_mean - 0.005;
    return check(ok, fmt("TS on AUC %.4f BCE %.4f; TS off AUC %.4f BCE %.4f", a.auc_mean, a.bce_mean, b.auc_mean,
                         b.bce_mean));
}

// ---------------------------------------------------------------- 8-9

ExperimentConfig synthetic_config(Method m, const fs::path& out) {
    ExperimentConfig c;
    c.dataset.kind = "synthetic";
    c.method = m;
    c.seeds = seed_range(1, 10);
    c.out = out;
    return c;
}

Outcome synthetic_oracle() {
    const auto dir = scratch_dir("c8");
    const auto eng = run(synthetic_config(Method::EngJeffreys, dir / "eng")).summary;
    const auto uni = run(synthetic_config(Method::Union, dir / "union")).summary;
    const double margin = uni.bce_mean - eng.bce_mean;
    return check(margin > 0.0, fmt("test BCE EnG-Jeffreys %.5f, Union %.5f, margin %.5f over %zu seeds",
                                   eng.bce_mean, uni.bce_mean, margin, eng.n));
}

Outcome determinism() {
    const auto dir = scratch_dir("c9");
    std::vector<ExperimentConfig> cfgs;
    cfgs.push_back(synthetic_config(Method::EngJeffreys, dir / "conventional"));
    auto seq = synthetic_config(Method::EngKl, dir / "sequential");
    seq.schema = Schema::Sequential;
    seq.sequential.batches = 5;
    seq.seeds = seed_range(1, 3);
    cfgs.push_back(seq);
    auto par = synthetic_config(Method::Union, dir / "parallel");
    par.jobs = 2;
    cfgs.push_back(par);

    std::size_t compared = 0;
    std::vector<std::string> bad;
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        run(cfgs[i]);
        const auto rep = replay(cfgs[i].out / "manifest.json", dir / ("replay_" + std::to_string(i)));
        compared += rep.compared;
        if (!rep.identical)
            bad.insert(bad.end(), rep.mismatches.begin(), rep.mismatches.end());
    }
    std::string detail = fmt("%zu records replayed from %zu manifests", compared, cfgs.size());
    if (!bad.empty()) detail += "; first mismatch: " + bad.front();
    return check(bad.empty() && compared > 0, detail);
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*fn)();
};

const Criterion kCriteria[] = {
    {1, "gradient-oracle", gradient_oracle},     {2, "auc-oracle", auc_oracle},
    {3, "loss-identities", loss_identities},     {4, "loader-fidelity", loader_fidelity},
    {5, "coat-conventional", coat_conventional}, {6, "coat-sequential", coat_sequential},
    {7, "thompson-direction", thompson_direction}, {8, "synthetic-debiasing", synthetic_oracle},
    {9, "replay-determinism", determinism},
};

Outcome run_one(const Criterion& c, double& seconds) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = c.fn();
    } catch (const std::exception& e) {
        o = fail(std::string("error: ") + e.what());
    }
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return o;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    std::vector<int> only;
    app.add_option("--criterion,-c", only, "Criterion number(s) to run (default: all)")->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);

    bool any_fail = false, any_blocked = false;
    for (const auto& c : kCriteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        double sec = 0.0;
        const auto o = run_one(c, sec);
        const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "BLOCKED";
        std::cout << tag << "  criterion " << c.id << " " << c.name << ": " << o.detail
                  << fmt(" [%.1fs]", sec) << std::endl;
        any_fail = any_fail || o.verdict == Verdict::Fail;
        any_blocked = any_blocked || o.verdict == Verdict::Blocked;
    }
    fs::remove_all(fs::temp_directory_path() / ("eng_acceptance_" + std::to_string(::getpid())));
    if (any_fail) return 1;
    return any_blocked ? 77 : 0;
}
