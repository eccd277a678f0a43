#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "eng/data.hpp"
#include "eng/losses.hpp"
#include "eng/metrics.hpp"
#include "eng/network.hpp"

namespace eng {

enum class Method { EngMae, EngMse, EngKl, EngJeffreys, Union, Uniform };

std::string_view to_string(Method m) noexcept;
Method parse_method(std::string_view s);
bool is_eng(Method m) noexcept;
/// Distillation loss of an EnG method. Throws for the baselines.
RegLossKind reg_kind_of(Method m);

struct TrainConfig {
    NetworkConfig teacher{0, 0, 4, {16}, 0.1};
    NetworkConfig student{0, 0, 16, {64, 32}, 0.1};
    double lambda_t = 1e-3;
    double lambda_s = 1e-3;
    double gamma_reg = 1e-1;
    RegLossKind reg_kind = RegLossKind::Jeffreys;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    std::size_t minibatch_size = 64;
    std::size_t unobserved_batch_size = 64;
    std::size_t max_epochs = 50;
    std::size_t patience = 3;
    /// When false, every epoch runs and the final parameters are returned.
    bool early_stopping = true;
    std::uint64_t seed = 0;

    /// Shape-independent checks (positive sizes, patience >= 1, ...).
    void validate() const;
    /// validate() plus network configs and param_count(teacher) < param_count(student).
    void validate_for_distillation() const;
    /// Copy with n_users / n_items of both networks set.
    TrainConfig with_dims(std::size_t n_users, std::size_t n_items) const;
};

struct SequentialConfig {
    std::size_t batches = 20;  // M
    double rho = 0.5;          // selection fraction per biased batch
    bool thompson = true;      // dropout-sampled scoring during selection

    void validate() const;
};

/// Uniform-train fraction that makes each round's uniform slice about
/// `ratio` times the size of its biased batch.
double uniform_fraction_for_ratio(std::size_t n_uniform, std::size_t n_biased, double ratio);

/// Tracks validation BCE; stops once `patience` epochs pass without a strict
/// improvement and keeps a copy of the best network.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience);

    /// Records one epoch. Returns true when training should stop.
    bool update(double validation_bce, const Network& net);
    const Network& best() const;
    double best_bce() const noexcept { return best_bce_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }
    std::size_t epochs_since_improvement() const noexcept { return since_; }

private:
    std::size_t patience_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t since_ = 0;
    double best_bce_;
    std::optional<Network> best_;
};

/// Teacher on uniform data only (BCE + lambda_t * L2), early-stopped on validation BCE.
Network train_teacher(std::span<const Interaction> uniform_train,
                      std::span<const Interaction> uniform_val, const TrainConfig& cfg);

/// Student on S^r u S^b with teacher distillation on sampled unobserved pairs.
Network train_student(const Network& teacher, std::span<const Interaction> selected_uniform,
                      std::span<const Interaction> selected_biased, UnobservedSampler& unobserved,
                      std::span<const Interaction> uniform_val, const TrainConfig& cfg);

/// Lone student-sized network on all given data (BCE + lambda_s * L2).
Network train_union(std::span<const Interaction> all_data, std::span<const Interaction> uniform_val,
                    const TrainConfig& cfg);

/// train_union restricted to uniform training data.
Network train_uniform(std::span<const Interaction> uniform_train,
                      std::span<const Interaction> uniform_val, const TrainConfig& cfg);

struct Selection {
    std::vector<Interaction> winners;
    std::vector<Interaction> discarded;
};

/// Top floor(rho * |batch|) (at least 1) by score, ties to the lower index.
/// Scores are posterior samples (one dropout pass per item) when `thompson`.
Selection select_winners(const Network& model, std::span<const Interaction> batch, double rho,
                         bool thompson, RngStream& rng);

std::size_t winner_count(std::size_t batch_size, double rho);

struct RoundRecord {
    std::size_t round = 0;  // 1-based
    MetricsResult metrics;
    std::size_t n_selected_uniform = 0;
    std::size_t n_selected_biased = 0;
};

struct SequentialState {
    std::size_t round = 0;
    std::vector<Interaction> selected_uniform;  // S^r
    std::vector<Interaction> selected_biased;   // S^b
    std::vector<Interaction> discarded;
    Network model;
    std::vector<RoundRecord> history;
};

/// Sequential self-feedback schema: M rounds of select-then-retrain.
/// The model scoring round i is the previous round's model; round 1 uses a
/// freshly initialized one. Every round re-initializes and retrains.
/// `eval_set` is scored after each round.
SequentialState run_sequential(std::span<const Interaction> uniform_train,
                               std::span<const Interaction> biased, UnobservedSampler& unobserved,
                               std::span<const Interaction> uniform_val,
                               std::span<const Interaction> eval_set, const TrainConfig& cfg,
                               const SequentialConfig& scfg, Method method);

struct ConventionalResult {
    Network model;
    MetricsResult metrics;
    std::optional<Network> teacher;
};

/// Conventional schema: teacher on uniform train, student on uniform train u biased
/// (or the Union / Uniform baseline), scored on `eval_set`.
ConventionalResult run_conventional(std::span<const Interaction> uniform_train,
                                    std::span<const Interaction> biased, UnobservedSampler& unobserved,
                                    std::span<const Interaction> uniform_val,
                                    std::span<const Interaction> eval_set, const TrainConfig& cfg,
                                    Method method);

} // namespace eng
