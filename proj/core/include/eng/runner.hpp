#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eng/data.hpp"
#include "eng/trainer.hpp"

namespace eng {

inline constexpr const char* kArtifactVersion = "1.0.0";

enum class Schema { Conventional, Sequential };

std::string_view to_string(Schema s) noexcept;
Schema parse_schema(std::string_view s);

/// Where a run's interactions come from: a directory written by `prepare`,
/// or a synthetic world generated in-process.
struct DatasetSpec {
    std::string kind = "prepared";  // "prepared" | "synthetic"
    std::filesystem::path dir;
    SyntheticParams synthetic;
};

struct ExperimentConfig {
    Schema schema = Schema::Conventional;
    DatasetSpec dataset;
    Method method = Method::EngJeffreys;
    TrainConfig train;
    SequentialConfig sequential;
    double uniform_train_fraction = 0.2;
    /// Sequential only: when set, overrides uniform_train_fraction so each
    /// round's uniform slice is about this fraction of its biased batch.
    /// null in JSON falls back to uniform_train_fraction.
    std::optional<double> per_round_uniform_ratio = 0.05;
    std::vector<std::uint64_t> seeds{1};
    std::filesystem::path out;
    std::size_t jobs = 1;

    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets a config field by dotted path ("train.lambda_s") or by a leaf name
/// that is unique in the config ("lambda_s"). `value` is parsed as JSON when
/// possible, otherwise taken as a string.
void apply_override(nlohmann::json& cfg, const std::string& key, const std::string& value);

/// Hash of everything that influences results (excludes seeds, out, jobs).
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hex64(std::uint64_t v);

enum class EvalSplit { Test, Validation };

/// One evaluation event.
struct MetricsRecord {
    std::string run_id;
    std::string method;
    std::string schema;
    std::uint64_t seed = 0;
    std::optional<std::size_t> round;  // nullopt = final
    std::string split = "test";
    double auc = 0.0;
    double bce = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    std::size_t n_selected_uniform = 0;
    std::size_t n_selected_biased = 0;
    std::string config_hash;

    friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

nlohmann::json to_json(const MetricsRecord& r);
MetricsRecord record_from_json(const nlohmann::json& j);
std::vector<MetricsRecord> read_records(const std::filesystem::path& jsonl);

struct Aggregate {
    std::string method;
    std::string schema;
    std::string split;
    std::size_t n = 0;
    double auc_mean = 0.0;
    double auc_std = 0.0;  // sample standard deviation (0 when n < 2)
    double bce_mean = 0.0;
    double bce_std = 0.0;
};

/// Mean and sample standard deviation over the final records.
Aggregate aggregate(const std::vector<MetricsRecord>& records);

struct RunManifest {
    std::string config_hash;
    std::string artifact_version = kArtifactVersion;
    std::map<std::string, std::string> dataset_checksums;
    std::string started_at;
    std::string finished_at;
    std::vector<std::uint64_t> seeds;
    std::vector<double> seed_wall_seconds;
    std::string status = "ok";
    std::string error;
    nlohmann::json config;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

struct RunOutput {
    std::vector<MetricsRecord> records;
    Aggregate summary;
    RunManifest manifest;
    std::size_t test_evaluations = 0;  // evaluation events that touched the test split
};

/// Runs one seed; no files are written.
std::vector<MetricsRecord> run_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                    EvalSplit split = EvalSplit::Test);

/// Runs every seed and, when cfg.out is set, writes records.jsonl,
/// records.csv, aggregate.json and manifest.json (each atomically). On
/// failure a manifest with status "failed" is written and the error rethrown.
RunOutput run(const ExperimentConfig& cfg, EvalSplit split = EvalSplit::Test);

struct ReplayReport {
    bool identical = false;
    std::size_t compared = 0;
    std::vector<std::string> mismatches;
};

/// Re-executes the config stored in a manifest into `out` and compares every
/// record with the originals next to the manifest.
ReplayReport replay(const std::filesystem::path& manifest_path, const std::filesystem::path& out);

/// Cartesian grid over config fields (keys as accepted by apply_override).
struct GridSpec {
    nlohmann::json base;
    std::vector<std::pair<std::string, std::vector<nlohmann::json>>> axes;
};

GridSpec grid_from_json(const nlohmann::json& j);

struct SweepCell {
    std::string label;  // canonical "key=value;..." string
    nlohmann::json config;
    double val_auc = 0.0;
    double val_bce = 0.0;
    std::size_t test_evaluations = 0;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::size_t best = 0;
    ExperimentConfig best_config;
};

/// Picks the cell with the highest validation AUC (ties: lower BCE, then
/// lexicographic label). Only the validation split is ever scored.
SweepResult sweep(const GridSpec& grid);
std::size_t select_best(const std::vector<SweepCell>& cells);

/// Markdown table of final-record means/stddevs grouped by schema, method and split.
std::string report(const std::vector<MetricsRecord>& records);

/// Canonical dataset directory: interactions.tsv + dataset.json sidecar.
struct PreparedInfo {
    std::string name;
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::size_t n_uniform = 0;
    std::size_t n_biased = 0;
    double pr_uniform = 0.0;
    double pr_biased = 0.0;
    std::string checksum;
};

PreparedInfo write_prepared(const Dataset& data, const std::string& name, const std::filesystem::path& dir);
Dataset load_prepared(const std::filesystem::path& dir, PreparedInfo* info = nullptr);
PreparedInfo prepare_coat(const std::filesystem::path& train, const std::filesystem::path& test,
                          const std::filesystem::path& out, const CoatOptions& opts = {});
PreparedInfo prepare_yahoo(const std::filesystem::path& biased, const std::filesystem::path& uniform,
                           const std::filesystem::path& out);
PreparedInfo prepare_synthetic(const SyntheticParams& params, const std::filesystem::path& out);

std::string file_checksum(const std::filesystem::path& path);
/// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

} // namespace eng
