#include "eng/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace eng {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json network_to_json(const NetworkConfig& c) {
    return json{{"embedding_dim", c.embedding_dim},
                {"hidden_sizes", c.hidden_sizes},
                {"dropout_rate", c.dropout_rate}};
}

NetworkConfig network_from_json(const json& j, NetworkConfig c) {
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.hidden_sizes = j.value("hidden_sizes", c.hidden_sizes);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    return c;
}

json synthetic_to_json(const SyntheticParams& p) {
    return json{{"n_users", p.n_users},     {"n_items", p.n_items},   {"latent_dim", p.latent_dim},
                {"exposure_skew", p.exposure_skew}, {"n_biased", p.n_biased}, {"n_uniform", p.n_uniform},
                {"seed", p.seed}};
}

SyntheticParams synthetic_from_json(const json& j) {
    SyntheticParams p;
    p.n_users = j.value("n_users", p.n_users);
    p.n_items = j.value("n_items", p.n_items);
    p.latent_dim = j.value("latent_dim", p.latent_dim);
    p.exposure_skew = j.value("exposure_skew", p.exposure_skew);
    p.n_biased = j.value("n_biased", p.n_biased);
    p.n_uniform = j.value("n_uniform", p.n_uniform);
    p.seed = j.value("seed", p.seed);
    return p;
}

// Collects dotted paths of every leaf whose last component equals `leaf`.
void find_leaf(const json& j, const std::string& leaf, const std::string& prefix,
               std::vector<std::string>& hits) {
    if (!j.is_object()) return;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it.key() == leaf) hits.push_back(path);
        find_leaf(it.value(), leaf, path, hits);
    }
}

struct LoadedData {
    Dataset data;
    std::map<std::string, std::string> checksums;
};

LoadedData load_dataset(const DatasetSpec& spec) {
    LoadedData out;
    if (spec.kind == "synthetic") {
        out.data = generate_synthetic(spec.synthetic).second;
        std::ostringstream ss;
        write_canonical(ss, out.data);
        out.checksums["synthetic"] = hex64(fnv1a64(ss.str()));
        return out;
    }
    if (spec.kind != "prepared") throw std::invalid_argument("unknown dataset kind '" + spec.kind + "'");
    PreparedInfo info;
    out.data = load_prepared(spec.dir, &info);
    out.checksums["interactions.tsv"] = file_checksum(spec.dir / "interactions.tsv");
    out.checksums["dataset.json"] = file_checksum(spec.dir / "dataset.json");
    return out;
}

std::vector<MetricsRecord> run_seed_on(const ExperimentConfig& cfg, const Dataset& data,
                                       std::uint64_t seed, EvalSplit split) {
    const auto uniform = data.by_source(Source::Uniform);
    const auto biased = data.by_source(Source::Biased);

    double fraction = cfg.uniform_train_fraction;
    if (cfg.schema == Schema::Sequential && cfg.per_round_uniform_ratio)
        fraction = uniform_fraction_for_ratio(uniform.size(), biased.size(), *cfg.per_round_uniform_ratio);
    const auto parts = split_uniform(uniform, SplitSpec{fraction, seed});
    const auto& eval_set = split == EvalSplit::Test ? parts.test : parts.validation;

    UnobservedSampler sampler(data, RngStream(seed).split("unobserved"));
    TrainConfig tcfg = cfg.train.with_dims(data.n_users, data.n_items);
    tcfg.seed = seed;

    MetricsRecord base;
    base.method = std::string(to_string(cfg.method));
    base.schema = std::string(to_string(cfg.schema));
    base.seed = seed;
    base.split = split == EvalSplit::Test ? "test" : "validation";
    base.config_hash = hex64(config_hash(cfg));
    base.run_id = base.config_hash + "-s" + std::to_string(seed);

    auto fill = [&](MetricsRecord r, const MetricsResult& m, std::size_t n_sr, std::size_t n_sb,
                    std::optional<std::size_t> round) {
        r.auc = m.auc;
        r.bce = m.bce;
        r.n_pos = m.n_pos;
        r.n_neg = m.n_neg;
        r.n_selected_uniform = n_sr;
        r.n_selected_biased = n_sb;
        r.round = round;
        return r;
    };

    std::vector<MetricsRecord> out;
    if (cfg.schema == Schema::Conventional) {
        const auto res = run_conventional(parts.train, biased, sampler, parts.validation, eval_set, tcfg,
                                          cfg.method);
        const std::size_t n_sb = cfg.method == Method::Uniform ? 0 : biased.size();
        out.push_back(fill(base, res.metrics, parts.train.size(), n_sb, std::nullopt));
    } else {
        const auto st = run_sequential(parts.train, biased, sampler, parts.validation, eval_set, tcfg,
                                       cfg.sequential, cfg.method);
        for (const auto& h : st.history)
            out.push_back(fill(base, h.metrics, h.n_selected_uniform, h.n_selected_biased, h.round));
        const auto& last = st.history.back();
        out.push_back(fill(base, last.metrics, last.n_selected_uniform, last.n_selected_biased, std::nullopt));
    }
    return out;
}

std::string records_csv(const std::vector<MetricsRecord>& records) {
    std::ostringstream ss;
    ss << "run_id,method,schema,seed,round,split,auc,bce,n_pos,n_neg,n_selected_uniform,"
          "n_selected_biased,config_hash\n";
    for (const auto& r : records)
        ss << r.run_id << ',' << r.method << ',' << r.schema << ',' << r.seed << ','
           << (r.round ? std::to_string(*r.round) : std::string("final")) << ',' << r.split << ','
           << fmt_double(r.auc) << ',' << fmt_double(r.bce) << ',' << r.n_pos << ',' << r.n_neg << ','
           << r.n_selected_uniform << ',' << r.n_selected_biased << ',' << r.config_hash << '\n';
    return ss.str();
}

json aggregate_to_json(const Aggregate& a) {
    return json{{"method", a.method},     {"schema", a.schema},     {"split", a.split},
                {"n", a.n},               {"auc_mean", a.auc_mean}, {"auc_std", a.auc_std},
                {"bce_mean", a.bce_mean}, {"bce_std", a.bce_std}};
}

} // namespace

std::string_view to_string(Schema s) noexcept {
    return s == Schema::Conventional ? "conventional" : "sequential";
}

Schema parse_schema(std::string_view s) {
    if (s == "conventional") return Schema::Conventional;
    if (s == "sequential") return Schema::Sequential;
    throw std::invalid_argument("unknown schema '" + std::string(s) + "'");
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void ExperimentConfig::validate() const {
    train.validate();
    if (schema == Schema::Sequential) sequential.validate();
    if (seeds.empty()) throw std::invalid_argument("config: at least one seed required");
    if (!(uniform_train_fraction > 0.0 && uniform_train_fraction < 1.0))
        throw std::invalid_argument("config: uniform_train_fraction must lie in (0, 1)");
    if (per_round_uniform_ratio && !(*per_round_uniform_ratio > 0.0))
        throw std::invalid_argument("config: per_round_uniform_ratio must be positive");
    if (dataset.kind != "prepared" && dataset.kind != "synthetic")
        throw std::invalid_argument("config: dataset kind must be 'prepared' or 'synthetic'");
    if (dataset.kind == "prepared" && dataset.dir.empty())
        throw std::invalid_argument("config: prepared dataset requires dataset.dir");
    if (jobs == 0) throw std::invalid_argument("config: jobs must be positive");
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["schema"] = std::string(to_string(c.schema));
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"dir", c.dataset.dir.string()},
                    {"synthetic", synthetic_to_json(c.dataset.synthetic)}};
    j["method"] = std::string(to_string(c.method));
    const auto& t = c.train;
    j["train"] = {{"teacher", network_to_json(t.teacher)},
                  {"student", network_to_json(t.student)},
                  {"lambda_t", t.lambda_t},
                  {"lambda_s", t.lambda_s},
                  {"gamma_reg", t.gamma_reg},
                  {"optimizer", t.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                  {"learning_rate", t.learning_rate},
                  {"minibatch_size", t.minibatch_size},
                  {"unobserved_batch_size", t.unobserved_batch_size},
                  {"max_epochs", t.max_epochs},
                  {"patience", t.patience},
                  {"early_stopping", t.early_stopping}};
    j["sequential"] = {{"M", c.sequential.batches}, {"rho", c.sequential.rho}, {"thompson", c.sequential.thompson}};
    j["uniform_train_fraction"] = c.uniform_train_fraction;
    j["per_round_uniform_ratio"] = c.per_round_uniform_ratio ? json(*c.per_round_uniform_ratio) : json(nullptr);
    j["seeds"] = c.seeds;
    j["out"] = c.out.string();
    j["jobs"] = c.jobs;
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("schema")) c.schema = parse_schema(j.at("schema").get<std::string>());
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        c.dataset.kind = d.value("kind", c.dataset.kind);
        c.dataset.dir = d.value("dir", std::string());
        if (d.contains("synthetic")) c.dataset.synthetic = synthetic_from_json(d.at("synthetic"));
    }
    if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
    if (j.contains("train")) {
        const auto& t = j.at("train");
        auto& tc = c.train;
        if (t.contains("teacher")) tc.teacher = network_from_json(t.at("teacher"), tc.teacher);
        if (t.contains("student")) tc.student = network_from_json(t.at("student"), tc.student);
        tc.lambda_t = t.value("lambda_t", tc.lambda_t);
        tc.lambda_s = t.value("lambda_s", tc.lambda_s);
        tc.gamma_reg = t.value("gamma_reg", tc.gamma_reg);
        const auto opt = t.value("optimizer", std::string("adam"));
        if (opt == "adam") tc.optimizer = OptimizerKind::Adam;
        else if (opt == "sgd") tc.optimizer = OptimizerKind::Sgd;
        else throw std::invalid_argument("unknown optimizer '" + opt + "'");
        tc.learning_rate = t.value("learning_rate", tc.learning_rate);
        tc.minibatch_size = t.value("minibatch_size", tc.minibatch_size);
        tc.unobserved_batch_size = t.value("unobserved_batch_size", tc.unobserved_batch_size);
        tc.max_epochs = t.value("max_epochs", tc.max_epochs);
        tc.patience = t.value("patience", tc.patience);
        tc.early_stopping = t.value("early_stopping", tc.early_stopping);
    }
    if (is_eng(c.method)) c.train.reg_kind = reg_kind_of(c.method);
    if (j.contains("sequential")) {
        const auto& s = j.at("sequential");
        c.sequential.batches = s.value("M", c.sequential.batches);
        c.sequential.rho = s.value("rho", c.sequential.rho);
        c.sequential.thompson = s.value("thompson", c.sequential.thompson);
    }
    c.uniform_train_fraction = j.value("uniform_train_fraction", c.uniform_train_fraction);
    if (j.contains("per_round_uniform_ratio")) {
        const auto& r = j.at("per_round_uniform_ratio");
        c.per_round_uniform_ratio = r.is_null() ? std::nullopt : std::optional<double>(r.get<double>());
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.out = j.value("out", std::string());
    c.jobs = j.value("jobs", c.jobs);
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    json j = to_json(ExperimentConfig{});
    j.merge_patch(json::parse(read_file(path)));
    return config_from_json(j);
}

void apply_override(json& cfg, const std::string& key, const std::string& value) {
    std::string path = key;
    if (key.find('.') == std::string::npos) {
        std::vector<std::string> hits;
        find_leaf(cfg, key, "", hits);
        if (hits.empty()) throw std::invalid_argument("unknown config field '" + key + "'");
        if (hits.size() > 1) {
            std::string all;
            for (const auto& h : hits) all += " " + h;
            throw std::invalid_argument("ambiguous config field '" + key + "', use one of:" + all);
        }
        path = hits.front();
    }
    json* node = &cfg;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!node->is_object() || !node->contains(parts[i]))
            throw std::invalid_argument("unknown config field '" + path + "'");
        node = &(*node)[parts[i]];
    }
    json parsed = json::parse(value, nullptr, false);
    *node = parsed.is_discarded() ? json(value) : parsed;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    json j = to_json(cfg);
    j.erase("seeds");
    j.erase("out");
    j.erase("jobs");
    return fnv1a64(j.dump());
}

json to_json(const MetricsRecord& r) {
    return json{{"run_id", r.run_id},
                {"method", r.method},
                {"schema", r.schema},
                {"seed", r.seed},
                {"round", r.round ? json(*r.round) : json("final")},
                {"split", r.split},
                {"auc", r.auc},
                {"bce", r.bce},
                {"n_pos", r.n_pos},
                {"n_neg", r.n_neg},
                {"n_selected_uniform", r.n_selected_uniform},
                {"n_selected_biased", r.n_selected_biased},
                {"config_hash", r.config_hash}};
}

MetricsRecord record_from_json(const json& j) {
    MetricsRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.schema = j.at("schema").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.at("round").is_number()) r.round = j.at("round").get<std::size_t>();
    r.split = j.at("split").get<std::string>();
    r.auc = j.at("auc").get<double>();
    r.bce = j.at("bce").get<double>();
    r.n_pos = j.at("n_pos").get<std::size_t>();
    r.n_neg = j.at("n_neg").get<std::size_t>();
    r.n_selected_uniform = j.at("n_selected_uniform").get<std::size_t>();
    r.n_selected_biased = j.at("n_selected_biased").get<std::size_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    return r;
}

std::vector<MetricsRecord> read_records(const fs::path& jsonl) {
    std::ifstream in(jsonl);
    if (!in) throw std::runtime_error("cannot open " + jsonl.string());
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(record_from_json(json::parse(line)));
    return out;
}

Aggregate aggregate(const std::vector<MetricsRecord>& records) {
    Aggregate a;
    std::vector<double> aucs, bces;
    for (const auto& r : records) {
        if (r.round) continue;
        a.method = r.method;
        a.schema = r.schema;
        a.split = r.split;
        aucs.push_back(r.auc);
        bces.push_back(r.bce);
    }
    a.n = aucs.size();
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = 0.0;
        sd = 0.0;
        if (v.empty()) return;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        if (v.size() < 2) return;
        for (double x : v) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
    };
    stats(aucs, a.auc_mean, a.auc_std);
    stats(bces, a.bce_mean, a.bce_std);
    return a;
}

json to_json(const RunManifest& m) {
    return json{{"config_hash", m.config_hash},
                {"artifact_version", m.artifact_version},
                {"dataset_checksums", m.dataset_checksums},
                {"started_at", m.started_at},
                {"finished_at", m.finished_at},
                {"seeds", m.seeds},
                {"seed_wall_seconds", m.seed_wall_seconds},
                {"status", m.status},
                {"error", m.error},
                {"config", m.config}};
}

RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.artifact_version = j.at("artifact_version").get<std::string>();
    m.dataset_checksums = j.at("dataset_checksums").get<std::map<std::string, std::string>>();
    m.started_at = j.value("started_at", std::string());
    m.finished_at = j.value("finished_at", std::string());
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.seed_wall_seconds = j.value("seed_wall_seconds", std::vector<double>{});
    m.status = j.value("status", std::string("ok"));
    m.error = j.value("error", std::string());
    m.config = j.at("config");
    return m;
}

std::vector<MetricsRecord> run_seed(const ExperimentConfig& cfg, std::uint64_t seed, EvalSplit split) {
    cfg.validate();
    const auto loaded = load_dataset(cfg.dataset);
    return run_seed_on(cfg, loaded.data, seed, split);
}

RunOutput run(const ExperimentConfig& cfg, EvalSplit split) {
    RunOutput out;
    out.manifest.started_at = utc_now();
    out.manifest.config = to_json(cfg);
    out.manifest.seeds = cfg.seeds;
    out.manifest.config_hash = hex64(config_hash(cfg));
    if (!cfg.out.empty()) fs::create_directories(cfg.out);

    try {
        cfg.validate();
        const auto loaded = load_dataset(cfg.dataset);
        out.manifest.dataset_checksums = loaded.checksums;

        struct SeedResult {
            std::vector<MetricsRecord> records;
            double seconds = 0.0;
        };
        auto one = [&](std::uint64_t seed) {
            const auto t0 = std::chrono::steady_clock::now();
            SeedResult r;
            r.records = run_seed_on(cfg, loaded.data, seed, split);
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            return r;
        };
        std::vector<SeedResult> results(cfg.seeds.size());
        for (std::size_t start = 0; start < cfg.seeds.size(); start += cfg.jobs) {
            const std::size_t end = std::min(cfg.seeds.size(), start + cfg.jobs);
            if (end - start == 1) {
                results[start] = one(cfg.seeds[start]);
                continue;
            }
            std::vector<std::future<SeedResult>> futures;
            for (std::size_t k = start; k < end; ++k)
                futures.push_back(std::async(std::launch::async, one, cfg.seeds[k]));
            for (std::size_t k = start; k < end; ++k) results[k] = futures[k - start].get();
        }
        for (auto& r : results) {
            out.manifest.seed_wall_seconds.push_back(r.seconds);
            for (auto& rec : r.records) {
                if (rec.split == "test") ++out.test_evaluations;
                out.records.push_back(std::move(rec));
            }
        }
        out.summary = aggregate(out.records);
    } catch (const std::exception& e) {
        out.manifest.status = "failed";
        out.manifest.error = e.what();
        out.manifest.finished_at = utc_now();
        if (!cfg.out.empty()) write_file_atomic(cfg.out / "manifest.json", to_json(out.manifest).dump(2) + "\n");
        throw;
    }
    out.manifest.finished_at = utc_now();

    if (!cfg.out.empty()) {
        std::string jsonl;
        for (const auto& r : out.records) jsonl += to_json(r).dump() + "\n";
        write_file_atomic(cfg.out / "records.jsonl", jsonl);
        write_file_atomic(cfg.out / "records.csv", records_csv(out.records));
        write_file_atomic(cfg.out / "aggregate.json", aggregate_to_json(out.summary).dump(2) + "\n");
        write_file_atomic(cfg.out / "manifest.json", to_json(out.manifest).dump(2) + "\n");
    }
    return out;
}

ReplayReport replay(const fs::path& manifest_path, const fs::path& out) {
    const auto manifest = manifest_from_json(json::parse(read_file(manifest_path)));
    if (manifest.status != "ok") throw std::runtime_error("replay: manifest records a failed run");
    if (manifest.artifact_version != kArtifactVersion)
        throw std::runtime_error("replay: manifest from artifact version " + manifest.artifact_version);
    ExperimentConfig cfg = config_from_json(manifest.config);
    cfg.out = out;
    const auto originals = read_records(manifest_path.parent_path() / "records.jsonl");
    const auto now = run(cfg);
    if (now.manifest.dataset_checksums != manifest.dataset_checksums)
        throw std::runtime_error("replay: dataset checksums differ from the manifest");

    ReplayReport rep;
    rep.compared = std::min(originals.size(), now.records.size());
    if (originals.size() != now.records.size())
        rep.mismatches.push_back("record count " + std::to_string(originals.size()) + " vs " +
                                 std::to_string(now.records.size()));
    for (std::size_t i = 0; i < rep.compared; ++i)
        if (!(originals[i] == now.records[i]))
            rep.mismatches.push_back("record " + std::to_string(i) + ": " + to_json(originals[i]).dump() +
                                     " vs " + to_json(now.records[i]).dump());
    rep.identical = rep.mismatches.empty();
    return rep;
}

GridSpec grid_from_json(const json& j) {
    GridSpec g;
    g.base = to_json(ExperimentConfig{});
    if (j.contains("base")) g.base.merge_patch(j.at("base"));
    if (!j.contains("grid") || !j.at("grid").is_object() || j.at("grid").empty())
        throw std::invalid_argument("sweep: grid specification has no axes");
    for (auto it = j.at("grid").begin(); it != j.at("grid").end(); ++it) {
        if (!it.value().is_array() || it.value().empty())
            throw std::invalid_argument("sweep: axis '" + it.key() + "' must be a nonempty list");
        g.axes.emplace_back(it.key(), it.value().get<std::vector<json>>());
    }
    return g;
}

std::size_t select_best(const std::vector<SweepCell>& cells) {
    if (cells.empty()) throw std::invalid_argument("sweep: empty grid");
    std::size_t best = 0;
    for (std::size_t i = 1; i < cells.size(); ++i) {
        const auto& a = cells[i];
        const auto& b = cells[best];
        const bool better = a.val_auc > b.val_auc ||
                            (a.val_auc == b.val_auc &&
                             (a.val_bce < b.val_bce || (a.val_bce == b.val_bce && a.label < b.label)));
        if (better) best = i;
    }
    return best;
}

SweepResult sweep(const GridSpec& grid) {
    if (grid.axes.empty()) throw std::invalid_argument("sweep: empty grid");
    std::size_t n_cells = 1;
    for (const auto& [key, values] : grid.axes) {
        if (values.empty()) throw std::invalid_argument("sweep: empty grid");
        n_cells *= values.size();
    }
    const ExperimentConfig base_cfg = config_from_json(grid.base);

    SweepResult result;
    for (std::size_t c = 0; c < n_cells; ++c) {
        json cfg_json = grid.base;
        std::string label;
        std::size_t rem = c;
        for (const auto& [key, values] : grid.axes) {
            const auto& v = values[rem % values.size()];
            rem /= values.size();
            apply_override(cfg_json, key, v.dump());
            label += (label.empty() ? "" : ";") + key + "=" + v.dump();
        }
        ExperimentConfig cfg = config_from_json(cfg_json);
        if (!base_cfg.out.empty()) {
            char dir[32];
            std::snprintf(dir, sizeof dir, "cell_%04zu", c);
            cfg.out = base_cfg.out / dir;
        }
        const auto out = run(cfg, EvalSplit::Validation);
        SweepCell cell;
        cell.label = label;
        cell.config = to_json(cfg);
        cell.val_auc = out.summary.auc_mean;
        cell.val_bce = out.summary.bce_mean;
        cell.test_evaluations = out.test_evaluations;
        result.cells.push_back(std::move(cell));
    }
    result.best = select_best(result.cells);
    result.best_config = config_from_json(result.cells[result.best].config);
    result.best_config.out = base_cfg.out;

    if (!base_cfg.out.empty()) {
        json summary = json::array();
        for (const auto& c : result.cells)
            summary.push_back({{"label", c.label},
                               {"val_auc", c.val_auc},
                               {"val_bce", c.val_bce},
                               {"test_evaluations", c.test_evaluations}});
        json doc{{"cells", summary},
                 {"best", result.cells[result.best].label},
                 {"best_config", to_json(result.best_config)}};
        write_file_atomic(base_cfg.out / "sweep.json", doc.dump(2) + "\n");
    }
    return result;
}

std::string report(const std::vector<MetricsRecord>& records) {
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<MetricsRecord>> groups;
    for (const auto& r : records)
        if (!r.round) groups[{r.schema, r.method, r.split}].push_back(r);
    std::ostringstream ss;
    ss << "| schema | method | split | n | AUC mean | AUC std | BCE mean | BCE std |\n"
       << "|---|---|---|---|---|---|---|---|\n";
    ss << std::fixed << std::setprecision(4);
    for (const auto& [key, recs] : groups) {
        const auto a = aggregate(recs);
        ss << "| " << std::get<0>(key) << " | " << std::get<1>(key) << " | " << std::get<2>(key) << " | "
           << a.n << " | " << a.auc_mean << " | " << a.auc_std << " | " << a.bce_mean << " | " << a.bce_std
           << " |\n";
    }
    return ss.str();
}

std::string file_checksum(const fs::path& path) {
    return hex64(fnv1a64(read_file(path)));
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << contents;
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

PreparedInfo write_prepared(const Dataset& data, const std::string& name, const fs::path& dir) {
    data.validate();
    fs::create_directories(dir);
    std::ostringstream tsv;
    write_canonical(tsv, data);
    const std::string body = tsv.str();
    PreparedInfo info;
    info.name = name;
    info.n_users = data.n_users;
    info.n_items = data.n_items;
    info.n_uniform = data.count(Source::Uniform);
    info.n_biased = data.count(Source::Biased);
    info.pr_uniform = data.positive_ratio(Source::Uniform);
    info.pr_biased = data.positive_ratio(Source::Biased);
    info.checksum = hex64(fnv1a64(body));
    json side{{"name", info.name},
              {"n_users", info.n_users},
              {"n_items", info.n_items},
              {"n_uniform", info.n_uniform},
              {"n_biased", info.n_biased},
              {"pr_uniform", info.pr_uniform},
              {"pr_biased", info.pr_biased},
              {"interactions_checksum", info.checksum},
              {"format", "user\titem\trating\tsource"}};
    write_file_atomic(dir / "interactions.tsv", body);
    write_file_atomic(dir / "dataset.json", side.dump(2) + "\n");
    return info;
}

Dataset load_prepared(const fs::path& dir, PreparedInfo* info) {
    const json side = json::parse(read_file(dir / "dataset.json"));
    PreparedInfo pi;
    pi.name = side.at("name").get<std::string>();
    pi.n_users = side.at("n_users").get<std::size_t>();
    pi.n_items = side.at("n_items").get<std::size_t>();
    pi.n_uniform = side.at("n_uniform").get<std::size_t>();
    pi.n_biased = side.at("n_biased").get<std::size_t>();
    pi.pr_uniform = side.at("pr_uniform").get<double>();
    pi.pr_biased = side.at("pr_biased").get<double>();
    pi.checksum = side.at("interactions_checksum").get<std::string>();
    std::ifstream in(dir / "interactions.tsv");
    if (!in) throw std::runtime_error("cannot open " + (dir / "interactions.tsv").string());
    Dataset d = read_canonical(in, pi.n_users, pi.n_items, (dir / "interactions.tsv").string());
    if (info) *info = pi;
    return d;
}

PreparedInfo prepare_coat(const fs::path& train, const fs::path& test, const fs::path& out,
                          const CoatOptions& opts) {
    return write_prepared(load_coat(train, test, opts), "coat", out);
}

PreparedInfo prepare_yahoo(const fs::path& biased, const fs::path& uniform, const fs::path& out) {
    return write_prepared(load_yahoo(biased, uniform), "yahoo", out);
}

PreparedInfo prepare_synthetic(const SyntheticParams& params, const fs::path& out) {
    return write_prepared(generate_synthetic(params).second, "synthetic", out);
}

} // namespace eng
