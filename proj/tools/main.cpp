#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eng/runner.hpp"

namespace {

using nlohmann::json;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

int fail(const std::string& command, const std::string& kind, const std::string& message, int code) {
    json rec{{"status", "error"}, {"command", command}, {"error", kind}, {"message", message}};
    std::cerr << rec.dump() << "\n";
    return code;
}

// "3", "1,2,5", "1-10" or combinations such as "1-3,7".
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) throw UsageError("empty entry in --seed '" + text + "'");
        const auto dash = part.find('-', 1);
        try {
            if (dash == std::string::npos) {
                seeds.push_back(std::stoull(part));
            } else {
                const auto lo = std::stoull(part.substr(0, dash));
                const auto hi = std::stoull(part.substr(dash + 1));
                if (hi < lo) throw UsageError("descending seed range '" + part + "'");
                for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
            }
        } catch (const std::logic_error& e) {
            if (dynamic_cast<const UsageError*>(&e)) throw;
            throw UsageError("invalid --seed '" + text + "'");
        }
    }
    if (seeds.empty()) throw UsageError("--seed must name at least one seed");
    return seeds;
}

// Remaining "--field value" / "--field=value" pairs become config overrides.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const auto& a = extras[i];
        if (a.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + a + "'");
        const auto eq = a.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
        } else {
            if (i + 1 >= extras.size()) throw UsageError("missing value for '" + a + "'");
            out.emplace_back(a.substr(2), extras[++i]);
        }
    }
    return out;
}

void override_all(json& cfg, const std::vector<std::string>& extras) {
    for (const auto& [k, v] : parse_overrides(extras)) {
        try {
            eng::apply_override(cfg, k, v);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
}

json base_config(const std::string& config_path) {
    json j = eng::to_json(eng::ExperimentConfig{});
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw UsageError("cannot open config " + config_path);
        j.merge_patch(json::parse(in));
    }
    return j;
}

void set_dataset(json& j, const std::string& dataset) {
    if (dataset == "synthetic") {
        j["dataset"]["kind"] = "synthetic";
    } else {
        j["dataset"]["kind"] = "prepared";
        j["dataset"]["dir"] = std::filesystem::absolute(dataset).lexically_normal().string();
    }
}

void print_summary(const eng::RunOutput& out) {
    const auto& s = out.summary;
    json j{{"status", "ok"},
           {"run", out.manifest.config_hash},
           {"method", s.method},
           {"schema", s.schema},
           {"split", s.split},
           {"n", s.n},
           {"auc_mean", s.auc_mean},
           {"auc_std", s.auc_std},
           {"bce_mean", s.bce_mean},
           {"bce_std", s.bce_std}};
    std::cout << j.dump() << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Epsilon-non-Greedy debiasing: data preparation, training runs, sweeps and reports"};
    app.require_subcommand(1);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "Convert a raw dataset into the canonical format");
    prepare->require_subcommand(1);
    std::string out_dir;

    std::string coat_train, coat_test;
    bool coat_keep_overlap = false;
    auto* p_coat = prepare->add_subcommand("coat", "Coat rating matrices");
    p_coat->add_option("--train", coat_train, "Biased rating matrix (train.ascii)")->required();
    p_coat->add_option("--test", coat_test, "Uniform rating matrix (test.ascii)")->required();
    p_coat->add_flag("--keep-overlap", coat_keep_overlap, "Keep biased ratings whose pair is also in the uniform matrix");
    p_coat->add_option("--out", out_dir, "Output directory")->required();

    std::string yahoo_biased, yahoo_uniform;
    auto* p_yahoo = prepare->add_subcommand("yahoo", "Yahoo! R3 rating triples");
    p_yahoo->add_option("--biased", yahoo_biased, "User-selected ratings file")->required();
    p_yahoo->add_option("--uniform", yahoo_uniform, "Randomly-selected ratings file")->required();
    p_yahoo->add_option("--out", out_dir, "Output directory")->required();

    eng::SyntheticParams syn;
    auto* p_syn = prepare->add_subcommand("synthetic", "Generated world with skewed exposure");
    p_syn->add_option("--n-users", syn.n_users)->capture_default_str();
    p_syn->add_option("--n-items", syn.n_items)->capture_default_str();
    p_syn->add_option("--latent-dim", syn.latent_dim)->capture_default_str();
    p_syn->add_option("--exposure-skew", syn.exposure_skew)->capture_default_str();
    p_syn->add_option("--n-biased", syn.n_biased)->capture_default_str();
    p_syn->add_option("--n-uniform", syn.n_uniform)->capture_default_str();
    p_syn->add_option("--seed", syn.seed)->capture_default_str();
    p_syn->add_option("--out", out_dir, "Output directory")->required();

    // run
    auto* run = app.add_subcommand("run", "Train and evaluate one configuration over seeds");
    run->allow_extras();
    std::string seed_text, dataset, config_path, replay_path;
    run->add_option("--seed", seed_text, "Seeds: N, a,b,c or lo-hi");
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--dataset", dataset, "Prepared dataset directory, or 'synthetic'");
    run->add_option("--config", config_path, "JSON config file");
    run->add_option("--replay", replay_path, "Re-execute the run described by a manifest.json");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Grid search on validation AUC");
    sweep->allow_extras();
    std::string grid_path;
    sweep->add_option("--grid", grid_path, "JSON file with 'base' config and 'grid' axes")->required();
    sweep->add_option("--seed", seed_text, "Seeds: N, a,b,c or lo-hi");
    sweep->add_option("--out", out_dir, "Output directory");
    sweep->add_option("--dataset", dataset, "Prepared dataset directory, or 'synthetic'");

    // report
    auto* report = app.add_subcommand("report", "Markdown table from records.jsonl files");
    std::vector<std::string> record_files;
    report->add_option("records", record_files, "records.jsonl files")->required();

    std::string command = argc > 1 ? argv[1] : "";
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(command, "usage", e.what(), kExitUsage);
    }

    try {
        if (p_coat->parsed()) {
            eng::CoatOptions opts;
            opts.drop_biased_overlap = !coat_keep_overlap;
            const auto info = eng::prepare_coat(coat_train, coat_test, out_dir, opts);
            std::cout << json{{"status", "ok"}, {"dataset", "coat"}, {"n_uniform", info.n_uniform},
                              {"n_biased", info.n_biased}, {"pr_uniform", info.pr_uniform},
                              {"pr_biased", info.pr_biased}, {"checksum", info.checksum}}.dump()
                      << "\n";
        } else if (p_yahoo->parsed()) {
            const auto info = eng::prepare_yahoo(yahoo_biased, yahoo_uniform, out_dir);
            std::cout << json{{"status", "ok"}, {"dataset", "yahoo"}, {"n_uniform", info.n_uniform},
                              {"n_biased", info.n_biased}, {"pr_uniform", info.pr_uniform},
                              {"pr_biased", info.pr_biased}, {"checksum", info.checksum}}.dump()
                      << "\n";
        } else if (p_syn->parsed()) {
            const auto info = eng::prepare_synthetic(syn, out_dir);
            std::cout << json{{"status", "ok"}, {"dataset", "synthetic"}, {"n_uniform", info.n_uniform},
                              {"n_biased", info.n_biased}, {"pr_uniform", info.pr_uniform},
                              {"pr_biased", info.pr_biased}, {"checksum", info.checksum}}.dump()
                      << "\n";
        } else if (run->parsed()) {
            if (!replay_path.empty()) {
                if (out_dir.empty()) throw UsageError("--replay requires --out");
                const auto rep = eng::replay(replay_path, out_dir);
                std::cout << json{{"status", rep.identical ? "ok" : "mismatch"},
                                  {"compared", rep.compared},
                                  {"mismatches", rep.mismatches}}.dump()
                          << "\n";
                return rep.identical ? EXIT_SUCCESS : kExitFailure;
            }
            if (seed_text.empty() || out_dir.empty() || dataset.empty())
                throw UsageError("run requires --seed, --out and --dataset");
            json cfg = base_config(config_path);
            override_all(cfg, run->remaining());
            set_dataset(cfg, dataset);
            cfg["seeds"] = parse_seeds(seed_text);
            cfg["out"] = out_dir;
            const auto out = eng::run(eng::config_from_json(cfg));
            print_summary(out);
        } else if (sweep->parsed()) {
            std::ifstream in(grid_path);
            if (!in) throw UsageError("cannot open grid " + grid_path);
            auto grid = eng::grid_from_json(json::parse(in));
            override_all(grid.base, sweep->remaining());
            if (!dataset.empty()) set_dataset(grid.base, dataset);
            if (!seed_text.empty()) grid.base["seeds"] = parse_seeds(seed_text);
            if (!out_dir.empty()) grid.base["out"] = out_dir;
            const auto res = eng::sweep(grid);
            const auto& best = res.cells[res.best];
            std::cout << json{{"status", "ok"}, {"cells", res.cells.size()}, {"best", best.label},
                              {"val_auc", best.val_auc}, {"val_bce", best.val_bce}}.dump()
                      << "\n";
        } else if (report->parsed()) {
            std::vector<eng::MetricsRecord> records;
            for (const auto& f : record_files) {
                auto r = eng::read_records(f);
                records.insert(records.end(), r.begin(), r.end());
            }
            std::cout << eng::report(records);
        }
    } catch (const UsageError& e) {
        return fail(command, "usage", e.what(), kExitUsage);
    } catch (const eng::ParseError& e) {
        return fail(command, "parse", e.what(), kExitFailure);
    } catch (const std::invalid_argument& e) {
        return fail(command, "invalid_argument", e.what(), kExitFailure);
    } catch (const std::exception& e) {
        return fail(command, "runtime", e.what(), kExitFailure);
    }
    return EXIT_SUCCESS;
}
