#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eng/network.hpp"
#include "eng/rng.hpp"

namespace eng {

enum class Source : std::uint8_t { Uniform, Biased };

std::string_view to_string(Source s) noexcept;
Source parse_source(std::string_view s);

/// One logged interaction. `label` is always binarize(rating).
struct Interaction {
    UserId user = 0;
    ItemId item = 0;
    int rating = 1;
    int label = 0;
    Source source = Source::Uniform;

    UserItem pair() const noexcept { return {user, item}; }
    friend bool operator==(const Interaction&, const Interaction&) = default;
};

Interaction make_interaction(UserId user, ItemId item, int rating, Source source);

struct Dataset {
    std::vector<Interaction> interactions;
    std::size_t n_users = 0;
    std::size_t n_items = 0;

    /// Ids in range, labels consistent with ratings, no duplicate
    /// (user, item, source) triples. Throws std::invalid_argument.
    void validate() const;
    std::vector<Interaction> by_source(Source s) const;
    std::size_t count(Source s) const;
    /// Fraction of label-1 interactions from one source; 0 when empty.
    double positive_ratio(Source s) const;
    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Parse failure with file location.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& msg)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// 1 iff rating == 5. Throws std::invalid_argument outside 1..5.
int binarize(int rating);

/// Yahoo-style triple files, "user<TAB>item<TAB>rating" with 1-indexed ids.
/// Ids from both files are remapped jointly onto contiguous 0-based ranges
/// in ascending order of the original id.
Dataset load_yahoo(const std::filesystem::path& biased_path,
                   const std::filesystem::path& uniform_path);
Dataset parse_yahoo(std::istream& biased, std::istream& uniform,
                    std::string_view biased_name = "biased",
                    std::string_view uniform_name = "uniform");

struct CoatOptions {
    std::size_t rows = 290;
    std::size_t cols = 300;
    /// Drop self-selected ratings whose pair also appears in the random matrix.
    bool drop_biased_overlap = true;
};

/// Coat ASCII matrices: space-separated integers, 0 = unobserved.
/// The train matrix is the self-selected (biased) log, the test matrix the
/// randomly displayed (uniform) one.
Dataset load_coat(const std::filesystem::path& train_matrix_path,
                  const std::filesystem::path& test_matrix_path, const CoatOptions& opts = {});
Dataset parse_coat(std::istream& train, std::istream& test, const CoatOptions& opts = {},
                   std::string_view train_name = "train", std::string_view test_name = "test");

/// Canonical interchange: "user<TAB>item<TAB>rating<TAB>source\n", 0-based ids,
/// source in {uniform, biased}. Dimensions travel in the JSON sidecar.
void write_canonical(std::ostream& out, const Dataset& data);
Dataset read_canonical(std::istream& in, std::size_t n_users, std::size_t n_items,
                       std::string_view name = "canonical");

struct SplitSpec {
    double uniform_train_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct UniformSplit {
    std::vector<Interaction> train;
    std::vector<Interaction> validation;
    std::vector<Interaction> test;
};

/// Seeded shuffle, then train = floor(f*n) (at least 1), validation = the
/// larger half of the rest, test = remainder. Requires n >= 3.
UniformSplit split_uniform(std::span<const Interaction> uniform, const SplitSpec& spec);

/// Seeded shuffle into M disjoint batches; the first n mod M batches hold one extra element.
std::vector<std::vector<Interaction>> partition_batches(std::span<const Interaction> data,
                                                        std::size_t batches, RngStream& rng);

/// Uniform sampler over user-item pairs absent from an observed set.
class UnobservedSampler {
public:
    UnobservedSampler(std::size_t n_users, std::size_t n_items,
                      std::span<const UserItem> observed, RngStream rng);
    /// Observed set = every interaction of `data`, regardless of source or split.
    UnobservedSampler(const Dataset& data, RngStream rng);

    /// n pairs, i.i.d. uniform over the complement (with replacement).
    std::vector<UserItem> sample(std::size_t n);
    bool is_observed(UserId user, ItemId item) const;
    std::size_t complement_size() const noexcept { return complement_size_; }
    std::size_t n_users() const noexcept { return n_users_; }
    std::size_t n_items() const noexcept { return n_items_; }

private:
    std::size_t n_users_;
    std::size_t n_items_;
    std::vector<bool> observed_;
    std::size_t complement_size_ = 0;
    std::vector<UserItem> complement_;  // filled only when the complement is sparse
    RngStream rng_;
};

struct SyntheticParams {
    std::size_t n_users = 200;
    std::size_t n_items = 200;
    std::size_t latent_dim = 4;
    double exposure_skew = 2.0;
    std::size_t n_biased = 6000;
    std::size_t n_uniform = 4000;
    std::uint64_t seed = 0;
};

/// Ground truth for oracle tests.
struct SyntheticWorld {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::vector<double> prob;             // n_users x n_items, p(r=1 | u, i)
    std::vector<double> item_popularity;  // standardized mean preference per item
    std::vector<double> biased_item_dist;
    std::vector<double> uniform_item_dist;
    std::uint64_t seed = 0;

    double p(UserId u, ItemId i) const { return prob[static_cast<std::size_t>(u) * n_items + i]; }
};

/// P[u,i] = sigmoid(<u_vec, i_vec> + item_bias + global_bias) from seeded latent
/// factors. The biased log draws items with probability proportional to
/// exp(skew * popularity); the uniform log draws items uniformly. Users are
/// uniform in both; pairs are distinct within each log; labels ~ Bernoulli(P).
std::pair<SyntheticWorld, Dataset> generate_synthetic(const SyntheticParams& params);

} // namespace eng
