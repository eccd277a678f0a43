#include "eng/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

namespace eng {

namespace {

std::uint64_t pair_key(std::size_t n_items, UserId u, ItemId i) {
    return static_cast<std::uint64_t>(u) * n_items + i;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

std::vector<std::string_view> split_on(std::string_view line, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(line.substr(start));
            return parts;
        }
        parts.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string_view strip_cr(std::string_view line) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    return line;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

struct RawTriple {
    std::uint64_t user;
    std::uint64_t item;
    int rating;
    std::size_t line;
};

std::vector<RawTriple> read_triples(std::istream& in, std::string_view name) {
    std::vector<RawTriple> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto text = strip_cr(line);
        if (text.empty()) continue;
        const auto parts = split_on(text, '\t');
        if (parts.size() != 3)
            throw ParseError(std::string(name), lineno, "expected 3 tab-separated fields");
        RawTriple t{};
        t.line = lineno;
        if (!parse_number(parts[0], t.user) || !parse_number(parts[1], t.item) ||
            !parse_number(parts[2], t.rating))
            throw ParseError(std::string(name), lineno, "non-integer field");
        if (t.user == 0 || t.item == 0)
            throw ParseError(std::string(name), lineno, "ids are 1-indexed");
        if (t.rating < 1 || t.rating > 5)
            throw ParseError(std::string(name), lineno,
                             "rating " + std::to_string(t.rating) + " outside 1..5");
        rows.push_back(t);
    }
    std::set<std::pair<std::uint64_t, std::uint64_t>> seen;
    for (const auto& t : rows)
        if (!seen.emplace(t.user, t.item).second)
            throw ParseError(std::string(name), t.line, "duplicate user-item pair");
    return rows;
}

std::vector<std::vector<int>> read_matrix(std::istream& in, const CoatOptions& opts,
                                          std::string_view name) {
    std::vector<std::vector<int>> m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream row(line);
        std::vector<int> cells;
        std::string tok;
        while (row >> tok) {
            int v = 0;
            if (!parse_number(std::string_view(tok), v))
                throw ParseError(std::string(name), lineno, "non-integer cell '" + tok + "'");
            if (v < 0 || v > 5)
                throw ParseError(std::string(name), lineno,
                                 "rating " + std::to_string(v) + " outside 0..5");
            cells.push_back(v);
        }
        if (cells.empty()) continue;
        if (cells.size() != opts.cols)
            throw ParseError(std::string(name), lineno,
                             "expected " + std::to_string(opts.cols) + " columns, got " +
                                 std::to_string(cells.size()));
        m.push_back(std::move(cells));
    }
    if (m.size() != opts.rows)
        throw ParseError(std::string(name), lineno,
                         "expected " + std::to_string(opts.rows) + " rows, got " + std::to_string(m.size()));
    return m;
}

} // namespace

std::string_view to_string(Source s) noexcept {
    return s == Source::Uniform ? "uniform" : "biased";
}

Source parse_source(std::string_view s) {
    if (s == "uniform") return Source::Uniform;
    if (s == "biased") return Source::Biased;
    throw std::invalid_argument("unknown source '" + std::string(s) + "'");
}

int binarize(int rating) {
    if (rating < 1 || rating > 5)
        throw std::invalid_argument("rating " + std::to_string(rating) + " outside 1..5");
    return rating == 5 ? 1 : 0;
}

Interaction make_interaction(UserId user, ItemId item, int rating, Source source) {
    return Interaction{user, item, rating, binarize(rating), source};
}

void Dataset::validate() const {
    std::unordered_set<std::uint64_t> seen[2];
    for (const auto& x : interactions) {
        if (x.user >= n_users || x.item >= n_items)
            throw std::invalid_argument("dataset: id out of range");
        if (x.label != binarize(x.rating))
            throw std::invalid_argument("dataset: label disagrees with rating");
        auto& set = seen[static_cast<int>(x.source)];
        if (!set.insert(pair_key(n_items, x.user, x.item)).second)
            throw std::invalid_argument("dataset: duplicate (user, item, source) triple");
    }
}

std::vector<Interaction> Dataset::by_source(Source s) const {
    std::vector<Interaction> out;
    for (const auto& x : interactions)
        if (x.source == s) out.push_back(x);
    return out;
}

std::size_t Dataset::count(Source s) const {
    return static_cast<std::size_t>(std::count_if(
        interactions.begin(), interactions.end(), [&](const Interaction& x) { return x.source == s; }));
}

double Dataset::positive_ratio(Source s) const {
    std::size_t n = 0, pos = 0;
    for (const auto& x : interactions) {
        if (x.source != s) continue;
        ++n;
        pos += static_cast<std::size_t>(x.label);
    }
    return n == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(n);
}

Dataset parse_yahoo(std::istream& biased, std::istream& uniform, std::string_view biased_name,
                    std::string_view uniform_name) {
    const auto b = read_triples(biased, biased_name);
    const auto u = read_triples(uniform, uniform_name);

    std::map<std::uint64_t, UserId> users;
    std::map<std::uint64_t, ItemId> items;
    for (const auto* rows : {&b, &u})
        for (const auto& t : *rows) {
            users.emplace(t.user, 0);
            items.emplace(t.item, 0);
        }
    UserId next_user = 0;
    for (auto& [id, idx] : users) idx = next_user++;
    ItemId next_item = 0;
    for (auto& [id, idx] : items) idx = next_item++;

    Dataset d;
    d.n_users = users.size();
    d.n_items = items.size();
    d.interactions.reserve(b.size() + u.size());
    for (const auto& t : b)
        d.interactions.push_back(
            make_interaction(users.at(t.user), items.at(t.item), t.rating, Source::Biased));
    for (const auto& t : u)
        d.interactions.push_back(
            make_interaction(users.at(t.user), items.at(t.item), t.rating, Source::Uniform));
    d.validate();
    return d;
}

Dataset load_yahoo(const std::filesystem::path& biased_path,
                   const std::filesystem::path& uniform_path) {
    auto b = open_or_throw(biased_path);
    auto u = open_or_throw(uniform_path);
    return parse_yahoo(b, u, biased_path.string(), uniform_path.string());
}

Dataset parse_coat(std::istream& train, std::istream& test, const CoatOptions& opts,
                   std::string_view train_name, std::string_view test_name) {
    const auto biased = read_matrix(train, opts, train_name);
    const auto uniform = read_matrix(test, opts, test_name);
    Dataset d;
    d.n_users = opts.rows;
    d.n_items = opts.cols;
    for (std::size_t r = 0; r < opts.rows; ++r)
        for (std::size_t c = 0; c < opts.cols; ++c) {
            const int rating = biased[r][c];
            if (rating == 0) continue;
            if (opts.drop_biased_overlap && uniform[r][c] != 0) continue;
            d.interactions.push_back(make_interaction(static_cast<UserId>(r),
                                                      static_cast<ItemId>(c), rating,
                                                      Source::Biased));
        }
    for (std::size_t r = 0; r < opts.rows; ++r)
        for (std::size_t c = 0; c < opts.cols; ++c)
            if (uniform[r][c] != 0)
                d.interactions.push_back(make_interaction(static_cast<UserId>(r),
                                                          static_cast<ItemId>(c), uniform[r][c],
                                                          Source::Uniform));
    d.validate();
    return d;
}

Dataset load_coat(const std::filesystem::path& train_matrix_path,
                  const std::filesystem::path& test_matrix_path, const CoatOptions& opts) {
    auto tr = open_or_throw(train_matrix_path);
    auto te = open_or_throw(test_matrix_path);
    return parse_coat(tr, te, opts, train_matrix_path.string(), test_matrix_path.string());
}

void write_canonical(std::ostream& out, const Dataset& data) {
    for (const auto& x : data.interactions)
        out << x.user << '\t' << x.item << '\t' << x.rating << '\t' << to_string(x.source) << '\n';
}

Dataset read_canonical(std::istream& in, std::size_t n_users, std::size_t n_items,
                       std::string_view name) {
    Dataset d;
    d.n_users = n_users;
    d.n_items = n_items;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto text = strip_cr(line);
        if (text.empty()) continue;
        const auto parts = split_on(text, '\t');
        if (parts.size() != 4)
            throw ParseError(std::string(name), lineno, "expected 4 tab-separated fields");
        UserId u = 0;
        ItemId i = 0;
        int rating = 0;
        if (!parse_number(parts[0], u) || !parse_number(parts[1], i) ||
            !parse_number(parts[2], rating))
            throw ParseError(std::string(name), lineno, "non-integer field");
        if (rating < 1 || rating > 5)
            throw ParseError(std::string(name), lineno, "rating outside 1..5");
        if (u >= n_users || i >= n_items)
            throw ParseError(std::string(name), lineno, "id out of range");
        Source s;
        try {
            s = parse_source(parts[3]);
        } catch (const std::invalid_argument& e) {
            throw ParseError(std::string(name), lineno, e.what());
        }
        d.interactions.push_back(make_interaction(u, i, rating, s));
    }
    d.validate();
    return d;
}

UniformSplit split_uniform(std::span<const Interaction> uniform, const SplitSpec& spec) {
    if (!(spec.uniform_train_fraction > 0.0 && spec.uniform_train_fraction < 1.0))
        throw std::invalid_argument("split: uniform_train_fraction must lie in (0, 1)");
    const std::size_t n = uniform.size();
    if (n < 3) throw std::invalid_argument("split: at least 3 uniform interactions required");

    std::vector<Interaction> shuffled(uniform.begin(), uniform.end());
    RngStream rng = RngStream(spec.seed).split("split_uniform");
    rng.shuffle(shuffled);

    auto n_train = static_cast<std::size_t>(
        std::floor(spec.uniform_train_fraction * static_cast<double>(n) + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
    const std::size_t rest = n - n_train;
    const std::size_t n_val = (rest + 1) / 2;

    UniformSplit s;
    const auto b = shuffled.begin();
    s.train.assign(b, b + static_cast<std::ptrdiff_t>(n_train));
    s.validation.assign(b + static_cast<std::ptrdiff_t>(n_train),
                        b + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(b + static_cast<std::ptrdiff_t>(n_train + n_val), shuffled.end());
    return s;
}

std::vector<std::vector<Interaction>> partition_batches(std::span<const Interaction> data,
                                                        std::size_t batches, RngStream& rng) {
    if (batches == 0) throw std::invalid_argument("partition: M must be at least 1");
    if (batches > data.size())
        throw std::invalid_argument("partition: M=" + std::to_string(batches) +
                                    " exceeds data size " + std::to_string(data.size()));
    std::vector<Interaction> shuffled(data.begin(), data.end());
    rng.shuffle(shuffled);
    const std::size_t base = data.size() / batches;
    const std::size_t extra = data.size() % batches;
    std::vector<std::vector<Interaction>> out(batches);
    std::size_t pos = 0;
    for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t len = base + (b < extra ? 1 : 0);
        out[b].assign(shuffled.begin() + static_cast<std::ptrdiff_t>(pos),
                      shuffled.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    return out;
}

UnobservedSampler::UnobservedSampler(std::size_t n_users, std::size_t n_items,
                                     std::span<const UserItem> observed, RngStream rng)
    : n_users_(n_users), n_items_(n_items), observed_(n_users * n_items, false), rng_(rng) {
    if (n_users == 0 || n_items == 0) throw std::invalid_argument("sampler: empty grid");
    std::size_t n_observed = 0;
    for (const auto& p : observed) {
        if (p.user >= n_users || p.item >= n_items)
            throw std::out_of_range("sampler: observed pair out of range");
        const auto k = pair_key(n_items, p.user, p.item);
        if (!observed_[k]) {
            observed_[k] = true;
            ++n_observed;
        }
    }
    complement_size_ = n_users * n_items - n_observed;
    // Rejection sampling is fast while at least a quarter of the grid is free;
    // otherwise enumerate the complement once.
    if (complement_size_ > 0 && complement_size_ * 4 < n_users * n_items) {
        complement_.reserve(complement_size_);
        for (std::size_t u = 0; u < n_users; ++u)
            for (std::size_t i = 0; i < n_items; ++i)
                if (!observed_[u * n_items + i])
                    complement_.push_back({static_cast<UserId>(u), static_cast<ItemId>(i)});
    }
}

namespace {
std::vector<UserItem> all_pairs(const Dataset& data) {
    std::vector<UserItem> pairs;
    pairs.reserve(data.interactions.size());
    for (const auto& x : data.interactions) pairs.push_back(x.pair());
    return pairs;
}
} // namespace

UnobservedSampler::UnobservedSampler(const Dataset& data, RngStream rng)
    : UnobservedSampler(data.n_users, data.n_items, all_pairs(data), rng) {}

bool UnobservedSampler::is_observed(UserId user, ItemId item) const {
    if (user >= n_users_ || item >= n_items_) throw std::out_of_range("sampler: pair out of range");
    return observed_[pair_key(n_items_, user, item)];
}

std::vector<UserItem> UnobservedSampler::sample(std::size_t n) {
    if (complement_size_ == 0)
        throw std::runtime_error("sampler: every user-item pair is observed");
    std::vector<UserItem> out;
    out.reserve(n);
    if (!complement_.empty()) {
        for (std::size_t k = 0; k < n; ++k) out.push_back(complement_[rng_.uniform_index(complement_.size())]);
        return out;
    }
    const std::uint64_t grid = static_cast<std::uint64_t>(n_users_) * n_items_;
    while (out.size() < n) {
        const auto key = rng_.uniform_index(grid);
        if (observed_[key]) continue;
        out.push_back({static_cast<UserId>(key / n_items_), static_cast<ItemId>(key % n_items_)});
    }
    return out;
}

std::pair<SyntheticWorld, Dataset> generate_synthetic(const SyntheticParams& params) {
    if (params.n_users == 0 || params.n_items == 0 || params.latent_dim == 0)
        throw std::invalid_argument("synthetic: sizes must be positive");
    const std::size_t grid = params.n_users * params.n_items;
    if (params.n_biased > grid || params.n_uniform > grid)
        throw std::invalid_argument("synthetic: more interactions than user-item pairs");

    RngStream root(params.seed);
    RngStream factors = root.split("factors");
    SyntheticWorld w;
    w.n_users = params.n_users;
    w.n_items = params.n_items;
    w.seed = params.seed;

    // Dot products have standard deviation ~1.5 regardless of latent_dim.
    const double sd = std::pow(2.25 / static_cast<double>(params.latent_dim), 0.25);
    std::vector<double> uf(params.n_users * params.latent_dim), itf(params.n_items * params.latent_dim);
    for (double& v : uf) v = sd * factors.normal();
    for (double& v : itf) v = sd * factors.normal();
    std::vector<double> item_bias(params.n_items);
    for (double& v : item_bias) v = factors.normal();
    constexpr double kGlobalBias = -2.0;

    w.prob.resize(grid);
    for (std::size_t u = 0; u < params.n_users; ++u)
        for (std::size_t i = 0; i < params.n_items; ++i) {
            double z = kGlobalBias + item_bias[i];
            for (std::size_t k = 0; k < params.latent_dim; ++k)
                z += uf[u * params.latent_dim + k] * itf[i * params.latent_dim + k];
            w.prob[u * params.n_items + i] = sigmoid(z);
        }

    w.item_popularity.resize(params.n_items);
    for (std::size_t i = 0; i < params.n_items; ++i) {
        double s = 0.0;
        for (std::size_t u = 0; u < params.n_users; ++u) s += w.prob[u * params.n_items + i];
        w.item_popularity[i] = s / static_cast<double>(params.n_users);
    }
    {
        const double mean = std::accumulate(w.item_popularity.begin(), w.item_popularity.end(), 0.0) /
                            static_cast<double>(params.n_items);
        double var = 0.0;
        for (double v : w.item_popularity) var += (v - mean) * (v - mean);
        const double sdev = std::sqrt(var / static_cast<double>(params.n_items));
        for (double& v : w.item_popularity) v = sdev > 0.0 ? (v - mean) / sdev : 0.0;
    }

    w.biased_item_dist.resize(params.n_items);
    w.uniform_item_dist.assign(params.n_items, 1.0 / static_cast<double>(params.n_items));
    {
        const double top = *std::max_element(w.item_popularity.begin(), w.item_popularity.end());
        double total = 0.0;
        for (std::size_t i = 0; i < params.n_items; ++i) {
            w.biased_item_dist[i] = std::exp(params.exposure_skew * (w.item_popularity[i] - top));
            total += w.biased_item_dist[i];
        }
        for (double& v : w.biased_item_dist) v /= total;
    }

    Dataset d;
    d.n_users = params.n_users;
    d.n_items = params.n_items;
    auto draw_log = [&](std::size_t n, const std::vector<double>& item_dist, Source source,
                        RngStream rng) {
        std::vector<double> cdf(item_dist.size());
        std::partial_sum(item_dist.begin(), item_dist.end(), cdf.begin());
        std::vector<bool> taken(grid, false);
        std::size_t drawn = 0;
        std::size_t attempts = 0;
        const std::size_t max_attempts = 1000 * (n + 1) + 100 * grid;
        while (drawn < n) {
            if (++attempts > max_attempts)
                throw std::runtime_error("synthetic: exposure too concentrated for requested log size");
            const auto u = static_cast<UserId>(rng.uniform_index(params.n_users));
            const double x = rng.uniform01() * cdf.back();
            auto it = std::upper_bound(cdf.begin(), cdf.end(), x);
            if (it == cdf.end()) --it;
            const auto i = static_cast<ItemId>(it - cdf.begin());
            const std::size_t key = static_cast<std::size_t>(u) * params.n_items + i;
            if (taken[key]) continue;
            taken[key] = true;
            ++drawn;
            const bool liked = rng.bernoulli(w.p(u, i));
            const int rating = liked ? 5 : 1 + static_cast<int>(rng.uniform_index(4));
            d.interactions.push_back(make_interaction(u, i, rating, source));
        }
    };
    draw_log(params.n_biased, w.biased_item_dist, Source::Biased, root.split("biased_log"));
    draw_log(params.n_uniform, w.uniform_item_dist, Source::Uniform, root.split("uniform_log"));
    d.validate();
    return {std::move(w), std::move(d)};
}

} // namespace eng
