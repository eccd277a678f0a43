#include "eng/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace eng {

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += (y == 1);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedAucError("auc: undefined without both positive and negative labels");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of (1-based, tie-averaged) ranks of the positives. Ranks are kept
    // doubled so every quantity stays an exact integer.
    std::uint64_t twice_rank_sum = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const std::uint64_t twice_avg = (i + 1) + (j + 1);
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) twice_rank_sum += twice_avg;
        i = j + 1;
    }
    const std::uint64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double bce_eval(std::span<const double> scores, std::span<const int> labels, ClampPolicy clamp) {
    if (scores.size() != labels.size()) throw std::invalid_argument("bce_eval: length mismatch");
    if (scores.empty()) throw std::invalid_argument("bce_eval: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) s += bce(scores[i], labels[i], clamp);
    return s / static_cast<double>(scores.size());
}

MetricsResult evaluate(const Network& net, std::span<const Interaction> testset) {
    if (testset.empty()) throw std::invalid_argument("evaluate: empty test set");
    std::vector<UserItem> pairs;
    std::vector<int> labels;
    pairs.reserve(testset.size());
    labels.reserve(testset.size());
    for (const auto& x : testset) {
        pairs.push_back(x.pair());
        labels.push_back(x.label);
    }
    RngStream unused(0);
    const auto scores = forward_batch(net, pairs, ForwardMode::Deterministic, unused);
    MetricsResult r;
    for (int y : labels) (y == 1 ? r.n_pos : r.n_neg) += 1;
    r.auc = auc(scores, labels);
    r.bce = bce_eval(scores, labels);
    return r;
}

} // namespace eng
