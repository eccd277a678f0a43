#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>

#include "eng/data.hpp"
#include "eng/losses.hpp"
#include "eng/network.hpp"

namespace eng {

/// AUC requested on input that lacks positives or negatives.
class UndefinedAucError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct MetricsResult {
    double auc = 0.0;
    double bce = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

/// Probability that a random positive outscores a random negative, ties
/// counted half. Computed from average ranks in O(n log n).
double auc(std::span<const double> scores, std::span<const int> labels);

/// Mean clamped BCE.
double bce_eval(std::span<const double> scores, std::span<const int> labels, ClampPolicy clamp = {});

/// Scores every interaction without dropout, then AUC and BCE.
MetricsResult evaluate(const Network& net, std::span<const Interaction> testset);

} // namespace eng
