#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace eng {

/// Counter-based random stream (SplitMix64 over a per-stream key).
///
/// Every draw is a pure function of (seed, counter), so two streams built
/// from the same seed and driven through the same call sequence produce
/// bit-identical output on any platform. Distributions are implemented here
/// rather than through <random> because the standard distributions are not
/// portable across library implementations.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0) noexcept : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    /// Child stream keyed by a label. Depends only on this stream's seed,
    /// never on how far it has advanced.
    RngStream split(std::string_view label) const noexcept;
    RngStream split(std::string_view label, std::uint64_t index) const noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1) with 53 random bits.
    double uniform01() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n) noexcept;
    bool bernoulli(double p) noexcept { return uniform01() < p; }
    double normal() noexcept;

    template <class T>
    void shuffle(std::span<T> values) noexcept {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(values[i - 1], values[j]);
        }
    }
    template <class T>
    void shuffle(std::vector<T>& values) noexcept {
        shuffle(std::span<T>(values));
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
/// 64-bit FNV-1a; used for labels, config hashes and file checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

} // namespace eng
