#include "eng/rng.hpp"

#include <cmath>
#include <numbers>

namespace eng {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) noexcept {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RngStream RngStream::split(std::string_view label) const noexcept {
    return RngStream(splitmix64(seed_ ^ splitmix64(fnv1a64(label))));
}

RngStream RngStream::split(std::string_view label, std::uint64_t index) const noexcept {
    const std::uint64_t key = splitmix64(fnv1a64(label) + splitmix64(index));
    return RngStream(splitmix64(seed_ ^ key));
}

std::uint64_t RngStream::next_u64() noexcept {
    // Weyl sequence over the stream key, finalized by the SplitMix64 mixer.
    const std::uint64_t key = splitmix64(seed_);
    return splitmix64(key + 0x9e3779b97f4a7c15ULL * (++counter_));
}

double RngStream::uniform01() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) noexcept {
    // Rejection on the top of the range keeps the draw exactly uniform.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

double RngStream::normal() noexcept {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace eng
