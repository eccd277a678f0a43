#pragma once

#include <filesystem>
#include <iosfwd>

#include "eng/network.hpp"

namespace eng {

/// Binary network checkpoint, little-endian:
///   "ENGCKPT\0", u32 version,
///   u64 n_users, u64 n_items, u64 embedding_dim, u64 n_hidden, u64 hidden[n_hidden],
///   f64 dropout_rate, u32 init_rule, u64 seed,
///   u64 n_arrays, then per array (declaration order) u64 length + f64 values.
/// Values are stored as raw IEEE-754 bits, so a round trip is bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Network& net);
Network read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);

} // namespace eng
