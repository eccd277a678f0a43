#include "eng/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace eng {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'E', 'N', 'G', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated input");
    return v;
}

} // namespace

void write_checkpoint(std::ostream& out, const Network& net) {
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kCheckpointVersion);
    const auto& c = net.config;
    put<std::uint64_t>(out, c.n_users);
    put<std::uint64_t>(out, c.n_items);
    put<std::uint64_t>(out, c.embedding_dim);
    put<std::uint64_t>(out, c.hidden_sizes.size());
    for (auto h : c.hidden_sizes) put<std::uint64_t>(out, h);
    put<double>(out, c.dropout_rate);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.init_rule));
    put<std::uint64_t>(out, net.seed);

    std::uint64_t n_arrays = 0;
    net.params.for_each_array([&](std::span<const double>, bool) { ++n_arrays; });
    put<std::uint64_t>(out, n_arrays);
    net.params.for_each_array([&](std::span<const double> a, bool) {
        put<std::uint64_t>(out, a.size());
        out.write(reinterpret_cast<const char*>(a.data()),
                  static_cast<std::streamsize>(a.size() * sizeof(double)));
    });
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

Network read_checkpoint(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw std::runtime_error("checkpoint: bad magic");
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    NetworkConfig c;
    c.n_users = get<std::uint64_t>(in);
    c.n_items = get<std::uint64_t>(in);
    c.embedding_dim = get<std::uint64_t>(in);
    const auto n_hidden = get<std::uint64_t>(in);
    if (n_hidden > 3) throw std::runtime_error("checkpoint: corrupt hidden layer count");
    c.hidden_sizes.resize(n_hidden);
    for (auto& h : c.hidden_sizes) h = get<std::uint64_t>(in);
    c.dropout_rate = get<double>(in);
    const auto rule = get<std::uint32_t>(in);
    if (rule != static_cast<std::uint32_t>(InitRule::FanUniform))
        throw std::runtime_error("checkpoint: unknown init rule");
    c.init_rule = InitRule::FanUniform;

    Network net = zero_network(c);
    net.seed = get<std::uint64_t>(in);

    std::uint64_t expected = 0;
    net.params.for_each_array([&](std::span<double>, bool) { ++expected; });
    if (get<std::uint64_t>(in) != expected)
        throw std::runtime_error("checkpoint: array count does not match config");
    net.params.for_each_array([&](std::span<double> a, bool) {
        if (get<std::uint64_t>(in) != a.size())
            throw std::runtime_error("checkpoint: array length does not match config");
        in.read(reinterpret_cast<char*>(a.data()),
                static_cast<std::streamsize>(a.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated array");
    });
    return net;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
    write_checkpoint(out, net);
}

Network load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    return read_checkpoint(in);
}

} // namespace eng
