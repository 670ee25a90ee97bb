#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace nrba {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent substream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based substream derivation: the seed depends only on the master seed
/// and the path of counters, never on the order in which streams are created.
constexpr std::uint64_t substream_seed(std::uint64_t master,
                                       std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t s = mix64(master);
    for (std::uint64_t c : path) s = mix64(s ^ mix64(c + 0x632be59bd9b4e019ULL));
    return s;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    return Rng(substream_seed(master, path));
}

/// Named purposes keep substreams for different stages disjoint.
enum class Stream : std::uint64_t {
    Covariates = 1,
    Dropout = 2,
    Shift = 3,
    ItemMissing = 4,
    Intermittent = 5,
    Cluster = 6,
    Imputation = 7,
    Bootstrap = 8,
    ItemImputation = 9,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace nrba
