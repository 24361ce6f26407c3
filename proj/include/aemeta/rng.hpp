#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace aemeta {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of child stream `index` under `parent`. Streams are addressed by a
/// path of indices from the master seed, e.g. {replication, analysis, chain},
/// so the seed each unit of work receives depends only on its position and
/// never on which thread runs it or in what order.
constexpr std::uint64_t stream_seed(std::uint64_t parent, std::uint64_t index) {
    return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t stream_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = master;
    for (auto i : path) s = stream_seed(s, i);
    return s;
}

inline Engine make_engine(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    return Engine(stream_seed(master, path));
}

}  // namespace aemeta
