#pragma once

#include <cstdint>
#include <random>

namespace rydec {

/// splitmix64 step; used to decorrelate derived seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic per-trajectory seed: independent of thread scheduling,
/// stable across runs for a fixed (master_seed, index).
inline std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t index) {
    return splitmix64(master_seed ^ splitmix64(index + 1));
}

inline std::mt19937_64 make_engine(std::uint64_t master_seed, std::uint64_t index) {
    return std::mt19937_64(derive_seed(master_seed, index));
}

} // namespace rydec
