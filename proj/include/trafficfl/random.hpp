#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace trafficfl {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a master seed and a key path,
/// e.g. derive_seed(master, {kStreamClient, round, user_id}).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = mix64(master);
    for (std::uint64_t k : keys) {
        h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
    return Rng{derive_seed(master, keys)};
}

// Stream tags, so that streams for different purposes never collide.
inline constexpr std::uint64_t kStreamUser = 1;
inline constexpr std::uint64_t kStreamArchetypePrior = 2;
inline constexpr std::uint64_t kStreamUserPrior = 3;
inline constexpr std::uint64_t kStreamDataset = 4;
inline constexpr std::uint64_t kStreamPartition = 5;
inline constexpr std::uint64_t kStreamSelection = 6;
inline constexpr std::uint64_t kStreamClient = 7;
inline constexpr std::uint64_t kStreamModelInit = 8;
inline constexpr std::uint64_t kStreamTrace = 9;
inline constexpr std::uint64_t kStreamTestSet = 10;

}  // namespace trafficfl
