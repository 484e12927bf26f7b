#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace semalign {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// 64-bit FNV-1a, used for seed derivation and content checksums.
inline constexpr std::uint64_t fnv1a(std::string_view bytes,
                                     std::uint64_t h = 0xCBF29CE484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Derives an independent stream seed from a run seed, a purpose tag and two counters
/// (typically epoch and worker index). Every random stream in the toolkit is obtained
/// through this function, so a run is reproducible at any worker count:
///   seed' = splitmix64(splitmix64(seed ^ fnv1a(tag)) ^ a) ^ b, finalized once more.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                           std::uint64_t a = 0, std::uint64_t b = 0) noexcept {
    std::uint64_t s = splitmix64(seed ^ fnv1a(tag));
    s = splitmix64(s ^ a);
    return splitmix64(s ^ (b * 0xD6E8FEB86659FD93ULL));
}

inline Rng make_rng(std::uint64_t seed, std::string_view tag, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
    return Rng{derive_seed(seed, tag, a, b)};
}

}  // namespace semalign
