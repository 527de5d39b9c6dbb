#pragma once

// Every random draw in the library comes from an explicit Rng. A single root
// seed is split into named, independent streams ("split", "augment", "init",
// "train", ...) so that adding draws to one stream never shifts another.

#include <cstdint>
#include <random>
#include <string_view>

namespace vesselseg {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t stream_seed(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
    return splitmix64(splitmix64(root ^ fnv1a64(name)) + index);
}

inline Rng make_stream(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
    return Rng(stream_seed(root, name, index));
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace vesselseg
