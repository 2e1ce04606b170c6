#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace gpna {

using Rng = std::mt19937_64;

/// FNV-1a; stable across platforms, used to derive per-key seeds.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ull)
{
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::vector<double> normal_values(Rng& rng, std::size_t n, double stddev)
{
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(n);
    for (auto& x : v)
        x = dist(rng);
    return v;
}

}  // namespace gpna
