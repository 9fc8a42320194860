#pragma once

#include <cstdint>
#include <random>

namespace ftea {

// splitmix64; used to derive independent stream seeds from one base seed.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return mix_seed(a ^ mix_seed(b)); }

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(mix_seed(seed)); }

}  // namespace ftea
