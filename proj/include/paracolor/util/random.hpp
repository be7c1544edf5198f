#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace paracolor {

/// SplitMix64 finalizer; a cheap bijective scrambler for deriving seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent stream seed for (seed, stream) pairs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// Fisher-Yates with an explicit engine so orders do not depend on the
/// standard library's shuffle algorithm.
template <class T>
void shuffle_in_place(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace paracolor
