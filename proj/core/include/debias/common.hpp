#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace debias {

using Rng = std::mt19937_64;

// FNV-1a over raw bytes. Used for vocab hashes, data fingerprints and
// frozen-parameter checksums.
inline std::uint64_t fnv1a_bytes(const void* data, std::size_t len,
                                 std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
    return fnv1a_bytes(s.data(), s.size(), seed);
}

std::string hex64(std::uint64_t v);

// Deterministic per-stage seed derivation so every stage draws from its own
// stream while the whole run is controlled by one global seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    return fnv1a(tag, base ^ 0x9e3779b97f4a7c15ULL);
}

// Shuffle indices 0..n-1 with the given rng.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace debias
