#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace emoshift {

/// Derives an independent stream seed from the global seed, a purpose tag and an index.
/// New consumers pick a new purpose tag, so adding one never shifts any existing stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(seed, purpose, index));
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [lo, hi]. Uses rejection so the result does not depend on the standard library.
std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi);

/// Standard normal draw (Box-Muller, one value per call).
double standard_normal(std::mt19937_64& rng);

/// Index drawn from unnormalized nonnegative weights.
std::size_t sample_categorical(std::span<const double> weights, std::mt19937_64& rng);

/// In-place Fisher-Yates shuffle driven by `uniform_int`.
template <typename It>
void shuffle(It first, It last, std::mt19937_64& rng) {
  const auto n = static_cast<std::int64_t>(last - first);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = uniform_int(rng, 0, i);
    std::iter_swap(first + i, first + j);
  }
}

/// FNV-1a over raw bytes; used for content hashes of checkpoints and backbones.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace emoshift
