#pragma once

#include <cstdint>

namespace gcnn {

/// splitmix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Counter-based draw: a pure function of (seed, counter), so results do not
/// depend on evaluation order or thread scheduling.
inline constexpr std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t counter) {
  return mix64(mix64(seed) ^ (counter * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
}

/// Uniform in [0, 1) with 53 bits.
inline constexpr double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
  return static_cast<double>(counter_hash(seed, counter) >> 11) * 0x1.0p-53;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return counter_hash(counter_hash(seed, a), b ^ 0xA5A5A5A5u);
}

}  // namespace gcnn
