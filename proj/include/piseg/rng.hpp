#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace piseg {

using Rng = std::mt19937_64;

// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a64(std::string_view text,
                                std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for a named sub-stream of a run seed, optionally indexed (e.g. by step).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view component,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ fnv1a64(component)) + index);
}

inline Rng make_rng(std::uint64_t seed, std::string_view component,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(seed, component, index));
}

}  // namespace piseg
