#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tcseg {

using Rng = std::mt19937_64;

/// splitmix64 finaliser
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent stream seed for (base, purpose, index).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : purpose) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
  return mix64(mix64(base ^ h) + index);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace tcseg
