#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace modcascade {

/// Engine for every simulated draw. std::mt19937_64 output is fully specified
/// by the standard; distributions come from Boost.Random so sequences do not
/// depend on the standard library vendor.
using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a; stable across platforms unlike std::hash.
inline std::uint64_t hash_string(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  return splitmix64(seed ^ splitmix64(salt));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt) noexcept {
  return mix_seed(seed, hash_string(salt));
}

/// Independent stream for one (seed, image, slot) triple.
inline Engine stream_for(std::uint64_t seed, std::string_view image_id, std::uint64_t slot) {
  return Engine(mix_seed(mix_seed(seed, image_id), slot));
}

}  // namespace modcascade
