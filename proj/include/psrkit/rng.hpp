#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace psrkit {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent generator for substream (name, index) of a master seed.
/// The same triple always yields the same sequence regardless of which
/// thread draws from it or in what order other substreams are used.
inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name,
                                 std::uint64_t index = 0) {
  std::uint64_t k = splitmix64(seed ^ splitmix64(hash_name(name)));
  k = splitmix64(k ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  return std::mt19937_64(seq);
}

// Uniform index in [0, n); avoids implementation-defined distribution objects so
// resampling sequences are identical across standard libraries.
inline std::size_t uniform_index(std::mt19937_64& gen, std::size_t n) {
  const std::uint64_t range = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t r;
  do {
    r = gen();
  } while (r >= limit);
  return static_cast<std::size_t>(r % range);
}

template <typename Vec>
void shuffle_in_place(Vec& v, std::mt19937_64& gen) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(gen, i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace psrkit
