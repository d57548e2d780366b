#pragma once

#include "cdcflow/core/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cdcflow {

/// Counter-based stream splitting. Every random quantity in the library is
/// drawn from an engine keyed by (seed, counters...), so the draws for a given
/// (epoch, batch) or (sample block) do not depend on what ran before it or on
/// how work is distributed across threads.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t c : counters) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

using Engine = std::mt19937_64;

inline Engine make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> counters = {}) {
  return Engine(derive_seed(seed, counters));
}

/// Stream tags, so unrelated consumers of one seed never share a stream.
namespace stream_tag {
inline constexpr std::uint64_t dataset = 1;
inline constexpr std::uint64_t split = 2;
inline constexpr std::uint64_t init = 3;
inline constexpr std::uint64_t epoch = 4;
inline constexpr std::uint64_t batch = 5;
inline constexpr std::uint64_t sample = 6;
inline constexpr std::uint64_t noise = 7;
}  // namespace stream_tag

inline double uniform01(Engine& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline Matrix standard_normal(Engine& rng, Index rows, Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  return out;
}

}  // namespace cdcflow
