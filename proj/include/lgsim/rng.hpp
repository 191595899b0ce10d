#pragma once

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lgsim {

using Rng = std::mt19937_64;

// Stream tags keep independently seeded consumers from ever sharing a stream.
enum class Stream : std::uint64_t {
  Dictionary = 1,
  Init = 2,
  Batch = 3,
  BatchOrder = 4,
  Diagnostic = 5,
  Audit = 6,
  Clustering = 7,
  MonteCarlo = 8,
  GradCheck = 9,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds (master seed, stream, indices...) into a single 64-bit seed.
inline std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                 std::initializer_list<std::uint64_t> parts = {}) {
  std::uint64_t h = splitmix64(master ^ 0x6c67736d5f736565ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  for (std::uint64_t p : parts) h = splitmix64(h ^ (p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t master, Stream stream,
                    std::initializer_list<std::uint64_t> parts = {}) {
  return Rng(derive_seed(master, stream, parts));
}

inline double standard_normal(Rng& rng) {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;  // boost rejects forever on an empty range
  boost::random::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  boost::random::uniform_int_distribution<int> dist(lo, hi_inclusive);
  return dist(rng);
}

}  // namespace lgsim
