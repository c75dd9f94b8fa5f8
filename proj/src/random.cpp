#include "bpsim/random.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace bpsim {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(Rng& rng) {
  boost::random::uniform_01<double> dist;
  return dist(rng);
}

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  boost::random::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return dist(rng);
}

double normal(Rng& rng, double mean, double stddev) {
  if (stddev == 0.0) return mean;
  boost::random::normal_distribution<double> dist(mean, stddev);
  return dist(rng);
}

}  // namespace bpsim
