#pragma once

#include <cstdint>

#include <boost/random/mersenne_twister.hpp>

namespace bpsim {

/// Generator used everywhere in the library. Boost.Random distributions are
/// used on top of it because their output is specified bit-for-bit across
/// platforms, unlike the <random> distributions.
using Rng = boost::random::mt19937_64;

/// Mixes a base seed with a stream index (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Uniform real in [0, 1).
double uniform01(Rng& rng);

/// Uniform integer in [lo, hi].
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);

/// Normal(mean, stddev). stddev == 0 returns mean without consuming entropy.
double normal(Rng& rng, double mean, double stddev);

}  // namespace bpsim
