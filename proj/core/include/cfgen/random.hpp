#pragma once

#include <cstdint>
#include <random>

namespace cfgen {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Generator for stream `stream` under master seed `seed`. Streams with
/// different (seed, stream) pairs are statistically independent, and the
/// result does not depend on which thread asks for it.
Rng make_stream(std::uint64_t seed, std::uint64_t stream);

/// Derives a child seed, e.g. one per training stage or per method.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

double uniform01(Rng& rng);
double standard_normal(Rng& rng);

}  // namespace cfgen
