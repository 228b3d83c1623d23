#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace ub {

// xoshiro256** with splitmix64 seeding. Deterministic across platforms,
// unlike the std:: distributions, so every sampled value is reproducible
// bit-for-bit from the seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). n must be > 0. Unbiased via rejection.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller (no cached second value, so the stream
  // position is a pure function of the draw count).
  double normal();

  // In-place Fisher-Yates shuffle of indices 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::array<std::uint64_t, 4> s_;
};

// Splits a master seed into an independent per-purpose stream seed, e.g.
// seed_for(seed, "init") vs seed_for(seed, "shuffle"). Purposes are hashed
// with FNV-1a so new purposes never perturb existing streams.
std::uint64_t seed_for(std::uint64_t master, std::string_view purpose);

// Per-epoch variant for streams that must be reproducible mid-run (shuffles,
// random-label redraws): the result depends only on (master, purpose, epoch).
std::uint64_t seed_for(std::uint64_t master, std::string_view purpose,
                       std::uint64_t epoch);

std::uint64_t splitmix64(std::uint64_t& state);

// FNV-1a 64-bit digest over a byte string. Used for config digests: a stable
// content fingerprint, not a cryptographic hash.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace ub
