#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "cds/tensor.hpp"

namespace cds {

// Seeded random source. Distributions are implemented here rather than with
// the <random> distribution classes so draws are identical across standard
// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  // Uniform integer in [lo, hi], inclusive. Requires lo <= hi.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  Latent normal_like(const Shape& shape);

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from (seed, stream, index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace cds
