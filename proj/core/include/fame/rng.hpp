#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "fame/types.hpp"

namespace fame {

// Mixes a base seed with stream coordinates (splitmix64 finalizer). Used to
// give every trajectory its own stream so results never depend on batch size
// or worker count.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  double normal();
  double uniform();
  std::size_t uniform_index(std::size_t n);
  Vector normal_vector(std::size_t d);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace fame
