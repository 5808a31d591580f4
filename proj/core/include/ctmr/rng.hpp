#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ctmr {

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Child seeds are derived from a parent by mixing in a stream id or label,
// so every random consumer in a run hangs off a single master seed.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi);
  double normal(double mean, double stddev);
  // Inclusive on both ends.
  int uniform_int(int lo, int hi);
  std::uint64_t next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ctmr
