#pragma once

#include <cstdint>
#include <random>

#include "imsm/tensor.hpp"

namespace imsm {

// Deterministic RNG for initialization, data generation, and shuffling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double gauss(double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    return d(gen_);
  }

  double uniform() {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(gen_);
  }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline void fill_gaussian(Tensor& t, double stddev, Rng& rng) {
  for (double& v : t.values()) v = rng.gauss(stddev);
}

}  // namespace imsm
