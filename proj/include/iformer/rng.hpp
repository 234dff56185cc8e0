// Seeded RNG helpers; every stochastic path in the project goes through
// this so a seed pins results exactly.
#pragma once

#include <cstdint>
#include <random>

#include "iformer/tensor.hpp"

namespace iformer {

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  float uniform(float lo, float hi) {
    std::uniform_real_distribution<float> dist(lo, hi);
    return dist(engine_);
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> dist(lo, hi);
    return dist(engine_);
  }

  float normal(float mean, float stddev) {
    std::normal_distribution<float> dist(mean, stddev);
    return dist(engine_);
  }

  // Normal(0, stddev) resampled until within two standard deviations.
  float truncated_normal(float stddev) {
    for (;;) {
      float v = normal(0.0f, stddev);
      if (v >= -2.0f * stddev && v <= 2.0f * stddev) return v;
    }
  }

  Tensor uniform_tensor(std::vector<int64_t> shape, float lo, float hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = uniform(lo, hi);
    return t;
  }

  Tensor normal_tensor(std::vector<int64_t> shape, float mean, float stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = normal(mean, stddev);
    return t;
  }

  Tensor truncated_normal_tensor(std::vector<int64_t> shape, float stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = truncated_normal(stddev);
    return t;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace iformer
