#pragma once

#include <cstdint>

#include "ldfuse/tensor.hpp"

namespace ldfuse::testing {

// 32-bit LCG shared with tests/oracles/oracles.py so both sides see the
// same inputs.
class Lcg {
 public:
  explicit Lcg(std::uint32_t seed) : s_(seed) {}
  std::uint32_t next() {
    s_ = s_ * 1664525u + 1013904223u;
    return s_;
  }
  double unit() { return static_cast<double>(next() >> 8) / static_cast<double>(1u << 24); }
  double byte() { return static_cast<double>(next() >> 24); }

 private:
  std::uint32_t s_;
};

inline Tensor lcg_unit(std::uint32_t seed, Shape shape) {
  Lcg g(seed);
  Tensor t(shape);
  for (double& v : t.values()) v = g.unit();
  return t;
}

inline Tensor lcg_bytes(std::uint32_t seed, Shape shape) {
  Lcg g(seed);
  Tensor t(shape);
  for (double& v : t.values()) v = g.byte();
  return t;
}

}  // namespace ldfuse::testing
