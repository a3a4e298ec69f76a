#pragma once

#include <cstdint>
#include <random>

#include "predft/numkit/tensor.hpp"

namespace predft::testing {

inline numkit::Tensor random_tensor(numkit::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  numkit::Tensor t(std::move(shape));
  for (double& v : t.storage()) v = u(rng);
  return t;
}

inline numkit::Tensor random_normal(numkit::Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  numkit::Tensor t(std::move(shape));
  for (double& v : t.storage()) v = n(rng);
  return t;
}

}  // namespace predft::testing
