#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mtlfer/rng.hpp"
#include "mtlfer/tensor.hpp"

namespace mtlfer {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Trainable tensor with entries drawn from U(-bound, bound). Draws are made
/// in double precision so float and double models built from the same
/// stream agree up to rounding.
template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> zero_param(Shape shape) {
  return Tensor<T>(std::move(shape), T{0}, true);
}

/// He-uniform bound for weights feeding a ReLU.
inline double relu_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

/// LeCun-uniform bound for weights feeding a sigmoid, softmax or regression output.
inline double linear_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace mtlfer
