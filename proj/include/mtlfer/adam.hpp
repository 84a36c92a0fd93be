#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mtlfer/tensor.hpp"

namespace mtlfer {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers, one pair per trainable parameter.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step_count = 0;

  static AdamState for_params(std::span<const Tensor<T>> params, AdamConfig config = {}) {
    AdamState s;
    s.config = config;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.numel(), T{0});
      s.second_moment.emplace_back(p.numel(), T{0});
    }
    return s;
  }
};

/// One bias-corrected Adam update, reading each parameter's grad buffer.
/// Parameters without a grad buffer are treated as having zero gradient.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace mtlfer
