#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "mtlfer/model.hpp"
#include "mtlfer/tensor.hpp"

namespace mtlfer {

/// Per-class multipliers for the expression loss, mean-normalized to 1.
struct ClassWeights {
  std::array<double, kNumClasses> w{1, 1, 1, 1, 1, 1};

  static ClassWeights uniform() { return {}; }
  /// Throws ConfigError unless every entry is positive; rescales to mean 1.
  static ClassWeights normalized(std::array<double, kNumClasses> raw);
};

/// Inverse-frequency weights, normalized to mean 1. A zero count is a
/// ConfigError: merge or drop that class first.
ClassWeights class_weights_from_frequencies(std::span<const std::size_t> counts);

/// L = -(1/N) Σ_n Σ_c w_c t[n,c] log softmax(logits)[n,c].
/// Targets are row distributions (one-hot or mixed); rows off the simplex
/// by more than 1e-4 are a UsageError.
template <typename T>
Tensor<T> weighted_cross_entropy(Tape<T>& tape, Tensor<T> logits, Tensor<T> targets,
                                 const ClassWeights& weights);

/// Mean over all entries of (pred - target)^2.
template <typename T>
Tensor<T> mse_landmark_loss(Tape<T>& tape, Tensor<T> pred, Tensor<T> target);

/// expr_loss + lambda · land_loss. Negative lambda is a ConfigError.
template <typename T>
Tensor<T> joint_loss(Tape<T>& tape, Tensor<T> expr_loss, Tensor<T> land_loss, double lambda);

}  // namespace mtlfer
