#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "mtlfer/ops.hpp"
#include "mtlfer/rng.hpp"
#include "mtlfer/tensor.hpp"

namespace mtlfer::testing {

inline constexpr int kGradSeeds = 10;
inline constexpr double kGradTol = 1e-4;

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

/// Values in ±[margin, 1], keeping ReLU inputs away from the kink.
inline Tensor<double> away_from_zero(Shape shape, Rng& rng, double margin = 0.05) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    const double m = rng.uniform(margin, 1.0);
    x = rng.bernoulli(0.5) ? m : -m;
  }
  return Tensor<double>(std::move(shape), std::move(v), true);
}

/// sum(out ⊙ R) for a fixed random R, so every output coordinate matters.
inline Tensor<double> probe(Tape<double>& tape, const Tensor<double>& out, const Tensor<double>& weights) {
  return ops::sum(tape, ops::mul(tape, out, weights));
}

/// Scratch directory under the build tree, emptied on construction.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mtlfer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mtlfer::testing
