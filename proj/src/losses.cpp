#include "mtlfer/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mtlfer/ops.hpp"

namespace mtlfer {

ClassWeights ClassWeights::normalized(std::array<double, kNumClasses> raw) {
  double total = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!(raw[c] > 0.0) || !std::isfinite(raw[c])) {
      throw ConfigError("class weight " + std::to_string(c) + " must be positive and finite");
    }
    total += raw[c];
  }
  const double mean = total / static_cast<double>(kNumClasses);
  ClassWeights cw;
  for (std::size_t c = 0; c < kNumClasses; ++c) cw.w[c] = raw[c] / mean;
  return cw;
}

ClassWeights class_weights_from_frequencies(std::span<const std::size_t> counts) {
  if (counts.size() != kNumClasses) {
    throw ConfigError("class counts must have " + std::to_string(kNumClasses) + " entries, got " +
                      std::to_string(counts.size()));
  }
  std::array<double, kNumClasses> inv{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) {
      throw ConfigError("class " + std::to_string(c) +
                        " has no samples; merge or drop the class before weighting");
    }
    inv[c] = 1.0 / static_cast<double>(counts[c]);
  }
  return ClassWeights::normalized(inv);
}

template <typename T>
Tensor<T> weighted_cross_entropy(Tape<T>& tape, Tensor<T> logits, Tensor<T> targets,
                                 const ClassWeights& weights) {
  if (logits.rank() != 2 || logits.dim(1) != kNumClasses) {
    throw DimensionError("weighted_cross_entropy: logits must be N×6, got " + shape_string(logits.shape()));
  }
  if (targets.shape() != logits.shape()) {
    throw DimensionError("weighted_cross_entropy: targets " + shape_string(targets.shape()) +
                         " do not match logits " + shape_string(logits.shape()));
  }
  const std::size_t N = logits.dim(0), C = kNumClasses;
  for (std::size_t n = 0; n < N; ++n) {
    double row = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double t = static_cast<double>(targets.data()[n * C + c]);
      if (t < -1e-4) throw UsageError("weighted_cross_entropy: negative target in row " + std::to_string(n));
      row += t;
    }
    if (std::abs(row - 1.0) > 1e-4) {
      throw UsageError("weighted_cross_entropy: target row " + std::to_string(n) + " sums to " +
                       std::to_string(row) + ", expected 1");
    }
  }

  // log-softmax with max subtraction; probabilities kept for the backward rule.
  std::vector<T> probs(N * C);
  T loss{0};
  for (std::size_t n = 0; n < N; ++n) {
    const T* z = logits.data() + n * C;
    const T mx = *std::max_element(z, z + C);
    T total{0};
    for (std::size_t c = 0; c < C; ++c) total += std::exp(z[c] - mx);
    const T log_total = std::log(total);
    T row{0};
    for (std::size_t c = 0; c < C; ++c) {
      const T log_p = z[c] - mx - log_total;
      probs[n * C + c] = std::exp(log_p);
      row += static_cast<T>(weights.w[c]) * targets.data()[n * C + c] * log_p;
    }
    loss -= row;
  }
  loss /= static_cast<T>(N);
  Tensor<T> out = Tensor<T>::scalar(loss);

  if (tape.tracks(logits)) {
    out.set_requires_grad(true);
    tape.record([logits, targets, weights, out, probs = std::move(probs), N, C]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / static_cast<T>(N);
      T* dz = logits.grad().data();
      for (std::size_t n = 0; n < N; ++n) {
        // dL/dz_c = S p_c - w_c t_c with S = Σ_c w_c t_c.
        T s{0};
        for (std::size_t c = 0; c < C; ++c) s += static_cast<T>(weights.w[c]) * targets.data()[n * C + c];
        for (std::size_t c = 0; c < C; ++c) {
          const T wt = static_cast<T>(weights.w[c]) * targets.data()[n * C + c];
          dz[n * C + c] += g * (s * probs[n * C + c] - wt);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mse_landmark_loss(Tape<T>& tape, Tensor<T> pred, Tensor<T> target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_landmark_loss: prediction " + shape_string(pred.shape()) +
                         " and target " + shape_string(target.shape()) + " differ");
  }
  const std::size_t M = pred.numel();
  T acc{0};
  for (std::size_t i = 0; i < M; ++i) {
    const T d = pred.data()[i] - target.data()[i];
    acc += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(M));
  if (tape.tracks(pred, target)) {
    out.set_requires_grad(true);
    tape.record([pred, target, out, M]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] * T{2} / static_cast<T>(M);
      if (pred.requires_grad()) {
        T* dp = pred.grad().data();
        for (std::size_t i = 0; i < M; ++i) dp[i] += g * (pred.data()[i] - target.data()[i]);
      }
      if (target.requires_grad()) {
        T* dt = target.grad().data();
        for (std::size_t i = 0; i < M; ++i) dt[i] -= g * (pred.data()[i] - target.data()[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> joint_loss(Tape<T>& tape, Tensor<T> expr_loss, Tensor<T> land_loss, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("lambda must be a finite value >= 0, got " + std::to_string(lambda));
  }
  if (expr_loss.numel() != 1 || land_loss.numel() != 1) {
    throw DimensionError("joint_loss: both losses must be scalars");
  }
  return ops::add(tape, expr_loss, ops::scale(tape, land_loss, static_cast<T>(lambda)));
}

#define MTLFER_INSTANTIATE_LOSSES(T)                                                                 \
  template Tensor<T> weighted_cross_entropy(Tape<T>&, Tensor<T>, Tensor<T>,            \
                                            const ClassWeights&);                                    \
  template Tensor<T> mse_landmark_loss(Tape<T>&, Tensor<T>, Tensor<T>);                \
  template Tensor<T> joint_loss(Tape<T>&, Tensor<T>, Tensor<T>, double);

MTLFER_INSTANTIATE_LOSSES(float)
MTLFER_INSTANTIATE_LOSSES(double)

}  // namespace mtlfer
