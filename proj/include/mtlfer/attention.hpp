#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtlfer/init.hpp"
#include "mtlfer/rng.hpp"
#include "mtlfer/tensor.hpp"

// Emotion-branch attention: each head gates a backbone feature map with a
// channel gate (squeeze-excitation style) and a spatial gate, pools the
// result and projects it to the branch feature dimension. Heads are
// combined by an element-wise mean.

namespace mtlfer {

template <typename T>
struct ChannelAttentionUnit {
  Tensor<T> squeeze;  // C × C/r
  Tensor<T> excite;   // C/r × C
  std::size_t reduction = 4;

  static ChannelAttentionUnit create(std::size_t channels, std::size_t reduction, Rng& rng);
  std::size_t channels() const { return squeeze.dim(0); }
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const;
};

template <typename T>
struct SpatialAttentionUnit {
  Tensor<T> reduce_kernel;  // C/r × C × 1 × 1
  Tensor<T> reduce_bias;    // C/r
  Tensor<T> map_kernel;     // 1 × C/r × 3 × 3
  Tensor<T> map_bias;       // 1

  static SpatialAttentionUnit create(std::size_t channels, std::size_t reduction, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const;
};

template <typename T>
struct CrossAttentionHead {
  ChannelAttentionUnit<T> channel;
  SpatialAttentionUnit<T> spatial;
  Tensor<T> proj_weight;  // C × F
  Tensor<T> proj_bias;    // F
  // Test hook: skip both gates, i.e. force them to 1.
  bool bypass_gates = false;

  static CrossAttentionHead create(std::size_t channels, std::size_t reduction,
                                   std::size_t feature_dim, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const;
};

/// sigmoid(excite(relu(squeeze(gap(feat))))), shape N×C, entries in (0,1).
template <typename T>
Tensor<T> channel_attention(Tape<T>& tape, const Tensor<T>& feat, const ChannelAttentionUnit<T>& unit);

/// sigmoid(conv3x3(relu(conv1x1(feat)))), shape N×1×H×W, entries in (0,1).
template <typename T>
Tensor<T> spatial_attention(Tape<T>& tape, const Tensor<T>& feat, const SpatialAttentionUnit<T>& unit);

/// projection(gap(feat ⊙ spatial map ⊙ channel gates)), shape N×F.
template <typename T>
Tensor<T> cross_attention_head(Tape<T>& tape, const Tensor<T>& feat, const CrossAttentionHead<T>& head);

/// Element-wise mean of K ≥ 1 head outputs.
template <typename T>
Tensor<T> multi_head_combine(Tape<T>& tape, std::span<const Tensor<T>> head_outputs);

}  // namespace mtlfer
