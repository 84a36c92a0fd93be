#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mtlfer/attention.hpp"
#include "mtlfer/tensor.hpp"

namespace mtlfer {

inline constexpr std::size_t kNumClasses = 6;
inline constexpr std::size_t kNumLandmarks = 68;
inline constexpr std::size_t kLandmarkDim = kNumLandmarks * 2;

/// Desk-scale backbone families. They differ in width only and stand in for
/// the three appearance backbones an ensemble member may be configured with.
enum class BackboneVariant { Standard, Wide, Slim };

std::string_view to_string(BackboneVariant v);
/// Throws ConfigError on an unknown name.
BackboneVariant parse_variant(std::string_view name);

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::Standard;
  std::array<std::size_t, 4> widths{};

  static BackboneConfig of(BackboneVariant variant);
  bool operator==(const BackboneConfig&) const = default;
};

struct ModelConfig {
  BackboneConfig emotion = BackboneConfig::of(BackboneVariant::Standard);
  BackboneConfig appearance = BackboneConfig::of(BackboneVariant::Standard);
  std::size_t input_size = 64;
  std::size_t feature_dim = 128;
  std::size_t trunk_dim = 128;
  std::size_t heads = 4;
  std::size_t reduction = 4;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Four conv stages: a stride-2 stem, two conv+max-pool stages and a final
/// conv, all 3×3 with bias and ReLU. Output is N×widths[3]×(S/8)×(S/8).
template <typename T>
struct Backbone {
  std::array<Tensor<T>, 4> kernels;
  std::array<Tensor<T>, 4> biases;

  static Backbone create(const BackboneConfig& cfg, Rng& rng);
  std::size_t out_channels() const { return kernels[3].dim(0); }
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const;
};

template <typename T>
Tensor<T> backbone_forward(Tape<T>& tape, const Backbone<T>& net, const Tensor<T>& images);

template <typename T>
struct Dense {
  Tensor<T> weight;  // in × out
  Tensor<T> bias;    // out
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

/// Dual-branch multi-task network.
///
/// Emotion branch: backbone -> K attention heads -> mean (N×F).
/// Appearance branch: backbone -> global max pool -> projection (N×F).
/// The 2F concatenation feeds a shared two-layer ReLU trunk (2F->H->H) read by
/// an expression head (H->6) and a landmark head (H->136).
template <typename T>
struct MTLNetwork {
  ModelConfig config;
  Backbone<T> emotion_backbone;
  std::vector<CrossAttentionHead<T>> attention;
  Backbone<T> appearance_backbone;
  Dense<T> appearance_proj;
  Dense<T> trunk1;
  Dense<T> trunk2;
  Dense<T> expr_head;
  Dense<T> land_head;

  /// Parameters in declaration order; names are stable checkpoint keys.
  std::vector<NamedTensor<T>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();
};

/// Deterministic construction from (config, seed). Throws ConfigError.
template <typename T>
MTLNetwork<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
struct MTLOutputs {
  Tensor<T> expr_logits;  // N×6
  Tensor<T> land_pred;    // N×136
};

template <typename T>
MTLOutputs<T> forward_full(Tape<T>& tape, const MTLNetwork<T>& model, const Tensor<T>& emotion_view,
                           const Tensor<T>& appearance_view);

struct Prediction {
  std::array<double, kNumClasses> expr_probs{};
  std::array<double, kLandmarkDim> landmarks{};
  std::size_t predicted_class() const;
  bool operator==(const Prediction&) const = default;
};

/// Inference: the clean image feeds both branches; only the expression
/// probabilities are used for classification.
template <typename T>
std::vector<Prediction> predict_expression(const MTLNetwork<T>& model, const Tensor<T>& images);

/// Copies values from `src` into `dst` (same config), e.g. float -> double.
template <typename Dst, typename Src>
void copy_parameters(MTLNetwork<Dst>& dst, const MTLNetwork<Src>& src) {
  auto d = dst.named_parameters();
  auto s = src.named_parameters();
  if (d.size() != s.size()) throw DimensionError("copy_parameters: parameter lists differ");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].tensor.shape() != s[i].tensor.shape()) {
      throw DimensionError("copy_parameters: shape mismatch at " + d[i].name);
    }
    auto dv = d[i].tensor.values();
    auto sv = s[i].tensor.values();
    for (std::size_t j = 0; j < dv.size(); ++j) dv[j] = static_cast<Dst>(sv[j]);
  }
}

}  // namespace mtlfer
