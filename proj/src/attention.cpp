#include "mtlfer/attention.hpp"

#include "mtlfer/ops.hpp"

namespace mtlfer {
namespace {

std::size_t reduced_channels(std::size_t channels, std::size_t reduction) {
  if (reduction == 0 || channels == 0 || channels % reduction != 0) {
    throw ConfigError("attention: channel count " + std::to_string(channels) +
                      " is not divisible by reduction ratio " + std::to_string(reduction));
  }
  return channels / reduction;
}

}  // namespace

template <typename T>
ChannelAttentionUnit<T> ChannelAttentionUnit<T>::create(std::size_t channels, std::size_t reduction,
                                                        Rng& rng) {
  const std::size_t hidden = reduced_channels(channels, reduction);
  ChannelAttentionUnit u;
  u.reduction = reduction;
  u.squeeze = uniform_param<T>({channels, hidden}, relu_bound(channels), rng);
  u.excite = uniform_param<T>({hidden, channels}, linear_bound(hidden), rng);
  return u;
}

template <typename T>
void ChannelAttentionUnit<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
  out.push_back({prefix + ".squeeze", squeeze});
  out.push_back({prefix + ".excite", excite});
}

template <typename T>
SpatialAttentionUnit<T> SpatialAttentionUnit<T>::create(std::size_t channels, std::size_t reduction,
                                                        Rng& rng) {
  const std::size_t hidden = reduced_channels(channels, reduction);
  SpatialAttentionUnit u;
  u.reduce_kernel = uniform_param<T>({hidden, channels, 1, 1}, relu_bound(channels), rng);
  u.reduce_bias = zero_param<T>({hidden});
  u.map_kernel = uniform_param<T>({1, hidden, 3, 3}, linear_bound(hidden * 9), rng);
  u.map_bias = zero_param<T>({1});
  return u;
}

template <typename T>
void SpatialAttentionUnit<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
  out.push_back({prefix + ".reduce.weight", reduce_kernel});
  out.push_back({prefix + ".reduce.bias", reduce_bias});
  out.push_back({prefix + ".map.weight", map_kernel});
  out.push_back({prefix + ".map.bias", map_bias});
}

template <typename T>
CrossAttentionHead<T> CrossAttentionHead<T>::create(std::size_t channels, std::size_t reduction,
                                                    std::size_t feature_dim, Rng& rng) {
  if (feature_dim == 0) throw ConfigError("attention: feature dimension must be positive");
  CrossAttentionHead h;
  h.channel = ChannelAttentionUnit<T>::create(channels, reduction, rng);
  h.spatial = SpatialAttentionUnit<T>::create(channels, reduction, rng);
  h.proj_weight = uniform_param<T>({channels, feature_dim}, linear_bound(channels), rng);
  h.proj_bias = zero_param<T>({feature_dim});
  return h;
}

template <typename T>
void CrossAttentionHead<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
  channel.collect(prefix + ".channel", out);
  spatial.collect(prefix + ".spatial", out);
  out.push_back({prefix + ".proj.weight", proj_weight});
  out.push_back({prefix + ".proj.bias", proj_bias});
}

template <typename T>
Tensor<T> channel_attention(Tape<T>& tape, const Tensor<T>& feat, const ChannelAttentionUnit<T>& unit) {
  if (feat.rank() != 4 || feat.dim(1) != unit.channels()) {
    throw DimensionError("channel_attention: expected N×" + std::to_string(unit.channels()) +
                         "×H×W features, got " + shape_string(feat.shape()));
  }
  const Tensor<T> no_bias_hidden(Shape{unit.squeeze.dim(1)});
  const Tensor<T> no_bias_out(Shape{unit.excite.dim(1)});
  auto pooled = ops::global_avg_pool(tape, feat);
  auto hidden = ops::relu(tape, ops::linear(tape, pooled, unit.squeeze, no_bias_hidden));
  return ops::sigmoid(tape, ops::linear(tape, hidden, unit.excite, no_bias_out));
}

template <typename T>
Tensor<T> spatial_attention(Tape<T>& tape, const Tensor<T>& feat, const SpatialAttentionUnit<T>& unit) {
  auto reduced = ops::relu(tape, ops::conv2d(tape, feat, unit.reduce_kernel, unit.reduce_bias, 1, 0));
  return ops::sigmoid(tape, ops::conv2d(tape, reduced, unit.map_kernel, unit.map_bias, 1, 1));
}

template <typename T>
Tensor<T> cross_attention_head(Tape<T>& tape, const Tensor<T>& feat, const CrossAttentionHead<T>& head) {
  Tensor<T> attended = feat;
  if (!head.bypass_gates) {
    auto map = spatial_attention(tape, feat, head.spatial);
    auto gates = channel_attention(tape, feat, head.channel);
    attended = ops::channel_gate(tape, ops::spatial_gate(tape, feat, map), gates);
  }
  return ops::linear(tape, ops::global_avg_pool(tape, attended), head.proj_weight, head.proj_bias);
}

template <typename T>
Tensor<T> multi_head_combine(Tape<T>& tape, std::span<const Tensor<T>> head_outputs) {
  if (head_outputs.empty()) throw UsageError("multi_head_combine: no head outputs");
  return ops::mean_of(tape, head_outputs);
}

#define MTLFER_INSTANTIATE_ATTENTION(T)                                                              \
  template struct ChannelAttentionUnit<T>;                                                           \
  template struct SpatialAttentionUnit<T>;                                                           \
  template struct CrossAttentionHead<T>;                                                             \
  template Tensor<T> channel_attention(Tape<T>&, const Tensor<T>&, const ChannelAttentionUnit<T>&);  \
  template Tensor<T> spatial_attention(Tape<T>&, const Tensor<T>&, const SpatialAttentionUnit<T>&);  \
  template Tensor<T> cross_attention_head(Tape<T>&, const Tensor<T>&, const CrossAttentionHead<T>&); \
  template Tensor<T> multi_head_combine(Tape<T>&, std::span<const Tensor<T>>);

MTLFER_INSTANTIATE_ATTENTION(float)
MTLFER_INSTANTIATE_ATTENTION(double)

}  // namespace mtlfer
