#include "mtlfer/model.hpp"

#include <algorithm>

#include "mtlfer/ops.hpp"

namespace mtlfer {

std::string_view to_string(BackboneVariant v) {
  switch (v) {
    case BackboneVariant::Standard: return "standard";
    case BackboneVariant::Wide: return "wide";
    case BackboneVariant::Slim: return "slim";
  }
  return "standard";
}

BackboneVariant parse_variant(std::string_view name) {
  if (name == "standard") return BackboneVariant::Standard;
  if (name == "wide") return BackboneVariant::Wide;
  if (name == "slim") return BackboneVariant::Slim;
  throw ConfigError("unknown backbone variant '" + std::string(name) +
                    "' (expected standard, wide or slim)");
}

BackboneConfig BackboneConfig::of(BackboneVariant variant) {
  switch (variant) {
    case BackboneVariant::Standard: return {variant, {8, 12, 24, 48}};
    case BackboneVariant::Wide: return {variant, {12, 16, 32, 64}};
    case BackboneVariant::Slim: return {variant, {6, 8, 16, 32}};
  }
  throw ConfigError("unknown backbone variant");
}

void ModelConfig::validate() const {
  for (const auto* b : {&emotion, &appearance}) {
    for (std::size_t w : b->widths) {
      if (w == 0) throw ConfigError("model: backbone widths must be positive");
    }
  }
  if (feature_dim == 0) throw ConfigError("model: feature_dim must be positive");
  if (trunk_dim == 0) throw ConfigError("model: trunk_dim must be positive");
  if (heads == 0) throw ConfigError("model: heads must be at least 1");
  if (input_size == 0 || input_size % 8 != 0) {
    throw ConfigError("model: input_size must be a positive multiple of 8");
  }
  if (reduction == 0 || emotion.widths[3] % reduction != 0) {
    throw ConfigError("model: emotion backbone output width " + std::to_string(emotion.widths[3]) +
                      " is not divisible by reduction " + std::to_string(reduction));
  }
}

template <typename T>
Backbone<T> Backbone<T>::create(const BackboneConfig& cfg, Rng& rng) {
  Backbone b;
  std::size_t in = 3;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out = cfg.widths[s];
    b.kernels[s] = uniform_param<T>({out, in, 3, 3}, relu_bound(in * 9), rng);
    b.biases[s] = zero_param<T>({out});
    in = out;
  }
  return b;
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage = prefix + ".stage" + std::to_string(s);
    out.push_back({stage + ".weight", kernels[s]});
    out.push_back({stage + ".bias", biases[s]});
  }
}

template <typename T>
Tensor<T> backbone_forward(Tape<T>& tape, const Backbone<T>& net, const Tensor<T>& images) {
  auto x = ops::relu(tape, ops::conv2d(tape, images, net.kernels[0], net.biases[0], 2, 1));
  x = ops::max_pool2x2(tape, ops::relu(tape, ops::conv2d(tape, x, net.kernels[1], net.biases[1], 1, 1)));
  x = ops::max_pool2x2(tape, ops::relu(tape, ops::conv2d(tape, x, net.kernels[2], net.biases[2], 1, 1)));
  return ops::relu(tape, ops::conv2d(tape, x, net.kernels[3], net.biases[3], 1, 1));
}

namespace {

template <typename T>
Dense<T> make_dense(std::size_t in, std::size_t out, double bound, Rng& rng) {
  return Dense<T>{uniform_param<T>({in, out}, bound, rng), zero_param<T>({out})};
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> MTLNetwork<T>::named_parameters() const {
  std::vector<NamedTensor<T>> out;
  emotion_backbone.collect("emotion.backbone", out);
  for (std::size_t k = 0; k < attention.size(); ++k) {
    attention[k].collect("emotion.head" + std::to_string(k), out);
  }
  appearance_backbone.collect("appearance.backbone", out);
  appearance_proj.collect("appearance.proj", out);
  trunk1.collect("trunk.fc1", out);
  trunk2.collect("trunk.fc2", out);
  expr_head.collect("expr_head", out);
  land_head.collect("land_head", out);
  return out;
}

template <typename T>
std::vector<Tensor<T>> MTLNetwork<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::size_t MTLNetwork<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
void MTLNetwork<T>::zero_grad() {
  for (auto& p : named_parameters()) p.tensor.zero_grad();
}

template <typename T>
MTLNetwork<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Rng root(seed);
  MTLNetwork<T> m;
  m.config = cfg;
  {
    Rng rng = root.stream("emotion.backbone");
    m.emotion_backbone = Backbone<T>::create(cfg.emotion, rng);
  }
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    Rng rng = root.stream("emotion.head", k);
    m.attention.push_back(
        CrossAttentionHead<T>::create(cfg.emotion.widths[3], cfg.reduction, cfg.feature_dim, rng));
  }
  {
    Rng rng = root.stream("appearance");
    m.appearance_backbone = Backbone<T>::create(cfg.appearance, rng);
    m.appearance_proj = make_dense<T>(cfg.appearance.widths[3], cfg.feature_dim,
                                      linear_bound(cfg.appearance.widths[3]), rng);
  }
  {
    Rng rng = root.stream("trunk");
    m.trunk1 = make_dense<T>(2 * cfg.feature_dim, cfg.trunk_dim, relu_bound(2 * cfg.feature_dim), rng);
    m.trunk2 = make_dense<T>(cfg.trunk_dim, cfg.trunk_dim, relu_bound(cfg.trunk_dim), rng);
  }
  {
    Rng rng = root.stream("heads");
    m.expr_head = make_dense<T>(cfg.trunk_dim, kNumClasses, linear_bound(cfg.trunk_dim), rng);
    m.land_head = make_dense<T>(cfg.trunk_dim, kLandmarkDim, linear_bound(cfg.trunk_dim), rng);
  }
  if (m.expr_head.weight.dim(1) != kNumClasses || m.land_head.weight.dim(1) != kLandmarkDim) {
    throw ConfigError("model: output head widths must be 6 and 136");
  }
  return m;
}

template <typename T>
MTLOutputs<T> forward_full(Tape<T>& tape, const MTLNetwork<T>& model, const Tensor<T>& emotion_view,
                           const Tensor<T>& appearance_view) {
  if (emotion_view.rank() != 4 || appearance_view.rank() != 4) {
    throw DimensionError("forward_full: views must be NCHW");
  }
  if (emotion_view.shape() != appearance_view.shape()) {
    throw DimensionError("forward_full: emotion view " + shape_string(emotion_view.shape()) +
                         " and appearance view " + shape_string(appearance_view.shape()) + " differ");
  }
  if (emotion_view.dim(1) != 3) {
    throw DimensionError("forward_full: channel axis (1) is " + std::to_string(emotion_view.dim(1)) +
                         ", expected 3");
  }
  for (std::size_t axis : {2u, 3u}) {
    if (emotion_view.dim(axis) % 8 != 0) {
      throw DimensionError("forward_full: spatial axis (" + std::to_string(axis) + ") is " +
                           std::to_string(emotion_view.dim(axis)) + ", expected a multiple of 8");
    }
  }

  auto emo_map = backbone_forward(tape, model.emotion_backbone, emotion_view);
  std::vector<Tensor<T>> heads;
  heads.reserve(model.attention.size());
  for (const auto& head : model.attention) heads.push_back(cross_attention_head(tape, emo_map, head));
  auto emotion_feat = multi_head_combine<T>(tape, heads);

  auto app_map = backbone_forward(tape, model.appearance_backbone, appearance_view);
  auto appearance_feat = ops::linear(tape, ops::global_max_pool(tape, app_map),
                                     model.appearance_proj.weight, model.appearance_proj.bias);

  auto fused = ops::concat(tape, emotion_feat, appearance_feat);
  auto h = ops::relu(tape, ops::linear(tape, fused, model.trunk1.weight, model.trunk1.bias));
  h = ops::relu(tape, ops::linear(tape, h, model.trunk2.weight, model.trunk2.bias));
  return {ops::linear(tape, h, model.expr_head.weight, model.expr_head.bias),
          ops::linear(tape, h, model.land_head.weight, model.land_head.bias)};
}

std::size_t Prediction::predicted_class() const {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (expr_probs[c] > expr_probs[best]) best = c;
  }
  return best;
}

template <typename T>
std::vector<Prediction> predict_expression(const MTLNetwork<T>& model, const Tensor<T>& images) {
  Tape<T> tape = Tape<T>::inference();
  auto out = forward_full(tape, model, images, images);
  auto probs = ops::softmax(tape, out.expr_logits);
  const std::size_t N = images.dim(0);
  std::vector<Prediction> preds(N);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      preds[n].expr_probs[c] = static_cast<double>(probs.data()[n * kNumClasses + c]);
    }
    for (std::size_t j = 0; j < kLandmarkDim; ++j) {
      preds[n].landmarks[j] = static_cast<double>(out.land_pred.data()[n * kLandmarkDim + j]);
    }
  }
  return preds;
}

#define MTLFER_INSTANTIATE_MODEL(T)                                                               \
  template struct Backbone<T>;                                                                    \
  template struct MTLNetwork<T>;                                                                  \
  template Tensor<T> backbone_forward(Tape<T>&, const Backbone<T>&, const Tensor<T>&);            \
  template MTLNetwork<T> build_model<T>(const ModelConfig&, std::uint64_t);                       \
  template MTLOutputs<T> forward_full(Tape<T>&, const MTLNetwork<T>&, const Tensor<T>&,           \
                                      const Tensor<T>&);                                          \
  template std::vector<Prediction> predict_expression(const MTLNetwork<T>&, const Tensor<T>&);

MTLFER_INSTANTIATE_MODEL(float)
MTLFER_INSTANTIATE_MODEL(double)

}  // namespace mtlfer
