#include "mtlfer/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtlfer/errors.hpp"

namespace mtlfer {

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment: ") + name + " must lie in [0,1]");
  };
  prob(flip_prob, "flip_prob");
  prob(erase_prob, "erase_prob");
  if (!(jitter_range >= 0.0 && jitter_range < 1.0)) {
    throw ConfigError("augment: jitter_range must lie in [0,1)");
  }
  if (!(erase_area[0] > 0.0 && erase_area[0] <= erase_area[1] && erase_area[1] < 1.0)) {
    throw ConfigError("augment: erase_area must be an ordered range inside (0,1)");
  }
  if (!(erase_aspect[0] > 0.0 && erase_aspect[0] <= erase_aspect[1])) {
    throw ConfigError("augment: erase_aspect must be an ordered positive range");
  }
  if (!(mix_alpha > 0.0) || !std::isfinite(mix_alpha)) throw ConfigError("augment: mix_alpha must be positive");
}

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig cfg;
  cfg.emotion_jitter = cfg.emotion_flip = cfg.emotion_erase = cfg.emotion_mix = false;
  cfg.appearance_jitter = false;
  return cfg;
}

Image color_jitter(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  const double d = cfg.jitter_range;
  const double brightness = rng.uniform(1.0 - d, 1.0 + d);
  const double contrast = rng.uniform(1.0 - d, 1.0 + d);
  if (d == 0.0) return img;
  double mean = 0.0;
  for (float v : img.pixels) mean += v;
  mean /= static_cast<double>(std::max<std::size_t>(img.size(), 1));
  Image out = img;
  for (float& v : out.pixels) {
    const double y = contrast * (static_cast<double>(v) - mean) + mean * brightness;
    v = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return out;
}

Image horizontal_flip(const Image& img) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, img.width - 1 - x) = img.at(c, y, x);
    }
  }
  return out;
}

std::optional<Rect> sample_erase_rect(std::size_t height, std::size_t width, const AugmentConfig& cfg,
                                      Rng& rng) {
  const double total = static_cast<double>(height * width);
  const double log_lo = std::log(cfg.erase_aspect[0]);
  const double log_hi = std::log(cfg.erase_aspect[1]);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = rng.uniform(cfg.erase_area[0], cfg.erase_area[1]) * total;
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
    if (h == 0 || w == 0 || h >= height || w >= width) continue;
    // Rounding can push the realized rectangle outside the configured bounds.
    const double frac = static_cast<double>(h * w) / total;
    const double ratio = static_cast<double>(h) / static_cast<double>(w);
    if (frac < cfg.erase_area[0] || frac > cfg.erase_area[1]) continue;
    if (ratio < cfg.erase_aspect[0] || ratio > cfg.erase_aspect[1]) continue;
    Rect r;
    r.h = h;
    r.w = w;
    r.y = static_cast<std::size_t>(rng.below(height - h + 1));
    r.x = static_cast<std::size_t>(rng.below(width - w + 1));
    return r;
  }
  return std::nullopt;
}

Image erase_rect(const Image& img, const Rect& rect, Rng& rng) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = rect.y; y < rect.y + rect.h; ++y) {
      for (std::size_t x = rect.x; x < rect.x + rect.w; ++x) out.at(c, y, x) = static_cast<float>(rng.uniform());
    }
  }
  return out;
}

Image random_erase(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  if (!rng.bernoulli(cfg.erase_prob)) return img;
  const auto rect = sample_erase_rect(img.height, img.width, cfg, rng);
  if (!rect) return img;
  return erase_rect(img, *rect, rng);
}

std::array<double, kNumClasses> one_hot(std::size_t cls) {
  if (cls >= kNumClasses) throw UsageError("one_hot: class id out of range");
  std::array<double, kNumClasses> t{};
  t[cls] = 1.0;
  return t;
}

TargetBatch MixedBatch::mixed_targets() const {
  TargetBatch out(target_a.size());
  for (std::size_t n = 0; n < out.size(); ++n) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      out[n][c] = lambda * target_a[n][c] + (1.0 - lambda) * target_b[n][c];
    }
  }
  return out;
}

MixedBatch mix_with_lambda(const std::vector<Image>& batch_a, const std::vector<Image>& batch_b,
                           const TargetBatch& labels_a, const TargetBatch& labels_b, double lambda) {
  if (batch_a.size() != batch_b.size() || labels_a.size() != batch_a.size() ||
      labels_b.size() != batch_b.size()) {
    throw DimensionError("mix_augment: batch sizes differ");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("mix_augment: lambda must lie in [0,1]");
  MixedBatch mb;
  mb.lambda = lambda;
  mb.target_a = labels_a;
  mb.target_b = labels_b;
  mb.images.reserve(batch_a.size());
  const auto l = static_cast<float>(lambda);
  for (std::size_t n = 0; n < batch_a.size(); ++n) {
    const Image& a = batch_a[n];
    const Image& b = batch_b[n];
    if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
      throw DimensionError("mix_augment: image " + std::to_string(n) + " shapes differ");
    }
    Image m = a;
    for (std::size_t i = 0; i < m.size(); ++i) {
      m.pixels[i] = std::clamp(l * a.pixels[i] + (1.0f - l) * b.pixels[i], 0.0f, 1.0f);
    }
    mb.images.push_back(std::move(m));
  }
  return mb;
}

MixedBatch mix_augment(const std::vector<Image>& batch_a, const std::vector<Image>& batch_b,
                       const TargetBatch& labels_a, const TargetBatch& labels_b, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw UsageError("mix_augment: alpha must be positive");
  return mix_with_lambda(batch_a, batch_b, labels_a, labels_b, rng.beta(alpha));
}

BranchViews apply_branch_pipelines(const Sample& sample, const AugmentConfig& cfg, const Rng& rng) {
  Rng emotion_rng = rng.stream("emotion");
  Rng appearance_rng = rng.stream("appearance");
  BranchViews views{sample.image, sample.image};
  if (cfg.emotion_jitter) views.emotion = color_jitter(views.emotion, cfg, emotion_rng);
  if (cfg.emotion_flip && emotion_rng.bernoulli(cfg.flip_prob)) views.emotion = horizontal_flip(views.emotion);
  if (cfg.emotion_erase) views.emotion = random_erase(views.emotion, cfg, emotion_rng);
  if (cfg.appearance_jitter) views.appearance = color_jitter(views.appearance, cfg, appearance_rng);
  return views;
}

}  // namespace mtlfer
