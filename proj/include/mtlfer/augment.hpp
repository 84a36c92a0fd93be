#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "mtlfer/dataset.hpp"
#include "mtlfer/image.hpp"
#include "mtlfer/model.hpp"
#include "mtlfer/rng.hpp"

namespace mtlfer {

struct AugmentConfig {
  double jitter_range = 0.2;  // brightness/contrast factors from [1-δ, 1+δ]
  double flip_prob = 0.5;
  double erase_prob = 0.5;
  std::array<double, 2> erase_area{0.02, 0.2};
  std::array<double, 2> erase_aspect{0.3, 3.3};
  double mix_alpha = 0.2;
  // Adds the unmixed real-sample loss next to the mixed one.
  bool mix_real_term = true;

  bool emotion_jitter = true;
  bool emotion_flip = true;
  bool emotion_erase = true;
  bool emotion_mix = true;
  bool appearance_jitter = true;

  /// Throws ConfigError on out-of-range probabilities, δ or area/aspect ranges.
  void validate() const;
  /// Every augmentation off.
  static AugmentConfig disabled();
};

/// out = clamp(contrast·(img − mean) + mean·brightness, 0, 1).
Image color_jitter(const Image& img, const AugmentConfig& cfg, Rng& rng);

Image horizontal_flip(const Image& img);

struct Rect {
  std::size_t y = 0, x = 0, h = 0, w = 0;
};

/// Rectangle with area fraction inside cfg.erase_area and aspect inside
/// cfg.erase_aspect, or nullopt after 10 failed attempts.
std::optional<Rect> sample_erase_rect(std::size_t height, std::size_t width, const AugmentConfig& cfg, Rng& rng);

/// Fills `rect` with uniform noise in [0,1].
Image erase_rect(const Image& img, const Rect& rect, Rng& rng);

/// With probability erase_prob, erases one sampled rectangle; otherwise identity.
Image random_erase(const Image& img, const AugmentConfig& cfg, Rng& rng);

/// Expression target distribution (N×6 row-major).
using TargetBatch = std::vector<std::array<double, kNumClasses>>;

std::array<double, kNumClasses> one_hot(std::size_t cls);

struct MixedBatch {
  std::vector<Image> images;  // λ·a + (1−λ)·b, clamped to [0,1]
  TargetBatch target_a;
  TargetBatch target_b;
  double lambda = 1.0;

  /// λ·target_a + (1−λ)·target_b.
  TargetBatch mixed_targets() const;
};

/// Mixes two equally shaped batches with λ ~ Beta(alpha, alpha).
MixedBatch mix_augment(const std::vector<Image>& batch_a, const std::vector<Image>& batch_b,
                       const TargetBatch& labels_a, const TargetBatch& labels_b, double alpha, Rng& rng);

/// Same with a fixed λ ∈ [0,1].
MixedBatch mix_with_lambda(const std::vector<Image>& batch_a, const std::vector<Image>& batch_b,
                           const TargetBatch& labels_a, const TargetBatch& labels_b, double lambda);

struct BranchViews {
  Image emotion;
  Image appearance;
};

/// Emotion view: jitter, flip, erase (each per its flag). Appearance view:
/// jitter only, so pixel positions and landmark targets are untouched.
/// The two views draw from independent sub-streams of `rng`.
BranchViews apply_branch_pipelines(const Sample& sample, const AugmentConfig& cfg, const Rng& rng);

}  // namespace mtlfer
