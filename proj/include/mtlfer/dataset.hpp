#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtlfer/image.hpp"
#include "mtlfer/model.hpp"
#include "mtlfer/rng.hpp"

namespace mtlfer {

/// 68 (x, y) points in normalized image coordinates, iBUG ordering,
/// interleaved as x0, y0, x1, y1, ...
using LandmarkSet = std::array<double, kLandmarkDim>;

inline constexpr std::size_t kImageSize = 64;

struct Sample {
  std::string path;  // relative to the dataset root
  Image image;       // 3×64×64 in [0,1]
  std::size_t expression = 0;
  LandmarkSet landmarks{};
};

struct ManifestRecord {
  std::string path;
  std::size_t expression = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
  std::map<std::string, LandmarkSet> landmarks;

  std::array<std::size_t, kNumClasses> class_counts() const;
};

/// Face geometry driving both the rendered strokes and the analytic
/// landmarks. Expression parameters are unitless and clamped to
/// ranges that keep every landmark inside [0.05, 0.95]².
struct SyntheticFaceParams {
  double center_x = 0.5, center_y = 0.5;
  double radius_x = 0.30, radius_y = 0.34;
  double eye_openness = 1.0;  // [0.3, 1.8]
  double brow_raise = 0.0;    // [-1, 1.5]
  double brow_slant = 0.0;    // [-1, 1]; positive pulls the inner ends down
  double mouth_curve = 0.0;   // [-1.2, 1.2]; positive lifts the corners
  double mouth_open = 0.0;    // [0, 1]
  double mouth_width = 1.0;   // [0.7, 1.3]
  double mouth_asym = 0.0;    // [-1, 1]; lifts one corner
  double skin = 0.65;
  double background = 0.2;
  double noise = 0.01;

  void clamp_to_ranges();
};

/// Class-conditional parameters for one sample, jittered from the class
/// prototype by Gaussian noise drawn from `rng`.
SyntheticFaceParams sample_face_params(std::size_t expression, Rng& rng);

LandmarkSet landmarks_from_params(const SyntheticFaceParams& p);

/// Anti-aliased stroke rendering on a 3×64×64 canvas.
Image render_face(const SyntheticFaceParams& p, Rng& rng);

/// Writes n samples (n/6 per class, class = index mod 6) as PPM files plus
/// labels.csv and landmarks.csv under out_dir. A pure function of (n, seed).
DatasetManifest generate_synthetic_dataset(std::size_t n, std::uint64_t seed,
                                           const std::filesystem::path& out_dir);

/// Parses and validates labels.csv / landmarks.csv and decodes every image.
/// Throws LoadError naming the offending file and row.
DatasetManifest load_manifest(const std::filesystem::path& root);

/// Loaded samples in manifest order.
std::vector<Sample> load_dataset(const DatasetManifest& manifest);

struct Split {
  std::vector<std::size_t> train;  // ascending sample indices
  std::vector<std::size_t> val;
};

/// Stratified split. Each class sends floor or ceil of val_fraction · count
/// to val, and val holds round(val_fraction · N) in total. UsageError if any
/// class would end up with an empty side.
Split split_train_val(std::span<const std::size_t> labels, double val_fraction, std::uint64_t seed);
Split split_train_val(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed);

template <typename Container>
std::vector<Sample> subset(const std::vector<Sample>& all, const Container& indices) {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(all.at(i));
  return out;
}

}  // namespace mtlfer
