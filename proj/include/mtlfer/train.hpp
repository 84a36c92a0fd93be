#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtlfer/adam.hpp"
#include "mtlfer/augment.hpp"
#include "mtlfer/dataset.hpp"
#include "mtlfer/losses.hpp"
#include "mtlfer/metrics.hpp"
#include "mtlfer/model.hpp"

namespace mtlfer {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lambda = 1.0;
  // False trains a classification-only model: no landmark loss term at all.
  bool landmark_task = true;
  // Inverse-frequency class weights from the training set; uniform otherwise.
  bool class_weighting = true;
  AdamConfig optimizer;
  AugmentConfig augment;
  ModelConfig model;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double expr_loss = 0.0;
  double land_loss = 0.0;
  double joint_loss = 0.0;
  double val_macro_f1 = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;

  /// `epoch,expr_loss,land_loss,joint_loss,val_macro_f1` plus one row per epoch.
  std::string to_csv() const;
};

struct TrainedMember {
  MTLNetwork<float> model;
  TrainConfig config;
  std::filesystem::path checkpoint;  // empty until saved
  std::vector<std::size_t> bag;      // training-set indices the member saw
  std::uint64_t bag_seed = 0;
  MetricsReport final_metrics;       // on the validation set
};

/// Non-finite loss during training.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t last_finite_epoch)
      : std::runtime_error(what), last_finite_epoch(last_finite_epoch) {}
  std::size_t last_finite_epoch;
};

struct TrainResult {
  TrainedMember member;
  TrainingLog log;
};

/// Joint multi-task training. Per batch: branch augmentation, optional
/// mix-augment on the emotion view and expression targets, forward through
/// both branches, weighted CE + λ·MSE, backward, Adam. Deterministic in cfg.
using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train_single(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// round(fraction · n) unique indices drawn without replacement, ascending.
std::vector<std::size_t> bag_subsample(std::size_t n, double fraction, std::uint64_t seed);

struct EnsembleConfig {
  double subsample_fraction = 0.2;
  std::vector<TrainConfig> members;  // one config per member
  std::uint64_t bag_seed = 0;
  bool parallel = false;

  void validate() const;
};

struct EnsembleResult {
  std::vector<TrainedMember> members;  // survivors, in config order
  std::vector<TrainingLog> logs;
  std::vector<std::size_t> excluded;   // config indices of diverged members
  std::vector<std::string> warnings;
};

/// Independent train_single runs, each on its own bag. Sequential and
/// parallel execution produce identical members.
EnsembleResult train_ensemble(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                              const EnsembleConfig& ecfg);

using ClassProbs = std::array<double, kNumClasses>;

struct Vote {
  ClassProbs probs{};
  std::size_t cls = 0;
};

/// Mean of the member probability vectors (reduced in a canonical order, so
/// the result is exactly invariant to member order); argmax with lowest-index
/// tie-break.
Vote soft_vote(std::span<const ClassProbs> member_probs);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(const ClassProbs& p);

struct SamplePrediction {
  std::string path;
  std::size_t truth = 0;
  Vote vote;
};

struct Evaluation {
  MetricsReport report;
  ConfusionMatrix confusion;
  std::vector<SamplePrediction> predictions;
};

/// Soft-voted predictions of the given models over `dataset`.
Evaluation evaluate_models(std::span<const MTLNetwork<float>* const> models, const std::vector<Sample>& dataset);

Evaluation evaluate(std::span<const TrainedMember> members, const std::vector<Sample>& dataset);

/// Mean squared landmark error of one model over `dataset`.
double landmark_mse(const MTLNetwork<float>& model, const std::vector<Sample>& dataset);

/// `path,pred_class,p0,...,p5` rows.
std::string predictions_csv(const std::vector<SamplePrediction>& predictions);

/// Packs images into an N×3×H×W tensor.
template <typename T>
Tensor<T> image_batch(std::span<const Image* const> images);

}  // namespace mtlfer
