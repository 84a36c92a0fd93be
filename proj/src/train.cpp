#include "mtlfer/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <thread>

#include "mtlfer/errors.hpp"
#include "mtlfer/ops.hpp"

namespace mtlfer {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("beta1 must lie in [0,1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("beta2 must lie in [0,1)");
  if (!(optimizer.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  augment.validate();
  model.validate();
}

std::string TrainingLog::to_csv() const {
  std::string out = "epoch,expr_loss,land_loss,joint_loss,val_macro_f1\n";
  char buf[160];
  for (const auto& r : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.4f\n", r.epoch, r.expr_loss, r.land_loss,
                  r.joint_loss, r.val_macro_f1);
    out += buf;
  }
  return out;
}

template <typename T>
Tensor<T> image_batch(std::span<const Image* const> images) {
  if (images.empty()) throw UsageError("image_batch: empty batch");
  const Image& first = *images[0];
  Tensor<T> t(Shape{images.size(), first.channels, first.height, first.width});
  const std::size_t per = first.size();
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->size() != per || images[n]->height != first.height) {
      throw DimensionError("image_batch: image " + std::to_string(n) + " has a different shape");
    }
    std::copy(images[n]->pixels.begin(), images[n]->pixels.end(), t.data() + n * per);
  }
  return t;
}

template Tensor<float> image_batch<float>(std::span<const Image* const>);
template Tensor<double> image_batch<double>(std::span<const Image* const>);

namespace {

Tensor<float> target_tensor(const TargetBatch& targets) {
  Tensor<float> t(Shape{targets.size(), kNumClasses});
  for (std::size_t n = 0; n < targets.size(); ++n) {
    for (std::size_t c = 0; c < kNumClasses; ++c) t.data()[n * kNumClasses + c] = static_cast<float>(targets[n][c]);
  }
  return t;
}

Tensor<float> landmark_tensor(std::span<const Sample* const> samples) {
  Tensor<float> t(Shape{samples.size(), kLandmarkDim});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    for (std::size_t j = 0; j < kLandmarkDim; ++j) {
      t.data()[n * kLandmarkDim + j] = static_cast<float>(samples[n]->landmarks[j]);
    }
  }
  return t;
}

constexpr std::size_t kEvalBatch = 64;

struct BatchLosses {
  double expr = 0.0;
  double land = 0.0;
  double joint = 0.0;
};

}  // namespace

TrainResult train_single(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw UsageError("train_single: empty training set");

  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& s : train_set) counts.at(s.expression) += 1;
  const ClassWeights weights = cfg.class_weighting ? class_weights_from_frequencies(counts) : ClassWeights::uniform();

  const Rng root(cfg.seed);
  TrainResult result;
  result.member.config = cfg;
  result.member.model = build_model<float>(cfg.model, Rng::derive(cfg.seed, "init"));
  auto& model = result.member.model;
  std::vector<Tensor<float>> params = model.parameters();
  AdamState<float> opt = AdamState<float>::for_params(params, cfg.optimizer);

  const std::size_t N = train_set.size();
  std::vector<std::size_t> order(N);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng epoch_rng = root.stream("epoch", epoch);
    epoch_rng.shuffle(order);
    const Rng augment_root = root.stream("augment", epoch);

    BatchLosses totals;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < N; start += cfg.batch_size, ++batch_index) {
      const std::size_t B = std::min(cfg.batch_size, N - start);
      std::vector<const Sample*> batch(B);
      std::vector<Image> emotion_views(B), appearance_views(B);
      TargetBatch targets(B);
      for (std::size_t i = 0; i < B; ++i) {
        const std::size_t idx = order[start + i];
        batch[i] = &train_set[idx];
        BranchViews v = apply_branch_pipelines(train_set[idx], cfg.augment, augment_root.stream("sample", idx));
        emotion_views[i] = std::move(v.emotion);
        appearance_views[i] = std::move(v.appearance);
        targets[i] = one_hot(train_set[idx].expression);
      }
      std::vector<const Image*> app_ptrs(B), emo_ptrs(B);
      for (std::size_t i = 0; i < B; ++i) {
        app_ptrs[i] = &appearance_views[i];
        emo_ptrs[i] = &emotion_views[i];
      }
      const Tensor<float> appearance = image_batch<float>(app_ptrs);
      const Tensor<float> emotion = image_batch<float>(emo_ptrs);
      const Tensor<float> land_target = landmark_tensor(batch);

      Tape<float> tape;
      Tensor<float> expr_loss;
      Tensor<float> land_loss;
      if (cfg.augment.emotion_mix && B > 1) {
        Rng mix_rng = root.stream("mix", epoch * 1000003ULL + batch_index);
        std::vector<std::size_t> perm(B);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        mix_rng.shuffle(perm);
        std::vector<Image> partner(B);
        TargetBatch partner_targets(B);
        for (std::size_t i = 0; i < B; ++i) {
          partner[i] = emotion_views[perm[i]];
          partner_targets[i] = targets[perm[i]];
        }
        const MixedBatch mixed =
            mix_augment(emotion_views, partner, targets, partner_targets, cfg.augment.mix_alpha, mix_rng);
        std::vector<const Image*> mixed_ptrs(B);
        for (std::size_t i = 0; i < B; ++i) mixed_ptrs[i] = &mixed.images[i];
        const auto mixed_out = forward_full(tape, model, image_batch<float>(mixed_ptrs), appearance);
        expr_loss = weighted_cross_entropy(tape, mixed_out.expr_logits, target_tensor(mixed.mixed_targets()), weights);
        if (cfg.augment.mix_real_term) {
          // The partner batch is a permutation of the real batch, so
          // ½(CE(x_a, y_a) + CE(x_b, y_b)) is the batch-mean CE on real samples.
          const auto real_out = forward_full(tape, model, emotion, appearance);
          auto real_ce = weighted_cross_entropy(tape, real_out.expr_logits, target_tensor(targets), weights);
          expr_loss = ops::add(tape, expr_loss, real_ce);
          land_loss = mse_landmark_loss(tape, real_out.land_pred, land_target);
        } else {
          land_loss = mse_landmark_loss(tape, mixed_out.land_pred, land_target);
        }
      } else {
        const auto out = forward_full(tape, model, emotion, appearance);
        expr_loss = weighted_cross_entropy(tape, out.expr_logits, target_tensor(targets), weights);
        land_loss = mse_landmark_loss(tape, out.land_pred, land_target);
      }
      Tensor<float> joint = cfg.landmark_task ? joint_loss(tape, expr_loss, land_loss, cfg.lambda) : expr_loss;

      if (!std::isfinite(joint.item())) {
        throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) +
                                   "; last finite epoch " + std::to_string(epoch - 1),
                               epoch - 1);
      }
      model.zero_grad();
      tape.backward(joint);
      adam_step<float>(params, opt);

      const double w = static_cast<double>(B);
      totals.expr += w * expr_loss.item();
      totals.land += w * land_loss.item();
      totals.joint += w * joint.item();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.expr_loss = totals.expr / static_cast<double>(N);
    rec.land_loss = totals.land / static_cast<double>(N);
    rec.joint_loss = totals.joint / static_cast<double>(N);
    if (!val_set.empty()) {
      const MTLNetwork<float>* one[] = {&model};
      const Evaluation ev = evaluate_models(one, val_set);
      rec.val_macro_f1 = ev.report.macro_f1;
      result.member.final_metrics = ev.report;
    }
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  // Drop gradient buffers; the trained member is an inference artifact.
  for (auto& p : params) p.drop_grad();
  return result;
}

std::vector<std::size_t> bag_subsample(std::size_t n, double fraction, std::uint64_t seed) {
  if (n < 1) throw UsageError("bag_subsample: n must be at least 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("bag_subsample: fraction must lie in (0,1]");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (k == 0) {
    throw UsageError("bag_subsample: round(" + std::to_string(fraction) + " * " + std::to_string(n) +
                     ") is zero");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void EnsembleConfig::validate() const {
  if (members.empty()) throw ConfigError("ensemble needs at least one member config");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("subsample_fraction must lie in (0,1]");
  }
  for (const auto& m : members) m.validate();
}

EnsembleResult train_ensemble(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                              const EnsembleConfig& ecfg) {
  ecfg.validate();
  const std::size_t K = ecfg.members.size();
  struct Slot {
    std::optional<TrainResult> result;
    std::string error;
  };
  std::vector<Slot> slots(K);

  auto run_member = [&](std::size_t i) {
    const std::uint64_t bag_seed = Rng::derive(ecfg.bag_seed, "bag", i);
    try {
      auto bag = bag_subsample(train_set.size(), ecfg.subsample_fraction, bag_seed);
      TrainResult r = train_single(subset(train_set, bag), val_set, ecfg.members[i]);
      r.member.bag = std::move(bag);
      r.member.bag_seed = bag_seed;
      slots[i].result = std::move(r);
    } catch (const TrainingDiverged& e) {
      slots[i].error = e.what();
    }
  };

  if (ecfg.parallel && K > 1) {
    std::vector<std::jthread> workers;
    workers.reserve(K);
    for (std::size_t i = 0; i < K; ++i) workers.emplace_back(run_member, i);
  } else {
    for (std::size_t i = 0; i < K; ++i) run_member(i);
  }

  EnsembleResult out;
  for (std::size_t i = 0; i < K; ++i) {
    if (slots[i].result) {
      out.members.push_back(std::move(slots[i].result->member));
      out.logs.push_back(std::move(slots[i].result->log));
    } else {
      out.excluded.push_back(i);
      out.warnings.push_back("member " + std::to_string(i) + " excluded: " + slots[i].error);
    }
  }
  if (out.members.empty()) throw TrainingDiverged("every ensemble member diverged", 0);
  return out;
}

std::size_t argmax(const ClassProbs& p) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (p[c] > p[best]) best = c;
  }
  return best;
}

Vote soft_vote(std::span<const ClassProbs> member_probs) {
  if (member_probs.empty()) throw UsageError("soft_vote: no member probabilities");
  for (std::size_t k = 0; k < member_probs.size(); ++k) {
    double total = 0.0;
    for (double v : member_probs[k]) {
      if (!(v >= -1e-5)) throw UsageError("soft_vote: member " + std::to_string(k) + " has a negative probability");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-5) {
      throw UsageError("soft_vote: member " + std::to_string(k) + " probabilities sum to " + std::to_string(total));
    }
  }
  std::vector<ClassProbs> sorted(member_probs.begin(), member_probs.end());
  std::sort(sorted.begin(), sorted.end());
  Vote v;
  for (const auto& p : sorted) {
    for (std::size_t c = 0; c < kNumClasses; ++c) v.probs[c] += p[c];
  }
  const double K = static_cast<double>(sorted.size());
  for (double& x : v.probs) x /= K;
  v.cls = argmax(v.probs);
  return v;
}

Evaluation evaluate_models(std::span<const MTLNetwork<float>* const> models, const std::vector<Sample>& dataset) {
  if (models.empty()) throw UsageError("evaluate: at least one model is required");
  Evaluation ev;
  std::vector<std::size_t> truth, pred;
  for (std::size_t start = 0; start < dataset.size(); start += kEvalBatch) {
    const std::size_t B = std::min(kEvalBatch, dataset.size() - start);
    std::vector<const Image*> imgs(B);
    for (std::size_t i = 0; i < B; ++i) imgs[i] = &dataset[start + i].image;
    const Tensor<float> batch = image_batch<float>(imgs);
    std::vector<std::vector<Prediction>> per_model;
    per_model.reserve(models.size());
    for (const auto* m : models) per_model.push_back(predict_expression(*m, batch));
    for (std::size_t i = 0; i < B; ++i) {
      std::vector<ClassProbs> probs;
      probs.reserve(models.size());
      for (const auto& preds : per_model) probs.push_back(preds[i].expr_probs);
      SamplePrediction sp;
      sp.path = dataset[start + i].path;
      sp.truth = dataset[start + i].expression;
      sp.vote = soft_vote(probs);
      truth.push_back(sp.truth);
      pred.push_back(sp.vote.cls);
      ev.predictions.push_back(std::move(sp));
    }
  }
  ev.confusion = confusion_matrix(truth, pred);
  ev.report = macro_f1(ev.confusion);
  return ev;
}

Evaluation evaluate(std::span<const TrainedMember> members, const std::vector<Sample>& dataset) {
  std::vector<const MTLNetwork<float>*> models;
  for (const auto& m : members) models.push_back(&m.model);
  return evaluate_models(models, dataset);
}

double landmark_mse(const MTLNetwork<float>& model, const std::vector<Sample>& dataset) {
  if (dataset.empty()) throw UsageError("landmark_mse: empty dataset");
  double total = 0.0;
  for (std::size_t start = 0; start < dataset.size(); start += kEvalBatch) {
    const std::size_t B = std::min(kEvalBatch, dataset.size() - start);
    std::vector<const Image*> imgs(B);
    for (std::size_t i = 0; i < B; ++i) imgs[i] = &dataset[start + i].image;
    const auto preds = predict_expression(model, image_batch<float>(imgs));
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < kLandmarkDim; ++j) {
        const double d = preds[i].landmarks[j] - dataset[start + i].landmarks[j];
        total += d * d;
      }
    }
  }
  return total / static_cast<double>(dataset.size() * kLandmarkDim);
}

std::string predictions_csv(const std::vector<SamplePrediction>& predictions) {
  std::string out = "path,pred_class,p0,p1,p2,p3,p4,p5\n";
  char buf[64];
  for (const auto& p : predictions) {
    out += p.path;
    out += ',' + std::to_string(p.vote.cls);
    for (double v : p.vote.probs) {
      std::snprintf(buf, sizeof buf, ",%.9f", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace mtlfer
