#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "mtlfer/checkpoint.hpp"
#include "mtlfer/errors.hpp"
#include "mtlfer/train.hpp"
#include "test_util.hpp"

using namespace mtlfer;
using namespace mtlfer::testing;

namespace {

ClassProbs random_simplex(Rng& rng) {
  ClassProbs p{};
  double total = 0;
  for (double& v : p) total += (v = -std::log(1.0 - rng.uniform()));
  for (double& v : p) v /= total;
  return p;
}

const std::vector<Sample>& small_data() {
  static const std::vector<Sample> data = [] {
    const auto dir = scratch_dir("train_data");
    return load_dataset(load_manifest(generate_synthetic_dataset(72, 21, dir).root));
  }();
  return data;
}

std::vector<Sample> first(std::size_t n) { return {small_data().begin(), small_data().begin() + n}; }
std::vector<Sample> last(std::size_t n) { return {small_data().end() - n, small_data().end()}; }

TrainConfig small_train(std::uint64_t seed = 5) {
  TrainConfig cfg;
  cfg.model.emotion = {BackboneVariant::Standard, {4, 4, 6, 8}};
  cfg.model.appearance = {BackboneVariant::Slim, {3, 4, 4, 6}};
  cfg.model.feature_dim = 8;
  cfg.model.trunk_dim = 8;
  cfg.model.heads = 2;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = seed;
  return cfg;
}

std::string bytes(const MTLNetwork<float>& m) {
  std::ostringstream os;
  write_checkpoint(os, m);
  return os.str();
}

}  // namespace

TEST_SUITE("bagging") {
  TEST_CASE("sizes: 300000 -> 60000 and 600 -> 120") {
    const auto big = bag_subsample(300000, 0.2, 1);
    CHECK(big.size() == 60000);
    CHECK(std::adjacent_find(big.begin(), big.end()) == big.end());
    CHECK(std::is_sorted(big.begin(), big.end()));
    CHECK(big.back() < 300000);
    const auto small = bag_subsample(600, 0.2, 1);
    CHECK(small.size() == 120);
    CHECK(std::set<std::size_t>(small.begin(), small.end()).size() == 120);
  }

  TEST_CASE("fuzzed sizes are round(fraction * n) with unique in-range indices") {
    Rng rng(3);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = 3 + rng.below(4000);
      const double f = trial % 2 ? 0.2 : rng.uniform(0.35, 1.0);
      const auto bag = bag_subsample(n, f, rng.below(1u << 30));
      REQUIRE(bag.size() == static_cast<std::size_t>(std::llround(f * n)));
      REQUIRE(std::adjacent_find(bag.begin(), bag.end()) == bag.end());
      REQUIRE(std::is_sorted(bag.begin(), bag.end()));
      REQUIRE(bag.back() < n);
    }
  }

  TEST_CASE("same seed same bag, different seed different bag") {
    CHECK(bag_subsample(1000, 0.2, 8) == bag_subsample(1000, 0.2, 8));
    CHECK(bag_subsample(1000, 0.2, 8) != bag_subsample(1000, 0.2, 9));
  }

  TEST_CASE("every index is equally likely") {
    std::vector<int> hits(50, 0);
    for (std::uint64_t s = 0; s < 4000; ++s)
      for (std::size_t i : bag_subsample(50, 0.2, s)) hits[i] += 1;
    // expected 800 per index, binomial sd ~25
    for (int h : hits) CHECK(std::abs(h - 800) < 150);
  }

  TEST_CASE("empty bags and bad fractions are usage errors") {
    CHECK_THROWS_AS(bag_subsample(2, 0.2, 1), UsageError);
    CHECK_THROWS_AS(bag_subsample(0, 0.5, 1), UsageError);
    CHECK_THROWS_AS(bag_subsample(10, 0.0, 1), UsageError);
    CHECK_THROWS_AS(bag_subsample(10, 1.5, 1), UsageError);
    CHECK(bag_subsample(10, 1.0, 1).size() == 10);
  }
}

TEST_SUITE("soft vote") {
  TEST_CASE("two-way tie goes to the lower class") {
    const ClassProbs a{1, 0, 0, 0, 0, 0}, b{0, 1, 0, 0, 0, 0};
    const ClassProbs both[] = {a, b};
    const Vote v = soft_vote(both);
    CHECK(v.probs == ClassProbs{0.5, 0.5, 0, 0, 0, 0});
    CHECK(v.cls == 0);
    const ClassProbs flipped[] = {b, a};
    CHECK(soft_vote(flipped).cls == 0);
    CHECK(argmax({0, 0, 0.25, 0.25, 0.25, 0.25}) == 2);
    CHECK(argmax({1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6}) == 0);
  }

  TEST_CASE("identical members return that member") {
    Rng rng(4);
    const ClassProbs p = random_simplex(rng);
    const ClassProbs three[] = {p, p, p};
    const Vote v = soft_vote(three);
    for (std::size_t c = 0; c < kNumClasses; ++c) CHECK(v.probs[c] == doctest::Approx(p[c]).epsilon(1e-15));
    CHECK(v.cls == argmax(p));
    const ClassProbs one[] = {p};
    CHECK(soft_vote(one).probs == p);
  }

  TEST_CASE("brute-force mean, simplex preservation, order invariance") {
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t K = 1 + rng.below(7);
      std::vector<ClassProbs> members(K);
      for (auto& m : members) m = random_simplex(rng);
      const Vote v = soft_vote(members);
      double total = 0;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        double mean = 0;
        for (std::size_t k = 0; k < K; ++k) mean += members[k][c];
        mean /= static_cast<double>(K);
        REQUIRE(std::abs(v.probs[c] - mean) < 1e-9);
        REQUIRE(v.probs[c] >= 0.0);
        total += v.probs[c];
      }
      REQUIRE(std::abs(total - 1.0) <= 1e-6);
      auto shuffled = members;
      rng.shuffle(shuffled);
      const Vote w = soft_vote(shuffled);
      REQUIRE(w.probs == v.probs);
      REQUIRE(w.cls == v.cls);
    }
  }

  TEST_CASE("malformed input") {
    CHECK_THROWS_AS(soft_vote(std::span<const ClassProbs>{}), UsageError);
    const ClassProbs bad[] = {{0.5, 0.4, 0, 0, 0, 0}};
    CHECK_THROWS_AS(soft_vote(bad), UsageError);
    const ClassProbs neg[] = {{1.2, -0.2, 0, 0, 0, 0}};
    CHECK_THROWS_AS(soft_vote(neg), UsageError);
  }
}

TEST_SUITE("training") {
  TEST_CASE("log has one finite record per epoch and the member is an inference artifact") {
    auto cfg = small_train();
    cfg.epochs = 3;
    std::vector<std::size_t> seen;
    const auto r = train_single(first(48), last(24), cfg, [&](const EpochRecord& e) { seen.push_back(e.epoch); });
    REQUIRE(r.log.epochs.size() == 3);
    CHECK(seen == std::vector<std::size_t>{1, 2, 3});
    for (const auto& e : r.log.epochs) {
      CHECK(std::isfinite(e.expr_loss));
      CHECK(std::isfinite(e.land_loss));
      CHECK(std::isfinite(e.joint_loss));
      CHECK(e.joint_loss == doctest::Approx(e.expr_loss + cfg.lambda * e.land_loss).epsilon(1e-5));
    }
    const std::string csv = r.log.to_csv();
    CHECK(csv.rfind("epoch,expr_loss,land_loss,joint_loss,val_macro_f1\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(r.member.final_metrics.macro_f1 == r.log.epochs.back().val_macro_f1);
    for (const auto& p : r.member.model.parameters()) CHECK_FALSE(p.has_grad());
  }

  TEST_CASE("same config twice gives identical weights") {
    const auto a = train_single(first(48), last(24), small_train(7));
    const auto b = train_single(first(48), last(24), small_train(7));
    CHECK(bytes(a.member.model) == bytes(b.member.model));
    CHECK(a.log.to_csv() == b.log.to_csv());
    const auto c = train_single(first(48), last(24), small_train(8));
    CHECK(bytes(a.member.model) != bytes(c.member.model));
  }

  TEST_CASE("lambda zero equals classification-only training weight for weight") {
    auto zero = small_train(9);
    zero.lambda = 0.0;
    auto cls_only = small_train(9);
    cls_only.landmark_task = false;
    const auto a = train_single(first(48), {}, zero);
    const auto b = train_single(first(48), {}, cls_only);
    const auto pa = a.member.model.parameters();
    const auto pb = b.member.model.parameters();
    REQUIRE(pa.size() == pb.size());
    double worst = 0;
    for (std::size_t i = 0; i < pa.size(); ++i)
      for (std::size_t j = 0; j < pa[i].numel(); ++j)
        worst = std::max(worst, std::abs(double(pa[i].values()[j]) - double(pb[i].values()[j])));
    CHECK(worst <= 1e-6);
  }

  TEST_CASE("non-finite loss aborts with the last finite epoch") {
    auto cfg = small_train();
    cfg.optimizer.learning_rate = 1e30;
    cfg.epochs = 5;
    try {
      train_single(first(48), {}, cfg);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(e.last_finite_epoch < 5);
      CHECK(std::string(e.what()).find("last finite epoch") != std::string::npos);
    }
  }

  TEST_CASE("invalid configs and inputs") {
    auto cfg = small_train();
    cfg.lambda = -1;
    CHECK_THROWS_AS(train_single(first(12), {}, cfg), ConfigError);
    cfg = small_train();
    cfg.epochs = 0;
    CHECK_THROWS_AS(train_single(first(12), {}, cfg), ConfigError);
    CHECK_THROWS_AS(train_single({}, {}, small_train()), UsageError);
    // class weights need every class present
    std::vector<Sample> no_fear;
    for (const auto& s : first(36))
      if (s.expression != 2) no_fear.push_back(s);
    CHECK_THROWS_AS(train_single(no_fear, {}, small_train()), ConfigError);
    cfg = small_train();
    cfg.class_weighting = false;
    CHECK_NOTHROW(train_single(no_fear, {}, cfg));
  }
}

TEST_SUITE("ensemble") {
  EnsembleConfig three_members() {
    EnsembleConfig e;
    e.subsample_fraction = 0.5;
    e.bag_seed = 17;
    for (std::uint64_t i = 0; i < 3; ++i) {
      auto cfg = small_train(Rng::derive(17, "train", i));
      cfg.epochs = 1;
      if (i == 1) cfg.model.appearance = {BackboneVariant::Wide, {4, 6, 6, 8}};
      e.members.push_back(cfg);
    }
    return e;
  }

  TEST_CASE("members carry distinct bags and configs; parallel equals sequential") {
    const auto train = first(48);
    const auto val = last(24);
    auto ecfg = three_members();
    const auto seq = train_ensemble(train, val, ecfg);
    ecfg.parallel = true;
    const auto par = train_ensemble(train, val, ecfg);
    REQUIRE(seq.members.size() == 3);
    REQUIRE(par.members.size() == 3);
    CHECK(seq.excluded.empty());
    std::set<std::vector<std::size_t>> bags;
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(seq.members[i].bag.size() == 24);
      bags.insert(seq.members[i].bag);
      CHECK(seq.members[i].bag_seed == Rng::derive(17, "bag", i));
      CHECK(seq.members[i].config.seed == Rng::derive(17, "train", i));
      CHECK(bytes(seq.members[i].model) == bytes(par.members[i].model));
      CHECK(seq.members[i].bag == par.members[i].bag);
      CHECK(seq.logs[i].to_csv() == par.logs[i].to_csv());
    }
    CHECK(bags.size() == 3);
    CHECK(seq.members[0].config.model != seq.members[1].config.model);
    const Evaluation a = evaluate(seq.members, val);
    const Evaluation b = evaluate(par.members, val);
    CHECK(a.report == b.report);
    CHECK(predictions_csv(a.predictions) == predictions_csv(b.predictions));
  }

  TEST_CASE("one member: ensemble prediction is the member's prediction") {
    const auto val = last(24);
    auto ecfg = three_members();
    ecfg.members.resize(1);
    const auto ens = train_ensemble(first(48), val, ecfg);
    REQUIRE(ens.members.size() == 1);
    const Evaluation ev = evaluate(ens.members, val);
    CHECK(ev.report == ens.members[0].final_metrics);
    std::vector<const Image*> imgs;
    for (const auto& s : val) imgs.push_back(&s.image);
    const auto direct = predict_expression(ens.members[0].model, image_batch<float>(imgs));
    for (std::size_t i = 0; i < val.size(); ++i) {
      REQUIRE(ev.predictions[i].vote.probs == direct[i].expr_probs);
      REQUIRE(ev.predictions[i].vote.cls == argmax(direct[i].expr_probs));
    }
  }

  TEST_CASE("K identical members evaluate exactly like one") {
    const auto val = last(24);
    const auto r = train_single(first(48), val, small_train(3));
    const std::vector<TrainedMember> one{r.member};
    const std::vector<TrainedMember> four(4, r.member);
    const Evaluation a = evaluate(one, val);
    const Evaluation b = evaluate(four, val);
    CHECK(a.report == b.report);
    CHECK(a.confusion == b.confusion);
    CHECK(predictions_csv(a.predictions) == predictions_csv(b.predictions));
    double mean = 0;
    for (double f : a.report.per_class_f1) mean += f;
    CHECK(std::abs(a.report.macro_f1 - mean / 6) < 1e-9);
  }

  TEST_CASE("prediction CSV rows are distributions") {
    const auto val = last(24);
    const auto r = train_single(first(48), val, small_train(4));
    const std::vector<TrainedMember> one{r.member};
    std::istringstream in(predictions_csv(evaluate(one, val).predictions));
    std::string line;
    std::getline(in, line);
    CHECK(line == "path,pred_class,p0,p1,p2,p3,p4,p5");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      std::istringstream row(line);
      std::string cell;
      std::getline(row, cell, ',');
      std::getline(row, cell, ',');
      const int cls = std::stoi(cell);
      double total = 0, best = -1;
      int best_c = -1;
      for (int c = 0; c < 6; ++c) {
        std::getline(row, cell, ',');
        const double p = std::stod(cell);
        total += p;
        if (p > best) best = p, best_c = c;
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
      CHECK(cls == best_c);
    }
    CHECK(rows == 24);
  }

  TEST_CASE("ensemble config validation") {
    EnsembleConfig e;
    CHECK_THROWS_AS(e.validate(), ConfigError);
    e.members.push_back(small_train());
    e.subsample_fraction = 0.0;
    CHECK_THROWS_AS(e.validate(), ConfigError);
    e.subsample_fraction = 1.0;
    CHECK_NOTHROW(e.validate());
  }
}
