#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "mtlfer/attention.hpp"
#include "mtlfer/checkpoint.hpp"
#include "mtlfer/errors.hpp"
#include "mtlfer/gradcheck.hpp"
#include "mtlfer/losses.hpp"
#include "mtlfer/model.hpp"
#include "test_util.hpp"

using namespace mtlfer;
using namespace mtlfer::testing;

namespace {

// Small enough for a full finite-difference sweep in well under a second.
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.emotion = {BackboneVariant::Standard, {4, 4, 6, 8}};
  cfg.appearance = {BackboneVariant::Slim, {3, 4, 4, 6}};
  cfg.input_size = 16;
  cfg.feature_dim = 5;
  cfg.trunk_dim = 7;
  cfg.heads = 2;
  cfg.reduction = 4;
  return cfg;
}

Tensor<double> one_hot_rows(const std::vector<std::size_t>& labels) {
  Tensor<double> t(Shape{labels.size(), kNumClasses});
  for (std::size_t n = 0; n < labels.size(); ++n) t.values()[n * kNumClasses + labels[n]] = 1.0;
  return t;
}

// Zero-initialized biases put dead regions exactly on a ReLU kink, where a
// central difference sees half a slope. Check at a generic point instead.
template <typename T>
void randomize_biases(MTLNetwork<T>& model, Rng& rng) {
  for (auto& p : model.named_parameters()) {
    if (p.name.ends_with("bias")) {
      for (auto& v : p.tensor.values()) v = static_cast<T>(rng.uniform(-0.2, 0.2));
    }
  }
}

}  // namespace

TEST_SUITE("attention") {
  TEST_CASE("channel gates are in (0,1) with one gate per channel") {
    Rng rng(5);
    auto unit = ChannelAttentionUnit<double>::create(8, 4, rng);
    auto feat = random_tensor(Shape{3, 8, 4, 4}, rng);
    Tape<double> tape = Tape<double>::inference();
    auto g = channel_attention(tape, feat, unit);
    REQUIRE(g.shape() == Shape{3, 8});
    for (double v : g.values()) CHECK((v > 0.0 && v < 1.0));
  }

  TEST_CASE("spatial map is N×1×H×W in (0,1)") {
    Rng rng(6);
    auto unit = SpatialAttentionUnit<double>::create(8, 2, rng);
    auto feat = random_tensor(Shape{2, 8, 3, 5}, rng);
    Tape<double> tape = Tape<double>::inference();
    auto m = spatial_attention(tape, feat, unit);
    REQUIRE(m.shape() == Shape{2, 1, 3, 5});
    for (double v : m.values()) CHECK((v > 0.0 && v < 1.0));
  }

  TEST_CASE("reduction ratio must divide the channel count") {
    Rng rng(1);
    CHECK_THROWS_AS(ChannelAttentionUnit<double>::create(6, 4, rng), ConfigError);
    CHECK_THROWS_AS(SpatialAttentionUnit<double>::create(6, 4, rng), ConfigError);
    CHECK_THROWS_AS(CrossAttentionHead<double>::create(8, 4, 0, rng), ConfigError);
  }

  TEST_CASE("head output is N×F, and bypassed gates reduce to projection of the pooled map") {
    Rng rng(7);
    auto head = CrossAttentionHead<double>::create(8, 4, 5, rng);
    auto feat = random_tensor(Shape{2, 8, 4, 4}, rng, 0, 1);
    Tape<double> tape = Tape<double>::inference();
    auto y = cross_attention_head(tape, feat, head);
    CHECK(y.shape() == Shape{2, 5});
    head.bypass_gates = true;
    auto direct = cross_attention_head(tape, feat, head);
    auto expect = ops::linear(tape, ops::global_avg_pool(tape, feat), head.proj_weight, head.proj_bias);
    for (std::size_t i = 0; i < direct.numel(); ++i) CHECK(direct.values()[i] == expect.values()[i]);
    // Gating with values in (0,1) on a non-negative map shrinks the pooled features.
    auto gated = ops::global_avg_pool(tape, ops::spatial_gate(tape, feat, spatial_attention(tape, feat, head.spatial)));
    auto plain = ops::global_avg_pool(tape, feat);
    for (std::size_t i = 0; i < gated.numel(); ++i) CHECK(gated.values()[i] <= plain.values()[i]);
  }

  TEST_CASE("multi-head combine is the mean and rejects an empty list") {
    Tape<double> tape = Tape<double>::inference();
    std::vector<Tensor<double>> outs{Tensor<double>(Shape{1, 2}, std::vector<double>{1, 2}),
                                     Tensor<double>(Shape{1, 2}, std::vector<double>{3, -2})};
    auto m = multi_head_combine<double>(tape, outs);
    CHECK(m.values()[0] == 2);
    CHECK(m.values()[1] == 0);
    CHECK_THROWS_AS(multi_head_combine<double>(tape, std::span<const Tensor<double>>{}), UsageError);
  }

  TEST_CASE("gradients of each attention unit") {
    for (int s = 0; s < kGradSeeds; ++s) {
      Rng rng(Rng::derive(77, "attention", static_cast<std::uint64_t>(s)));
      auto head = CrossAttentionHead<double>::create(8, 4, 3, rng);
      auto feat = random_tensor(Shape{2, 8, 4, 4}, rng);
      auto r_ch = random_tensor(Shape{2, 8}, rng, -1, 1, false);
      auto r_sp = random_tensor(Shape{2, 1, 4, 4}, rng, -1, 1, false);
      auto r_head = random_tensor(Shape{2, 3}, rng, -1, 1, false);

      std::vector<Tensor<double>> ch{feat, head.channel.squeeze, head.channel.excite};
      CHECK(finite_diff_check([&](Tape<double>& t) { return probe(t, channel_attention(t, feat, head.channel), r_ch); },
                              ch, 1e-6) < kGradTol);

      std::vector<Tensor<double>> sp{feat, head.spatial.reduce_kernel, head.spatial.reduce_bias,
                                     head.spatial.map_kernel, head.spatial.map_bias};
      CHECK(finite_diff_check([&](Tape<double>& t) { return probe(t, spatial_attention(t, feat, head.spatial), r_sp); },
                              sp, 1e-6) < kGradTol);

      std::vector<Tensor<double>> all{feat, head.proj_weight, head.proj_bias, head.channel.squeeze,
                                      head.spatial.map_kernel};
      CHECK(finite_diff_check([&](Tape<double>& t) { return probe(t, cross_attention_head(t, feat, head), r_head); },
                              all, 1e-6) < kGradTol);
    }
  }
}

TEST_SUITE("model") {
  TEST_CASE("variants, validation and parsing") {
    CHECK(BackboneConfig::of(BackboneVariant::Wide).widths[3] > BackboneConfig::of(BackboneVariant::Standard).widths[3]);
    CHECK(BackboneConfig::of(BackboneVariant::Slim).widths[3] < BackboneConfig::of(BackboneVariant::Standard).widths[3]);
    CHECK(parse_variant("wide") == BackboneVariant::Wide);
    CHECK_THROWS_AS(parse_variant("resnet"), ConfigError);
    ModelConfig cfg;
    cfg.input_size = 60;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ModelConfig{};
    cfg.heads = 0;
    CHECK_THROWS_AS(build_model<float>(cfg, 1), ConfigError);
  }

  TEST_CASE("forward shapes and parameter naming") {
    auto model = build_model<float>(ModelConfig{}, 11);
    Rng rng(2);
    auto x = random_tensor<float>(Shape{3, 3, 64, 64}, rng, 0, 1, false);
    Tape<float> tape = Tape<float>::inference();
    auto out = forward_full(tape, model, x, x);
    CHECK(out.expr_logits.shape() == Shape{3, 6});
    CHECK(out.land_pred.shape() == Shape{3, 136});
    auto named = model.named_parameters();
    std::set<std::string> names;
    for (const auto& p : named) names.insert(p.name);
    CHECK(names.size() == named.size());
    CHECK(names.count("emotion.head3.channel.squeeze") == 1);
    CHECK(names.count("trunk.fc1.weight") == 1);
    CHECK(names.count("land_head.bias") == 1);
    CHECK(names.count("emotion.head4.channel.squeeze") == 0);
  }

  TEST_CASE("forward rejects malformed views") {
    auto model = build_model<float>(ModelConfig{}, 11);
    Tape<float> tape = Tape<float>::inference();
    Tensor<float> ok(Shape{1, 3, 64, 64});
    CHECK_THROWS_AS(forward_full(tape, model, Tensor<float>(Shape{1, 1, 64, 64}), Tensor<float>(Shape{1, 1, 64, 64})),
                    DimensionError);
    CHECK_THROWS_AS(forward_full(tape, model, ok, Tensor<float>(Shape{2, 3, 64, 64})), DimensionError);
    CHECK_THROWS_AS(forward_full(tape, model, Tensor<float>(Shape{1, 3, 60, 60}), Tensor<float>(Shape{1, 3, 60, 60})),
                    DimensionError);
  }

  TEST_CASE("construction is a pure function of (config, seed)") {
    auto a = build_model<float>(ModelConfig{}, 5);
    auto b = build_model<float>(ModelConfig{}, 5);
    auto c = build_model<float>(ModelConfig{}, 6);
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool same = true, differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      for (std::size_t j = 0; j < pa[i].numel(); ++j) {
        same = same && pa[i].values()[j] == pb[i].values()[j];
        differs = differs || pa[i].values()[j] != pc[i].values()[j];
      }
    }
    CHECK(same);
    CHECK(differs);
  }

  TEST_CASE("float and double builds agree up to rounding") {
    auto f = build_model<float>(tiny_config(), 9);
    auto d = build_model<double>(tiny_config(), 9);
    auto pf = f.parameters();
    auto pd = d.parameters();
    double worst = 0;
    for (std::size_t i = 0; i < pf.size(); ++i)
      for (std::size_t j = 0; j < pf[i].numel(); ++j)
        worst = std::max(worst, std::abs(double(pf[i].values()[j]) - pd[i].values()[j]));
    CHECK(worst < 1e-7);
  }

  TEST_CASE("joint loss gradient over every parameter") {
    double worst = 0;
    for (int s = 0; s < kGradSeeds; ++s) {
      Rng rng(Rng::derive(31, "joint", static_cast<std::uint64_t>(s)));
      auto model = build_model<double>(tiny_config(), rng.next_u64());
      randomize_biases(model, rng);
      auto emo = random_tensor(Shape{2, 3, 16, 16}, rng, 0, 1, false);
      auto app = random_tensor(Shape{2, 3, 16, 16}, rng, 0, 1, false);
      auto land = random_tensor(Shape{2, kLandmarkDim}, rng, 0.05, 0.95, false);
      auto targets = one_hot_rows({rng.below(6), rng.below(6)});
      const auto weights = ClassWeights::normalized({1, 2, 1, 0.5, 1, 3});
      auto params = model.parameters();
      worst = std::max(worst, finite_diff_check(
                                  [&](Tape<double>& t) {
                                    auto out = forward_full(t, model, emo, app);
                                    auto e = weighted_cross_entropy(t, out.expr_logits, targets, weights);
                                    auto l = mse_landmark_loss(t, out.land_pred, land);
                                    return joint_loss(t, e, l, 1.0);
                                  },
                                  params, 1e-6));
    }
    CHECK(worst < kGradTol);
  }

  TEST_CASE("predictions are distributions") {
    auto model = build_model<float>(ModelConfig{}, 3);
    Rng rng(4);
    auto x = random_tensor<float>(Shape{4, 3, 64, 64}, rng, 0, 1, false);
    for (const auto& p : predict_expression(model, x)) {
      double s = 0;
      for (double v : p.expr_probs) {
        CHECK(v >= 0);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip preserves config and every bit") {
    ModelConfig cfg;
    cfg.appearance = BackboneConfig::of(BackboneVariant::Wide);
    auto model = build_model<float>(cfg, 21);
    std::stringstream ss;
    write_checkpoint(ss, model);
    auto loaded = read_checkpoint(ss);
    CHECK(loaded.config == cfg);
    auto a = model.named_parameters(), b = loaded.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      CHECK(a[i].tensor.shape() == b[i].tensor.shape());
      CHECK(std::equal(a[i].tensor.values().begin(), a[i].tensor.values().end(), b[i].tensor.values().begin()));
    }
  }

  TEST_CASE("corrupt inputs are rejected") {
    auto model = build_model<float>(tiny_config(), 1);
    std::stringstream ss;
    write_checkpoint(ss, model);
    const std::string good = ss.str();

    auto load = [](std::string bytes) {
      std::istringstream in(bytes);
      return read_checkpoint(in);
    };
    CHECK_NOTHROW(load(good));
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(load(bad_magic), LoadError);
    std::string bad_version = good;
    bad_version[4] = 9;
    CHECK_THROWS_AS(load(bad_version), LoadError);
    CHECK_THROWS_AS(load(good.substr(0, good.size() - 3)), LoadError);
    CHECK_THROWS_AS(load(good + "x"), LoadError);
    CHECK_THROWS_AS(load(""), LoadError);
    std::string bad_manifest = good;
    const auto pos = bad_manifest.find("param ");
    REQUIRE(pos != std::string::npos);
    bad_manifest[pos] = 'q';
    CHECK_THROWS_AS(load(bad_manifest), LoadError);
  }

  TEST_CASE("missing file is a load error") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.ckpt"), LoadError);
  }
}
