#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "segx/attacks.hpp"
#include "segx/ops.hpp"

using namespace segx;
using segx::testing::random_tensor;

namespace {

constexpr double kTol = 1e-9;

// A classifier that is affine in its input over [0,1]: centre taps only, a
// large entry bias keeps every relu in its linear region. For label 0 the
// loss gradient w.r.t. channel c has the sign of (W1 - W0) * w_c = -w_c.
Network logistic_net() {
  NetworkSpec s;
  s.name = "logistic";
  s.input_h = s.input_w = 8;
  s.backbone.stage_widths = {1};
  s.head.kind = HeadKind::Cls;
  s.head.num_classes = 2;
  Network net = build(s, 0);
  for (auto& [name, t] : net.params()) t.fill(0.0);
  const double w[3] = {1.0, -2.0, 0.5};
  for (std::size_t c = 0; c < 3; ++c) net.param("backbone.s0.in.w").at(0, c, 1, 1) = w[c];
  net.param("backbone.s0.in.b")[0] = 10.0;
  net.param("backbone.s0.b0.c1.w").at(0, 0, 1, 1) = 1.0;
  net.param("backbone.s0.b0.c2.w").at(0, 0, 1, 1) = 1.0;
  net.param("head.linear.w")[0] = 1.0;
  net.param("head.linear.w")[1] = -1.0;
  return net;
}

NetworkSpec seg_spec(BackboneKind kind, HeadKind head) {
  NetworkSpec s;
  s.name = "seg";
  s.input_h = s.input_w = 16;
  s.backbone.kind = kind;
  s.backbone.stage_widths = {4, 8, 8};
  s.head.kind = head;
  s.head.width = 8;
  s.head.fcn_fuse_stages = 2;
  return s;
}

Tensor image(std::size_t h, std::size_t w, std::uint64_t seed) { return random_tensor({1, 3, h, w}, seed, 0.0, 1.0); }

LabelMask random_mask(std::size_t h, std::size_t w, std::uint64_t seed) {
  LabelMask m(1, h, w);
  Rng rng = make_stream(seed, 1);
  for (auto& v : m.data()) v = static_cast<std::uint8_t>(uniform_index(rng, 4));
  return m;
}

void expect_in_ball(const Tensor& adv, const Tensor& clean, double eps) {
  ASSERT_EQ(adv.shape(), clean.shape());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    ASSERT_LE(std::abs(adv[i] - clean[i]), eps + kTol);
    ASSERT_GE(adv[i], 0.0);
    ASSERT_LE(adv[i], 1.0);
  }
}

}  // namespace

TEST(ProjectEps, Examples) {
  const Tensor clean({3}, std::vector<double>{0.5, 0.5, 0.01});
  const Tensor inside({3}, std::vector<double>{0.51, 0.49, 0.02});
  EXPECT_EQ(project_eps(inside, clean, 0.03), inside);
  const Tensor out = project_eps(Tensor({3}, std::vector<double>{0.9, 0.1, -0.5}), clean, 0.03);
  EXPECT_DOUBLE_EQ(out[0], 0.53);
  EXPECT_DOUBLE_EQ(out[1], 0.47);
  EXPECT_EQ(out[2], 0.0);
  EXPECT_THROW(project_eps(Tensor({2}), clean, 0.03), Error);
}

TEST(Fgsm, ZeroEpsilonIsClean) {
  const Network net = logistic_net();
  const Tensor x = image(8, 8, 1);
  const int label = 0;
  EXPECT_EQ(fgsm_cls(net, x, std::span<const int>(&label, 1), 0.0).adversarial, x);
}

TEST(Fgsm, LogisticModelMatchesHandSign) {
  const Network net = logistic_net();
  const Tensor x = random_tensor({1, 3, 8, 8}, 2, 0.1, 0.9);
  const int label = 0;
  const Tensor adv = fgsm_cls(net, x, std::span<const int>(&label, 1), 0.03).adversarial;
  const double expected_sign[3] = {-1.0, 1.0, -1.0};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_DOUBLE_EQ(adv.at(0, c, i, j), x.at(0, c, i, j) + 0.03 * expected_sign[c]);
      }
    }
  }
}

TEST(Fgsm, StepLandsOnBallSurface) {
  const Network net = build(seg_spec(BackboneKind::Plain, HeadKind::Cls), 3);
  const Tensor x = random_tensor({1, 3, 16, 16}, 4, 0.1, 0.9);
  const int label = 1;
  const Tensor adv = fgsm_cls(net, x, std::span<const int>(&label, 1), 0.03).adversarial;
  std::size_t moved = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(adv[i] - x[i]);
    if (d > 0) {
      EXPECT_NEAR(d, 0.03, 1e-15);
      ++moved;
    }
  }
  EXPECT_GT(moved, x.size() / 2);
}

TEST(BimCls, OneStepEqualsFgsm) {
  const Network net = build(seg_spec(BackboneKind::Residual, HeadKind::Cls), 5);
  const Tensor x = image(16, 16, 6);
  const int label = 2;
  AttackConfig cfg;
  cfg.kind = AttackKind::BIM_CLS;
  cfg.iters = 1;
  cfg.alpha = cfg.epsilon = 0.03;
  EXPECT_EQ(bim_cls(net, x, std::span<const int>(&label, 1), cfg).adversarial,
            fgsm_cls(net, x, std::span<const int>(&label, 1), 0.03).adversarial);
}

TEST(BimCls, LinearModelLossIsMonotone) {
  const Network net = logistic_net();
  const Tensor x = image(8, 8, 7);
  const int label = 0;
  AttackConfig cfg;
  cfg.kind = AttackKind::BIM_CLS;
  cfg.iters = 8;
  cfg.alpha = 0.005;
  const AttackResult r = bim_cls(net, x, std::span<const int>(&label, 1), cfg);
  ASSERT_EQ(r.losses.size(), 8u);
  for (std::size_t t = 1; t < r.losses.size(); ++t) EXPECT_GE(r.losses[t], r.losses[t - 1]);
  EXPECT_GT(r.losses.back(), r.losses.front());
}

// With one stage, one class-score conv and a 1x1 image, the segmentation
// network computes exactly what the classifier computes.
TEST(BimSeg, SinglePixelEqualsBimCls) {
  NetworkSpec cs;
  cs.input_h = cs.input_w = 1;
  cs.backbone.stage_widths = {5};
  cs.head.kind = HeadKind::Cls;
  cs.head.num_classes = 3;
  NetworkSpec ss = cs;
  ss.head.kind = HeadKind::FCN;
  ss.head.fcn_fuse_stages = 1;
  ss.head.width = 0;
  const Network cls = build(cs, 8);
  Network seg = build(ss, 8);
  for (const auto& [name, t] : cls.params()) {
    if (name.starts_with("backbone.")) seg.param(name) = t;
  }
  seg.param("head.fcn.score0.w") = cls.param("head.linear.w").reshaped({3, 5, 1, 1});
  seg.param("head.fcn.score0.b") = cls.param("head.linear.b");

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = image(1, 1, 10 + seed);
    const int label = static_cast<int>(seed % 3);
    AttackConfig cfg;
    cfg.iters = 6;
    cfg.kind = AttackKind::BIM_CLS;
    const AttackResult a = bim_cls(cls, x, std::span<const int>(&label, 1), cfg);
    cfg.kind = AttackKind::BIM_SEG;
    const AttackResult b = bim_seg(seg, x, LabelMask(1, 1, 1, static_cast<std::uint8_t>(label)), cfg);
    EXPECT_EQ(a.adversarial, b.adversarial);
    EXPECT_EQ(a.losses, b.losses);
  }
}

TEST(BimSeg, BatchStepMatchesSingleImages) {
  const Network net = build(seg_spec(BackboneKind::Plain, HeadKind::FCN), 9);
  const Tensor a = image(16, 16, 20), b = image(16, 16, 21);
  const LabelMask ma = random_mask(16, 16, 22), mb = random_mask(16, 16, 23);
  AttackConfig cfg;
  cfg.iters = 3;
  const Tensor both[] = {a, b};
  const LabelMask masks[] = {ma, mb};
  const Tensor batch = bim_seg(net, Tensor::stack(both), LabelMask::stack(masks), cfg).adversarial;
  EXPECT_EQ(batch.batch_item(0).reshaped({1, 3, 16, 16}), bim_seg(net, a, ma, cfg).adversarial);
  EXPECT_EQ(batch.batch_item(1).reshaped({1, 3, 16, 16}), bim_seg(net, b, mb, cfg).adversarial);
}

TEST(BimSeg, AllIgnoredMaskIsError) {
  const Network net = build(seg_spec(BackboneKind::Plain, HeadKind::FCN), 1);
  AttackConfig cfg;
  EXPECT_THROW(bim_seg(net, image(16, 16, 1), LabelMask(1, 16, 16, LabelMask::kIgnore), cfg), Error);
}

TEST(BimSeg, ZeroGradientStepsAreCounted) {
  Network net = build(seg_spec(BackboneKind::Plain, HeadKind::FCN), 1);
  for (auto& [name, t] : net.params()) t.fill(0.0);
  AttackConfig cfg;
  cfg.iters = 4;
  const Tensor x = image(16, 16, 2);
  const AttackResult r = bim_seg(net, x, random_mask(16, 16, 3), cfg);
  EXPECT_EQ(r.zero_gradient_steps, 4);
  EXPECT_EQ(r.adversarial, x);
}

TEST(SampleScale, ZeroLambdaIsOne) {
  Rng rng = make_stream(1, 1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_scale(0.0, rng), 1.0);
}

TEST(SampleScale, Statistics) {
  Rng rng = make_stream(2, 2);
  double lo = 10, hi = -10, sum = 0;
  for (int i = 0; i < 10000; ++i) {
    const double r = sample_scale(0.5, rng);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    sum += r;
  }
  EXPECT_GE(lo, 0.5);
  EXPECT_LE(hi, 1.5);
  EXPECT_NEAR(sum / 10000, 1.0, 0.01);
}

TEST(SampleScale, SeededSequenceRepeats) {
  Rng a = make_stream(3, 9), b = make_stream(3, 9);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_scale(0.3, a), sample_scale(0.3, b));
}

TEST(ScaledExtent, RoundsToMultiple) {
  EXPECT_EQ(scaled_extent(32, 1.0, 8), 32);
  EXPECT_EQ(scaled_extent(32, 0.5, 8), 16);
  EXPECT_EQ(scaled_extent(32, 0.6, 8), 16);   // 19.2 -> 2.4 units -> 2
  EXPECT_EQ(scaled_extent(32, 0.65, 8), 24);  // 20.8 -> 2.6 units -> 3
  EXPECT_EQ(scaled_extent(32, 0.05, 8), 8);
  EXPECT_EQ(scaled_extent(64, 1.5, 8), 96);
}

TEST(DsAttack, ZeroLambdaEqualsBimSeg) {
  for (auto kind : {BackboneKind::Plain, BackboneKind::Residual}) {
    const Network net = build(seg_spec(kind, HeadKind::Pyramid), 11);
    const Tensor x = image(16, 16, 12);
    const LabelMask m = random_mask(16, 16, 13);
    AttackConfig cfg;
    cfg.iters = 5;
    cfg.lambda = 0.0;
    cfg.seed = 77;
    cfg.snapshot_iters = {0, 2, 5};
    const AttackResult fs = bim_seg(net, x, m, cfg);
    cfg.kind = AttackKind::DS_SEG;
    const AttackResult ds = ds_attack(net, x, m, cfg, 4);
    EXPECT_EQ(ds.adversarial, fs.adversarial);
    EXPECT_EQ(ds.losses, fs.losses);
    ASSERT_EQ(ds.snapshots.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ds.snapshots[i].image, fs.snapshots[i].image);
  }
}

TEST(DsAttack, DeterministicPerImageStream) {
  const Network net = build(seg_spec(BackboneKind::Residual, HeadKind::Dilated), 14);
  const Tensor x = image(16, 16, 15);
  const LabelMask m = random_mask(16, 16, 16);
  AttackConfig cfg;
  cfg.kind = AttackKind::DS_SEG;
  cfg.iters = 6;
  const AttackResult a = ds_attack(net, x, m, cfg, 1);
  EXPECT_EQ(ds_attack(net, x, m, cfg, 1).adversarial, a.adversarial);
  EXPECT_NE(ds_attack(net, x, m, cfg, 2).losses, a.losses);
}

TEST(Attacks, BallInvariantAtEverySnapshot) {
  const Network seg = build(seg_spec(BackboneKind::Residual, HeadKind::FCN), 17);
  NetworkSpec cs = seg_spec(BackboneKind::Plain, HeadKind::Cls);
  const Network cls = build(cs, 18);
  for (std::uint64_t s = 0; s < 3; ++s) {
    // Saturated pixels make the [0,1] clamp bite.
    Tensor x = image(16, 16, 30 + s);
    for (std::size_t i = 0; i < x.size(); i += 7) x[i] = (i % 2) ? 1.0 : 0.0;
    const LabelMask m = random_mask(16, 16, 40 + s);
    const int label = static_cast<int>(s % 4);
    AttackConfig cfg;
    cfg.iters = 12;
    cfg.alpha = 0.01;
    cfg.snapshot_iters = {0, 1, 3, 6, 12};
    std::vector<AttackResult> results;
    results.push_back(bim_seg(seg, x, m, cfg));
    cfg.kind = AttackKind::DS_SEG;
    results.push_back(ds_attack(seg, x, m, cfg, s));
    cfg.kind = AttackKind::BIM_CLS;
    results.push_back(bim_cls(cls, x, std::span<const int>(&label, 1), cfg));
    results.push_back(fgsm_cls(cls, x, std::span<const int>(&label, 1), 0.03));
    for (const auto& r : results) {
      expect_in_ball(r.adversarial, x, 0.03);
      for (const auto& snap : r.snapshots) expect_in_ball(snap.image, x, 0.03);
      for (double l : r.losses) EXPECT_TRUE(std::isfinite(l));
    }
    EXPECT_EQ(results[0].snapshots.front().image, x);
  }
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  auto rejects = [](AttackConfig bad) {
    try {
      bad.validate();
      return false;
    } catch (const Error& e) {
      return e.kind() == ErrorKind::Config;
    }
  };
  AttackConfig b = c;
  b.alpha = 0.05;
  EXPECT_TRUE(rejects(b));
  b = c;
  b.iters = 0;
  EXPECT_TRUE(rejects(b));
  b = c;
  b.lambda = 1.0;
  EXPECT_TRUE(rejects(b));
  b = c;
  b.epsilon = 0.0;
  EXPECT_TRUE(rejects(b));
  EXPECT_NO_THROW(b.validate(true));
  b = c;
  b.snapshot_iters = {3, 2};
  EXPECT_TRUE(rejects(b));
  b = c;
  b.snapshot_iters = {c.iters + 1};
  EXPECT_TRUE(rejects(b));
}

TEST(AttackConfig, KeyValueRoundTrip) {
  AttackConfig c;
  c.kind = AttackKind::DS_SEG;
  c.lambda = 0.25;
  c.seed = 9;
  c.snapshot_iters = {1, 5, 10};
  const AttackConfig back = AttackConfig::from_kv(c.to_kv());
  EXPECT_EQ(back.to_kv(), c.to_kv());
  EXPECT_THROW(parse_attack_kind("pgd"), Error);
}
