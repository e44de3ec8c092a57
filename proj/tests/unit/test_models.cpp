#include <gtest/gtest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "segx/container.hpp"
#include "segx/models.hpp"
#include "segx/ops.hpp"

using namespace segx;
using segx::testing::random_tensor;
using segx::testing::rel_err;

namespace {

NetworkSpec seg_spec(BackboneKind kind, HeadKind head, int size = 32) {
  NetworkSpec s;
  s.name = "t";
  s.input_h = s.input_w = size;
  s.backbone.kind = kind;
  s.backbone.stage_widths = {4, 8, 8};
  s.head.kind = head;
  s.head.width = 8;
  s.head.fcn_fuse_stages = 2;
  return s;
}

Tensor images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  return random_tensor({n, 3, h, w}, seed, 0.0, 1.0);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("segx_models_" + name);
}

double loss_of(const Network& net, const Tensor& x, const LabelMask& y) {
  Tape t;
  const ParamBinding p(net, t, false);
  return t.value(softmax_ce_mean(t, forward(net, p, t, t.constant(x)), y))[0];
}

}  // namespace

TEST(Models, ClassifierLogitShape) {
  NetworkSpec s = seg_spec(BackboneKind::Plain, HeadKind::Cls);
  s.head.num_classes = 3;
  const Network net = build(s, 1);
  const Tensor y = predict(net, images(2, 32, 32, 2));
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  EXPECT_TRUE(all_finite(y));
}

TEST(Models, SegmentationLogitShape) {
  NetworkSpec s = seg_spec(BackboneKind::Plain, HeadKind::FCN, 64);
  const Network net = build(s, 1);
  EXPECT_EQ(predict(net, images(2, 64, 64, 3)).shape(), (Shape{2, 4, 64, 64}));
}

TEST(Models, OutputMatchesInputResolutionForEveryHead) {
  for (auto kind : {BackboneKind::Plain, BackboneKind::Residual}) {
    for (auto head : {HeadKind::FCN, HeadKind::Pyramid, HeadKind::Dilated}) {
      const Network net = build(seg_spec(kind, head), 4);
      for (std::size_t size : {8u, 16u, 24u, 40u}) {
        const Tensor y = predict(net, images(1, size, size + 8, 5));
        EXPECT_EQ(y.shape(), (Shape{1, 4, size, size + 8})) << to_string(head);
        EXPECT_TRUE(all_finite(y));
      }
    }
  }
}

TEST(Models, IndivisibleInputNamesMultiple) {
  const Network net = build(seg_spec(BackboneKind::Plain, HeadKind::FCN), 1);
  try {
    predict(net, images(1, 30, 32, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
    EXPECT_NE(std::string(e.what()).find("multiple of 4"), std::string::npos) << e.what();
  }
}

TEST(Models, SameSeedSameParameters) {
  const NetworkSpec s = seg_spec(BackboneKind::Residual, HeadKind::Pyramid);
  EXPECT_EQ(build(s, 7), build(s, 7));
  EXPECT_FALSE(build(s, 7) == build(s, 8));
}

TEST(Models, ZeroParametersGiveConstantLogits) {
  Network net = build(seg_spec(BackboneKind::Plain, HeadKind::FCN), 1);
  for (auto& [name, t] : net.params()) t.fill(0.0);
  net.param("head.fcn.score2.b")[1] = 0.75;
  const Tensor y = predict(net, images(1, 16, 16, 9));
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < 16; ++i) {
      for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(y.at(0, c, i, j), y.at(0, c, 0, 0));
    }
  }
  EXPECT_EQ(y.at(0, 1, 3, 3), 0.75);
}

TEST(Models, ResidualBlocksAreIdentityAtInit) {
  NetworkSpec s = seg_spec(BackboneKind::Residual, HeadKind::FCN);
  s.backbone.blocks_per_stage = 2;
  s.backbone.downsample = Downsample::MaxPool;
  const Network net = build(s, 3);
  const Tensor x = images(1, 16, 16, 4);
  Tape t;
  const ParamBinding p(net, t, false);
  const std::vector<Var> stages = forward_backbone(net, p, t, t.constant(x));
  // Without the blocks each stage is just its entry conv.
  Var h = scale_shift(t, t.constant(x), 4.0, -2.0);
  for (std::size_t st = 0; st < stages.size(); ++st) {
    if (st > 0) h = max_pool2d(t, h, 2, 2);
    const std::string pre = "backbone.s" + std::to_string(st) + ".in";
    h = relu(t, conv2d(t, h, p[pre + ".w"], p[pre + ".b"], {1, 1, 1}));
    EXPECT_EQ(t.value(stages[st]), t.value(h)) << "stage " << st;
  }
}

TEST(Models, DilatedHeadWithUnitRatesIsOneConv) {
  NetworkSpec s = seg_spec(BackboneKind::Plain, HeadKind::Dilated);
  s.head.dilation_rates = {1, 1, 1};
  const Network net = build(s, 5);
  const Tensor x = images(1, 16, 16, 6);

  Tensor w = net.param("head.dil.rate0.w"), b = net.param("head.dil.rate0.b");
  for (const char* other : {"head.dil.rate1", "head.dil.rate2"}) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += net.param(std::string(other) + ".w")[i];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += net.param(std::string(other) + ".b")[i];
  }
  Tape t;
  const ParamBinding p(net, t, false);
  const Var top = forward_backbone(net, p, t, t.constant(x)).back();
  const Var hidden = relu(t, conv2d(t, top, t.constant(w), t.constant(b), {1, 1, 1}));
  Var logits = conv2d(t, hidden, p["head.dil.cls.w"], p["head.dil.cls.b"]);
  logits = bilinear_resize(t, logits, 16, 16);
  EXPECT_LE(max_abs_diff(t.value(logits), predict(net, x)), 1e-12);
}

TEST(Models, GlobalPyramidBranchIsPooledContext) {
  NetworkSpec s = seg_spec(BackboneKind::Residual, HeadKind::Pyramid);
  s.head.pyramid_grids = {1};
  const Network net = build(s, 8);
  Tape t;
  const ParamBinding p(net, t, false);
  const Var top = forward_backbone(net, p, t, t.constant(images(2, 16, 16, 9))).back();
  const Tensor branch = t.value(pyramid_branch(net, p, t, top, 0));
  const Var pooled = adaptive_avg_pool2d(t, top, 1, 1);
  const Tensor ctx = t.value(relu(t, conv2d(t, pooled, p["head.psp.branch0.w"], p["head.psp.branch0.b"])));
  ASSERT_EQ(branch.dim(2), t.shape(top)[2]);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < branch.dim(1); ++c) {
      for (std::size_t i = 0; i < branch.dim(2); ++i) {
        for (std::size_t j = 0; j < branch.dim(3); ++j) EXPECT_EQ(branch.at(n, c, i, j), ctx.at(n, c, 0, 0));
      }
    }
  }
}

TEST(Models, InvalidSpecsAreConfigErrors) {
  NetworkSpec s = seg_spec(BackboneKind::Plain, HeadKind::FCN, 16);
  s.backbone.stage_widths = {4, 4, 4, 4};  // factor 8 > 16/4
  try {
    s.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  s = seg_spec(BackboneKind::Plain, HeadKind::FCN);
  s.head.fcn_fuse_stages = 4;
  EXPECT_THROW(build(s, 1), Error);
}

TEST(Models, SpecKeyValueRoundTrip) {
  NetworkSpec s = seg_spec(BackboneKind::Residual, HeadKind::Dilated);
  s.backbone.downsample = Downsample::StridedConv;
  s.head.dilation_rates = {1, 3};
  const NetworkSpec back = NetworkSpec::from_kv(s.to_kv());
  EXPECT_EQ(back.to_kv(), s.to_kv());
}

TEST(Models, CheckpointRoundTripIsExact) {
  const Network net = build(seg_spec(BackboneKind::Residual, HeadKind::Pyramid), 11);
  const auto path = temp_file("roundtrip.segx");
  KeyValues meta;
  meta.set("note", "x");
  save(net, path, meta);
  const Network back = load(path);
  EXPECT_EQ(back, net);
  EXPECT_EQ(load_meta(path).get("note"), "x");
  const Tensor x = images(1, 16, 16, 12);
  EXPECT_EQ(predict(back, x), predict(net, x));
  std::filesystem::remove(path);
}

TEST(Models, CorruptCheckpointsAreRejected) {
  const Network net = build(seg_spec(BackboneKind::Plain, HeadKind::FCN), 2);
  const auto path = temp_file("corrupt.segx");
  save(net, path);
  auto bytes = read_bytes(path);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write_bytes(path, bad_magic);
  try {
    load(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }

  auto bad_version = bytes;
  bad_version[4] = 9;
  write_bytes(path, bad_version);
  EXPECT_THROW(load(path), Error);

  bytes.resize(bytes.size() - 5);
  write_bytes(path, bytes);
  try {
    load(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }
  std::filesystem::remove(path);
}

// Every parameter and the input of a small segmentation network against
// central differences at 20 random coordinates each.
TEST(Models, FullNetworkGradients) {
  for (auto head : {HeadKind::FCN, HeadKind::Pyramid, HeadKind::Dilated}) {
    NetworkSpec s = seg_spec(head == HeadKind::FCN ? BackboneKind::Plain : BackboneKind::Residual, head, 16);
    s.backbone.stage_widths = {3, 4, 4};
    s.head.width = 4;
    Network net = build(s, 21);
    // Non-zero residual branches so every path carries gradient.
    for (auto& [name, t] : net.params()) {
      if (name.find(".c2.") != std::string::npos) t = random_tensor(t.shape(), 22, -0.2, 0.2);
    }
    const Tensor x = images(1, 16, 16, 23);
    LabelMask y(1, 16, 16);
    Rng rng = make_stream(24, 0);
    for (auto& v : y.data()) v = static_cast<std::uint8_t>(uniform_index(rng, 4));

    Tape t;
    const ParamBinding p(net, t, true);
    const Var xv = t.leaf(x, true);
    t.backward(softmax_ce_mean(t, forward(net, p, t, xv), y));

    const double h = 1e-5;
    double worst = 0.0;
    Rng pick = make_stream(25, static_cast<std::uint64_t>(head));
    for (int k = 0; k < 20; ++k) {
      const std::size_t i = uniform_index(pick, x.size());
      Tensor up = x, down = x;
      up[i] += h;
      down[i] -= h;
      worst = std::max(worst, rel_err(t.grad(xv)[i], (loss_of(net, up, y) - loss_of(net, down, y)) / (2 * h)));
    }
    EXPECT_LT(worst, 1e-3) << "input, head " << to_string(head);

    for (const auto& [name, value] : net.params()) {
      const Tensor g = t.grad(p[name]);
      double pw = 0.0;
      for (int k = 0; k < 20; ++k) {
        const std::size_t i = uniform_index(pick, value.size());
        Network plus = net, minus = net;
        plus.param(name)[i] += h;
        minus.param(name)[i] -= h;
        pw = std::max(pw, rel_err(g[i], (loss_of(plus, x, y) - loss_of(minus, x, y)) / (2 * h)));
      }
      EXPECT_LT(pw, 1e-3) << name << ", head " << to_string(head);
    }
  }
}
