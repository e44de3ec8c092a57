#include <benchmark/benchmark.h>

#include "segx/attacks.hpp"
#include "segx/datagen.hpp"
#include "segx/models.hpp"
#include "segx/ops.hpp"
#include "segx/rng.hpp"

using namespace segx;

namespace {

Tensor noise(Shape shape, std::uint64_t seed) {
  Tensor t(shape);
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(rng, -1.0, 1.0);
  return t;
}

NetworkSpec spec(HeadKind head) {
  NetworkSpec s;
  s.input_h = s.input_w = 32;
  s.backbone.kind = BackboneKind::Residual;
  s.backbone.stage_widths = {8, 16, 32};
  s.head.kind = head;
  return s;
}

}  // namespace

static void BM_Conv2d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  const Tensor x = noise({8, static_cast<std::size_t>(c), static_cast<std::size_t>(hw), static_cast<std::size_t>(hw)}, 1);
  const Tensor w = noise({static_cast<std::size_t>(c), static_cast<std::size_t>(c), 3, 3}, 2);
  const Tensor b = noise({static_cast<std::size_t>(c)}, 3);
  for (auto _ : state) {
    Tape tape;
    Var y = conv2d(tape, tape.leaf(x, false), tape.leaf(w, false), tape.leaf(b, false), {1, 1, 1});
    benchmark::DoNotOptimize(tape.value(y)[0]);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2d)->Args({8, 32})->Args({16, 16})->Args({32, 8})->Unit(benchmark::kMicrosecond);

static void BM_BilinearResize(benchmark::State& state) {
  const Tensor x = noise({1, 3, 32, 32}, 4);
  const int out = static_cast<int>(state.range(0));
  for (auto _ : state) {
    Tensor y = bilinear_resize(x, out, out);
    benchmark::DoNotOptimize(y[0]);
  }
}
BENCHMARK(BM_BilinearResize)->Arg(16)->Arg(48)->Unit(benchmark::kMicrosecond);

static void BM_ForwardBackward(benchmark::State& state) {
  const Network net = build(spec(static_cast<HeadKind>(state.range(0))), 5);
  GenOptions g;
  g.height = g.width = 32;
  g.seed = 6;
  std::vector<Tensor> imgs;
  LabelMask mask(8, 32, 32);
  for (int i = 0; i < 8; ++i) {
    SegSample s = render_sample(g, static_cast<std::uint64_t>(i));
    imgs.push_back(s.image.reshaped({1, 3, 32, 32}));
    for (std::size_t p = 0; p < 32 * 32; ++p) mask.data()[i * 32 * 32 + p] = s.mask.data()[p];
  }
  const Tensor x = Tensor::stack(imgs);
  for (auto _ : state) {
    Tape tape;
    ParamBinding p(net, tape, true);
    Var loss = softmax_ce_mean(tape, forward_seg(net, p, tape, tape.leaf(x, false)), mask);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.value(loss)[0]);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ForwardBackward)
    ->Arg(static_cast<int>(HeadKind::FCN))
    ->Arg(static_cast<int>(HeadKind::Pyramid))
    ->Arg(static_cast<int>(HeadKind::Dilated))
    ->Unit(benchmark::kMillisecond);

// one iteration per benchmark step; range(0) picks FS (0) or DS (1)
static void BM_AttackStep(benchmark::State& state) {
  const Network net = build(spec(HeadKind::FCN), 7);
  GenOptions g;
  g.height = g.width = 32;
  const SegSample s = render_sample(g, 0);
  const Tensor x = s.image.reshaped({1, 3, 32, 32});
  AttackConfig cfg;
  cfg.iters = 1;
  cfg.kind = state.range(0) ? AttackKind::DS_SEG : AttackKind::BIM_SEG;
  for (auto _ : state) {
    AttackResult r = cfg.kind == AttackKind::DS_SEG ? ds_attack(net, x, s.mask, cfg, 0) : bim_seg(net, x, s.mask, cfg);
    benchmark::DoNotOptimize(r.adversarial[0]);
  }
}
BENCHMARK(BM_AttackStep)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
