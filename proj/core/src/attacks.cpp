#include "segx/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "segx/ops.hpp"
#include "segx/tape.hpp"

namespace segx {
namespace {

LabelMask class_labels(std::span<const int> labels) {
  LabelMask m(labels.size(), 1, 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= LabelMask::kIgnore) fail(ErrorKind::Argument, "class label out of range");
    m.at(i, 0, 0) = static_cast<std::uint8_t>(labels[i]);
  }
  return m;
}

void check_image(const Tensor& x) {
  if (x.rank() != 4) fail(ErrorKind::Shape, "attack input must be [N,C,H,W], got " + to_string(x.shape()));
}

// Shared projected sign-gradient loop. loss_at builds the source loss of the
// iterate on a fresh tape.
template <class LossFn>
AttackResult sign_ascent(const Tensor& clean, int iters, double alpha, double eps, const std::vector<int>& snaps,
                         LossFn&& loss_at) {
  AttackResult r;
  Tensor x = clean;
  std::size_t next_snap = 0;
  auto take_snapshots = [&](int t) {
    while (next_snap < snaps.size() && snaps[next_snap] == t) {
      r.snapshots.push_back({t, x});
      ++next_snap;
    }
  };
  take_snapshots(0);
  for (int t = 0; t < iters; ++t) {
    Tape tape;
    const Var xv = tape.leaf(x, true);
    const Var loss = loss_at(tape, xv, t);
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) fail(ErrorKind::Numeric, "attack loss is not finite at iteration " + std::to_string(t));
    r.losses.push_back(value);
    tape.backward(loss);
    const Tensor g = tape.grad(xv);
    bool moved = false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : g[i] < 0.0 ? -1.0 : 0.0;
      moved = moved || s != 0.0;
      x[i] += alpha * s;
    }
    if (!moved) ++r.zero_gradient_steps;
    x = project_eps(x, clean, eps);
    take_snapshots(t + 1);
  }
  r.adversarial = std::move(x);
  return r;
}

Var source_loss(const Network& net, Tape& tape, Var x, const LabelMask& labels) {
  const ParamBinding p(net, tape, false);
  return softmax_ce_mean(tape, forward(net, p, tape, x), labels);
}

}  // namespace

std::string_view to_string(AttackKind k) {
  switch (k) {
    case AttackKind::FGSM: return "fgsm";
    case AttackKind::BIM_CLS: return "bim-cls";
    case AttackKind::BIM_SEG: return "bim-seg";
    case AttackKind::DS_SEG: return "ds";
  }
  return "?";
}

AttackKind parse_attack_kind(std::string_view s) {
  if (s == "fgsm") return AttackKind::FGSM;
  if (s == "bim-cls") return AttackKind::BIM_CLS;
  if (s == "bim-seg" || s == "fs") return AttackKind::BIM_SEG;
  if (s == "ds") return AttackKind::DS_SEG;
  fail(ErrorKind::Config, "unknown attack kind '" + std::string(s) + "' (fgsm, bim-cls, bim-seg, ds)");
}

void AttackConfig::validate(bool allow_zero_epsilon) const {
  const bool zero_ok = allow_zero_epsilon && epsilon == 0.0;
  if (!(epsilon <= 1.0) || !(epsilon > 0.0 || zero_ok)) fail(ErrorKind::Config, "attack: need 0 < epsilon <= 1");
  if (!(alpha > 0.0) || (!zero_ok && alpha > epsilon)) fail(ErrorKind::Config, "attack: need 0 < alpha <= epsilon");
  if (iters < 1) fail(ErrorKind::Config, "attack: iters must be >= 1");
  if (!(lambda >= 0.0 && lambda < 1.0)) fail(ErrorKind::Config, "attack: need 0 <= lambda < 1");
  for (std::size_t i = 0; i < snapshot_iters.size(); ++i) {
    if (snapshot_iters[i] < 0 || snapshot_iters[i] > iters) {
      fail(ErrorKind::Config, "attack: snapshot " + std::to_string(snapshot_iters[i]) + " outside [0, iters]");
    }
    if (i > 0 && snapshot_iters[i] <= snapshot_iters[i - 1]) {
      fail(ErrorKind::Config, "attack: snapshots must be strictly increasing");
    }
  }
}

KeyValues AttackConfig::to_kv() const {
  KeyValues kv;
  kv.set("epsilon", epsilon);
  kv.set("alpha", alpha);
  kv.set("iters", iters);
  kv.set("lambda", lambda);
  kv.set("kind", std::string(to_string(kind)));
  kv.set("seed", static_cast<unsigned long long>(seed));
  kv.set("snapshots", join_ints(snapshot_iters));
  return kv;
}

AttackConfig AttackConfig::from_kv(const KeyValues& kv) {
  kv.require_known({"epsilon", "alpha", "iters", "lambda", "kind", "seed", "snapshots"});
  AttackConfig c;
  c.epsilon = kv.get_double_or("epsilon", c.epsilon);
  c.alpha = kv.get_double_or("alpha", c.alpha);
  c.iters = static_cast<int>(kv.get_int_or("iters", c.iters));
  c.lambda = kv.get_double_or("lambda", c.lambda);
  if (kv.contains("kind")) c.kind = parse_attack_kind(kv.get("kind"));
  if (kv.contains("seed")) c.seed = kv.get_u64("seed");
  if (kv.contains("snapshots") && !kv.get("snapshots").empty()) c.snapshot_iters = kv.get_int_list("snapshots");
  return c;
}

Tensor project_eps(const Tensor& adv, const Tensor& clean, double eps) {
  if (adv.shape() != clean.shape()) {
    fail(ErrorKind::Shape, "project_eps: " + to_string(adv.shape()) + " vs " + to_string(clean.shape()));
  }
  Tensor out = adv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(std::clamp(out[i], clean[i] - eps, clean[i] + eps), 0.0, 1.0);
  }
  return out;
}

double sample_scale(double lambda, Rng& rng) { return 1.0 - lambda + 2.0 * lambda * uniform01(rng); }

int scaled_extent(int extent, double ratio, int multiple) {
  const double units = std::round(ratio * extent / multiple);
  return multiple * std::max(1, static_cast<int>(units));
}

AttackResult fgsm_cls(const Network& net, const Tensor& x, std::span<const int> labels, double eps) {
  check_image(x);
  if (!(eps >= 0.0 && eps <= 1.0)) fail(ErrorKind::Config, "fgsm: need 0 <= epsilon <= 1");
  const LabelMask y = class_labels(labels);
  return sign_ascent(x, 1, eps, eps, {}, [&](Tape& tape, Var xv, int) { return source_loss(net, tape, xv, y); });
}

AttackResult bim_cls(const Network& net, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate(true);
  check_image(x);
  const LabelMask y = class_labels(labels);
  return sign_ascent(x, cfg.iters, cfg.alpha, cfg.epsilon, cfg.snapshot_iters,
                     [&](Tape& tape, Var xv, int) { return source_loss(net, tape, xv, y); });
}

AttackResult bim_seg(const Network& net, const Tensor& x, const LabelMask& mask, const AttackConfig& cfg) {
  cfg.validate(true);
  check_image(x);
  if (mask.batch() != x.dim(0) || mask.height() != x.dim(2) || mask.width() != x.dim(3)) {
    fail(ErrorKind::Shape, "bim_seg: mask does not match the image size");
  }
  return sign_ascent(x, cfg.iters, cfg.alpha, cfg.epsilon, cfg.snapshot_iters,
                     [&](Tape& tape, Var xv, int) { return source_loss(net, tape, xv, mask); });
}

AttackResult ds_attack(const Network& net, const Tensor& x, const LabelMask& mask, const AttackConfig& cfg,
                       std::uint64_t image_id) {
  cfg.validate(true);
  check_image(x);
  if (x.dim(0) != 1) fail(ErrorKind::Shape, "ds_attack works on one image at a time");
  if (mask.batch() != 1 || mask.height() != x.dim(2) || mask.width() != x.dim(3)) {
    fail(ErrorKind::Shape, "ds_attack: mask does not match the image size");
  }
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  const int multiple = net.spec().backbone.downsample_factor();
  Rng rng = make_stream(cfg.seed, image_id);
  return sign_ascent(x, cfg.iters, cfg.alpha, cfg.epsilon, cfg.snapshot_iters, [&](Tape& tape, Var xv, int) {
    const double ratio = sample_scale(cfg.lambda, rng);
    const int sh = scaled_extent(h, ratio, multiple), sw = scaled_extent(w, ratio, multiple);
    const Var xs = bilinear_resize(tape, xv, sh, sw);
    return source_loss(net, tape, xs, nearest_resize_mask(mask, sh, sw));
  });
}

AttackResult attack_seg(const Network& net, const Tensor& x, const LabelMask& mask, const AttackConfig& cfg,
                        std::uint64_t image_id) {
  switch (cfg.kind) {
    case AttackKind::BIM_SEG: return bim_seg(net, x, mask, cfg);
    case AttackKind::DS_SEG: return ds_attack(net, x, mask, cfg, image_id);
    default: fail(ErrorKind::Config, "attack kind " + std::string(to_string(cfg.kind)) + " is not a segmentation attack");
  }
}

}  // namespace segx
