#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "segx/kv.hpp"
#include "segx/models.hpp"
#include "segx/rng.hpp"
#include "segx/tensor.hpp"

namespace segx {

enum class AttackKind { FGSM, BIM_CLS, BIM_SEG, DS_SEG };

std::string_view to_string(AttackKind k);
/// Accepts fgsm, bim-cls, bim-seg (alias fs), ds.
AttackKind parse_attack_kind(std::string_view s);

struct AttackConfig {
  double epsilon = 0.03;
  double alpha = 0.01;
  int iters = 10;
  double lambda = 0.5;
  AttackKind kind = AttackKind::BIM_SEG;
  std::uint64_t seed = 0;
  std::vector<int> snapshot_iters;

  /// 0 < alpha <= epsilon <= 1, iters >= 1, 0 <= lambda < 1, snapshots sorted
  /// within [0, iters]. With allow_zero_epsilon, epsilon = 0 is also accepted
  /// (every step is then projected back onto the clean image).
  void validate(bool allow_zero_epsilon = false) const;

  KeyValues to_kv() const;
  /// Missing keys keep their defaults.
  static AttackConfig from_kv(const KeyValues& kv);
};

struct Snapshot {
  int iter = 0;
  Tensor image;
};

struct AttackResult {
  Tensor adversarial;
  std::vector<Snapshot> snapshots;
  /// Source loss at each iterate before its step: losses[t] = L(x_t).
  std::vector<double> losses;
  /// Steps whose input gradient was identically zero (taken as no-ops).
  int zero_gradient_steps = 0;
};

/// Clamp to [clean - eps, clean + eps], then to [0, 1].
Tensor project_eps(const Tensor& adv, const Tensor& clean, double eps);

/// Uniform draw from [1 - lambda, 1 + lambda].
double sample_scale(double lambda, Rng& rng);

/// round(ratio * extent) snapped to the nearest multiple of `multiple`, at
/// least one multiple.
int scaled_extent(int extent, double ratio, int multiple);

/// One step of size eps on a classifier.
AttackResult fgsm_cls(const Network& net, const Tensor& x, std::span<const int> labels, double eps);

/// Iterative sign ascent of the classification loss.
AttackResult bim_cls(const Network& net, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);

/// Iterative sign ascent of the mean per-pixel loss. x may hold a batch; the
/// step of each image matches the single-image attack.
AttackResult bim_seg(const Network& net, const Tensor& x, const LabelMask& mask, const AttackConfig& cfg);

/// Dynamic-scale attack on a single image [1,3,H,W]. Each iteration rescales
/// the current iterate and the mask by a ratio drawn from the image's own
/// stream (cfg.seed, image_id), computes the loss at that size and
/// differentiates through the resize back to the original resolution.
AttackResult ds_attack(const Network& net, const Tensor& x, const LabelMask& mask, const AttackConfig& cfg,
                       std::uint64_t image_id);

/// Dispatch on cfg.kind for one segmentation image. FGSM and BIM_CLS are
/// rejected here.
AttackResult attack_seg(const Network& net, const Tensor& x, const LabelMask& mask, const AttackConfig& cfg,
                        std::uint64_t image_id);

}  // namespace segx
