#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "segx/attacks.hpp"
#include "segx/datagen.hpp"
#include "segx/models.hpp"

namespace segx {

/// One evaluation outcome. `scale` is the evaluation scale as text ("1",
/// "0.5", or "multi" for probability-averaged multi-scale inference).
struct MetricsRecord {
  std::string source;
  std::string target;
  std::string attack;
  int iter = 0;
  std::string scale = "1";
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline constexpr std::string_view kCsvHeader = "source,target,attack,iter,scale,metric,value,seed,config_digest";

std::string to_csv(std::span<const MetricsRecord> records);
std::vector<MetricsRecord> parse_csv(std::string_view text);
void write_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records);
std::vector<MetricsRecord> read_csv(const std::filesystem::path& path);

struct ModelRef {
  std::string id;
  Network net;
};

/// Adversarial examples of every sample at every recorded iteration.
struct AdversarialSet {
  std::string source;
  AttackConfig cfg;
  std::vector<int> iters;                      // recorded iterations, ascending
  std::vector<std::vector<Tensor>> images;     // [iter index][sample], each [1,3,H,W]
  std::vector<std::uint64_t> ids;
  std::vector<std::vector<double>> losses;     // [sample][t]

  const std::vector<Tensor>& at_iter(int iter) const;
};

/// Attacks every sample independently (worker pool, private tapes). The
/// recorded iterations are cfg.snapshot_iters plus cfg.iters.
AdversarialSet run_attack(const Network& source, const std::string& source_id, std::span<const SegSample> samples,
                          const AttackConfig& cfg, int workers);

void save_adversarial(const AdversarialSet& set, const std::filesystem::path& path, const std::string& config_digest);
AdversarialSet load_adversarial(const std::filesystem::path& path);

/// mIoU (segmentation) or accuracy (classifier) of net on the given images
/// against the samples' labels. images empty means the clean images.
double model_metric(const Network& net, std::span<const Tensor> images, std::span<const SegSample> samples,
                    int workers);

std::string metric_name(const Network& net);

struct RecordContext {
  std::uint64_t seed = 0;
  std::string config_digest;
};

/// Clean rows (source "none", attack "clean") for every target, then for each
/// (source, cfg) one attack and a row per (recorded iteration, target).
std::vector<MetricsRecord> transfer_matrix(std::span<const ModelRef> sources, std::span<const ModelRef> targets,
                                           std::span<const SegSample> samples, std::span<const AttackConfig> cfgs,
                                           int workers, const RecordContext& ctx);

struct OverfitSummary {
  std::string target;
  double min_value = 0.0;
  int min_iter = 0;
  double final_value = 0.0;
  bool overfitting = false;  // final exceeds the minimum by more than delta
};

struct SweepResult {
  std::vector<MetricsRecord> records;
  std::vector<OverfitSummary> summaries;
};

inline constexpr double kOverfitDelta = 2.0;

/// Target metric at each of cfg.snapshot_iters (cfg.iters if empty).
SweepResult iteration_sweep(const ModelRef& source, std::span<const ModelRef> targets,
                            std::span<const SegSample> samples, const AttackConfig& cfg, int workers,
                            const RecordContext& ctx, double delta = kOverfitDelta);

/// Overfitting summary of one curve of (iter, value) pairs in iteration order.
OverfitSummary summarize_curve(const std::string& target, std::span<const std::pair<int, double>> curve,
                               double delta = kOverfitDelta);

/// One DS attack per lambda at cfg.iters. lambdas must include 0, whose
/// attack coincides with the fixed-scale attack.
std::vector<MetricsRecord> ratio_sweep(const ModelRef& source, const ModelRef& target,
                                       std::span<const SegSample> samples, const AttackConfig& cfg,
                                       std::span<const double> lambdas, int workers, const RecordContext& ctx);

/// Logits of net on x evaluated at `scale` and resized back to x's size.
Tensor scaled_logits(const Network& net, const Tensor& x, double scale);

/// Per scale: resize input, forward, resize logits back and score against the
/// original masks. Then a "multi" row scoring the softmax probabilities
/// averaged over all scales.
std::vector<MetricsRecord> multiscale_eval(const ModelRef& target, std::span<const Tensor> images,
                                           std::span<const SegSample> samples, std::span<const double> scales,
                                           int workers, const MetricsRecord& row_template);

}  // namespace segx
