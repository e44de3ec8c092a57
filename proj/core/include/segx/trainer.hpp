#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segx/attacks.hpp"
#include "segx/datagen.hpp"
#include "segx/kv.hpp"
#include "segx/models.hpp"

namespace segx {

struct TrainConfig {
  int epochs = 30;
  int batch = 16;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool adversarial = false;
  /// Inner attack for adversarial training. Only epsilon, alpha and seed are
  /// read; the recipe is always 3 BIM iterations against the current weights.
  AttackConfig attack;

  static constexpr int kAdversarialIters = 3;

  void validate() const;
  KeyValues to_kv() const;
  static TrainConfig from_kv(const KeyValues& kv);
};

struct TrainLogRow {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double metric = 0.0;  // mIoU for segmentation, accuracy for classifiers
};

struct TrainResult {
  Network net;
  std::vector<TrainLogRow> log;
  std::vector<double> batch_losses;
};

/// Images and targets in the form a network consumes. For classifiers the
/// target of each sample is its dominant shape class (see
/// classification_label); segmentation nets use the mask.
struct Batch {
  Tensor images;       // [N,3,H,W]
  LabelMask targets;   // (N,H,W) for segmentation, (N,1,1) for classifiers
};

Batch make_batch(const Network& net, std::span<const SegSample> samples, std::span<const std::size_t> order = {});

/// Mean loss and metric of net over samples, evaluated in chunks.
TrainLogRow evaluate(const Network& net, std::span<const SegSample> samples, int epoch = 0,
                     const std::string& split = "val");

/// SGD with momentum (v = mu v + g; p -= lr v) on the mean cross-entropy.
/// The log holds an epoch-0 validation row for the initial weights and a
/// train and val row for every epoch. Throws Numeric if the loss diverges.
TrainResult train(Network net, std::span<const SegSample> train_set, std::span<const SegSample> val_set,
                  const TrainConfig& cfg);

/// Same as train() with cfg.adversarial forced on: each batch is replaced by
/// its BIM adversarial examples before the step.
TrainResult adv_train(Network net, std::span<const SegSample> train_set, std::span<const SegSample> val_set,
                      TrainConfig cfg);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log,
                     const std::string& config_digest);

}  // namespace segx
