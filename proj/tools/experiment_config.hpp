#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segx/attacks.hpp"
#include "segx/kv.hpp"
#include "segx/models.hpp"
#include "segx/trainer.hpp"

namespace segx::cli {

/// Everything a run needs besides its input files. Text form is a KeyValues
/// file with the sections model.*, train.*, attack.* and eval.*, plus a
/// top-level seed.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  NetworkSpec model;
  TrainConfig train;
  AttackConfig attack;
  std::vector<double> scales = {0.5, 0.75, 1.0};
  std::vector<double> lambdas = {0.0, 0.25, 0.5};
  int limit = 0;  // first N val samples; 0 = all

  void validate() const;
  KeyValues to_kv() const;
  /// Missing keys keep their defaults; unknown keys throw Config.
  static ExperimentConfig from_kv(const KeyValues& kv);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Reseeds init, training and attack streams from one seed.
  void reseed(std::uint64_t s);

  std::string digest() const;
};

}  // namespace segx::cli
