#include "experiment_config.hpp"

#include "segx/digest.hpp"
#include "segx/error.hpp"

namespace segx::cli {
namespace {

void merge(KeyValues& into, const KeyValues& from, const std::string& prefix) {
  for (const auto& [k, v] : from.entries()) into.set(prefix + k, v);
}

std::vector<std::string> keys_of(const KeyValues& kv, const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& [k, v] : kv.entries()) out.push_back(prefix + k);
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  attack.validate();
  for (double s : scales) {
    if (!(s > 0.0)) fail(ErrorKind::Config, "eval.scales must be positive");
  }
  for (double l : lambdas) {
    if (!(l >= 0.0 && l < 1.0)) fail(ErrorKind::Config, "eval.lambdas must lie in [0, 1)");
  }
  if (limit < 0) fail(ErrorKind::Config, "eval.limit must be >= 0");
}

KeyValues ExperimentConfig::to_kv() const {
  KeyValues kv;
  kv.set("seed", static_cast<unsigned long long>(seed));
  merge(kv, model.to_kv(), "model.");
  KeyValues tkv = train.to_kv();
  tkv.set("adv.epsilon", train.attack.epsilon);
  tkv.set("adv.alpha", train.attack.alpha);
  merge(kv, tkv, "train.");
  merge(kv, attack.to_kv(), "attack.");
  kv.set("eval.scales", join_doubles(scales));
  kv.set("eval.lambdas", join_doubles(lambdas));
  kv.set("eval.limit", limit);
  return kv;
}

ExperimentConfig ExperimentConfig::from_kv(const KeyValues& kv) {
  ExperimentConfig c;
  const KeyValues defaults = c.to_kv();
  kv.require_known(keys_of(defaults, ""));

  KeyValues model_kv = defaults.subset("model.");
  merge(model_kv, kv.subset("model."), "");
  c.model = NetworkSpec::from_kv(model_kv);
  c.train = TrainConfig::from_kv(kv.subset("train."));
  c.attack = AttackConfig::from_kv(kv.subset("attack."));
  if (kv.contains("eval.scales")) c.scales = kv.get_double_list("eval.scales");
  if (kv.contains("eval.lambdas")) c.lambdas = kv.get_double_list("eval.lambdas");
  c.limit = static_cast<int>(kv.get_int_or("eval.limit", 0));
  if (kv.contains("seed")) c.reseed(kv.get_u64("seed"));
  // explicit section seeds win over the top-level one
  if (kv.contains("train.seed")) c.train.seed = kv.get_u64("train.seed");
  if (kv.contains("attack.seed")) c.attack.seed = kv.get_u64("attack.seed");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  return from_kv(KeyValues::read_file(path));
}

void ExperimentConfig::reseed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  train.attack.seed = s;
  attack.seed = s;
}

std::string ExperimentConfig::digest() const { return short_digest(to_kv().canonical()); }

}  // namespace segx::cli
