#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "experiment_config.hpp"
#include "report.hpp"
#include "segx/datagen.hpp"
#include "segx/error.hpp"
#include "segx/evaluation.hpp"
#include "segx/parallel.hpp"
#include "segx/trainer.hpp"

namespace fs = std::filesystem;
using namespace segx;
using segx::cli::ExperimentConfig;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kShape = 4, kFormat = 5, kNumeric = 6 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Argument:
    case ErrorKind::Config: return kConfig;
    case ErrorKind::Io: return kIo;
    case ErrorKind::Shape: return kShape;
    case ErrorKind::Format:
    case ErrorKind::Corruption: return kFormat;
    case ErrorKind::Numeric: return kNumeric;
  }
  return kOther;
}

struct Common {
  std::string config;
  std::string data;
  std::string out;
  int workers = default_workers();
  std::int64_t seed = -1;
};

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config);
  if (c.seed >= 0) cfg.reseed(static_cast<std::uint64_t>(c.seed));
  cfg.validate();
  return cfg;
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "no such file: " + path);
}

std::vector<SegSample> val_samples(const Common& c, const ExperimentConfig& cfg) {
  if (c.data.empty()) fail(ErrorKind::Argument, "--data is required");
  const DatasetManifest m = read_manifest(c.data);
  return load_split(m, "val", static_cast<std::size_t>(cfg.limit));
}

ModelRef load_model(const std::string& path) {
  require_file(path);
  return {fs::path(path).stem().string(), load(path)};
}

std::vector<ModelRef> load_models(const std::vector<std::string>& paths) {
  std::vector<ModelRef> out;
  for (const auto& p : paths) out.push_back(load_model(p));
  return out;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void emit_csv(const std::string& out, const std::vector<MetricsRecord>& rows) {
  if (out.empty()) {
    std::cout << to_csv(rows);
    return;
  }
  ensure_parent(out);
  write_csv(out, rows);
  std::cerr << "wrote " << rows.size() << " rows to " << out << "\n";
}

void add_common(CLI::App* app, Common& c, bool with_data) {
  app->add_option("--config", c.config, "experiment config (key=value)")->check(CLI::ExistingFile);
  if (with_data) app->add_option("--data", c.data, "dataset directory")->required();
  app->add_option("--workers", c.workers, "worker threads (default $SEGX_WORKERS or 1)")->check(CLI::PositiveNumber);
  app->add_option("--seed", c.seed, "overrides every seed in the config");
}

std::vector<AttackConfig> attack_list(const ExperimentConfig& cfg, const std::vector<std::string>& names) {
  std::vector<AttackConfig> out;
  for (const auto& n : names) {
    if (n == "clean") continue;
    AttackConfig a = cfg.attack;
    a.kind = parse_attack_kind(n);
    a.validate();
    out.push_back(a);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segx: adversarial transfer experiments on synthetic segmentation data"};
  app.require_subcommand(1);

  // gen-data
  GenOptions gen;
  std::string gen_out;
  int gen_workers = default_workers();
  std::uint64_t gen_seed = 0;
  int gen_size = 64;
  auto* gen_cmd = app.add_subcommand("gen-data", "render the synthetic shapes corpus");
  gen_cmd->add_option("--seed", gen_seed);
  gen_cmd->add_option("--out", gen_out)->required();
  gen_cmd->add_option("--n-train", gen.n_train);
  gen_cmd->add_option("--n-val", gen.n_val);
  gen_cmd->add_option("--size", gen_size, "square image side");
  gen_cmd->add_option("--classes", gen.classes, "label count including background");
  gen_cmd->add_option("--workers", gen_workers)->check(CLI::PositiveNumber);

  // train
  Common tr;
  bool adversarial = false;
  auto* train_cmd = app.add_subcommand("train", "train one network");
  add_common(train_cmd, tr, true);
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
  train_cmd->add_flag("--adversarial", adversarial, "train on BIM examples of each batch");

  // attack
  Common at;
  std::string at_model;
  auto* attack_cmd = app.add_subcommand("attack", "craft adversarial examples on the val split");
  add_common(attack_cmd, at, true);
  attack_cmd->add_option("--model", at_model)->required();
  attack_cmd->add_option("--out", at.out, "adversarial container")->required();

  // eval-transfer
  Common et;
  std::vector<std::string> et_sources, et_targets, et_attacks{"bim-seg", "ds"};
  auto* transfer_cmd = app.add_subcommand("eval-transfer", "transfer matrix of sources x targets");
  add_common(transfer_cmd, et, true);
  transfer_cmd->add_option("--sources", et_sources)->delimiter(',');
  transfer_cmd->add_option("--targets", et_targets)->delimiter(',')->required();
  transfer_cmd->add_option("--attacks", et_attacks, "attack kinds, or clean")->delimiter(',');
  transfer_cmd->add_option("--out", et.out, "CSV (stdout if omitted)");

  // sweep-iters
  Common si;
  std::string si_source;
  std::vector<std::string> si_targets;
  std::vector<int> si_snaps;
  std::string si_attack;
  auto* iters_cmd = app.add_subcommand("sweep-iters", "target metric at attack snapshots");
  add_common(iters_cmd, si, true);
  iters_cmd->add_option("--source", si_source)->required();
  iters_cmd->add_option("--targets", si_targets)->delimiter(',')->required();
  iters_cmd->add_option("--snapshots", si_snaps)->delimiter(',');
  iters_cmd->add_option("--attack", si_attack, "attack kind (default from config)");
  iters_cmd->add_option("--out", si.out);

  // sweep-ratio
  Common sr;
  std::string sr_source, sr_target;
  std::vector<double> sr_lambdas;
  auto* ratio_cmd = app.add_subcommand("sweep-ratio", "DS attack at several scaling ratios");
  add_common(ratio_cmd, sr, true);
  ratio_cmd->add_option("--source", sr_source)->required();
  ratio_cmd->add_option("--target", sr_target)->required();
  ratio_cmd->add_option("--lambdas", sr_lambdas)->delimiter(',');
  ratio_cmd->add_option("--out", sr.out);

  // eval-multiscale
  Common ms;
  std::string ms_target, ms_aes;
  std::vector<double> ms_scales;
  int ms_iter = -1;
  auto* scale_cmd = app.add_subcommand("eval-multiscale", "score stored examples at several input scales");
  add_common(scale_cmd, ms, true);
  scale_cmd->add_option("--target", ms_target)->required();
  scale_cmd->add_option("--aes", ms_aes, "adversarial container; clean images when omitted");
  scale_cmd->add_option("--iter", ms_iter, "recorded iteration (default: last)");
  scale_cmd->add_option("--scales", ms_scales)->delimiter(',');
  scale_cmd->add_option("--out", ms.out);

  // report
  std::vector<std::string> rep_in;
  std::string rep_out;
  bool rep_force = false;
  auto* report_cmd = app.add_subcommand("report", "markdown table or SVG plot from result CSVs");
  report_cmd->add_option("--in", rep_in)->delimiter(',')->required();
  report_cmd->add_option("--out", rep_out, ".md or .svg")->required();
  report_cmd->add_flag("--force", rep_force, "accept rows from different configs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen_cmd) {
      gen.seed = gen_seed;
      gen.height = gen.width = gen_size;
      gen.workers = gen_workers;
      const DatasetManifest m = generate(gen, gen_out);
      std::cerr << "wrote " << m.files.size() << " samples to " << gen_out << "\n";
    } else if (*train_cmd) {
      ExperimentConfig cfg = load_config(tr);
      if (adversarial) cfg.train.adversarial = true;
      cfg.validate();
      const DatasetManifest m = read_manifest(tr.data);
      if (m.options.height != cfg.model.input_h || m.options.width != cfg.model.input_w) {
        fail(ErrorKind::Shape, "dataset is " + std::to_string(m.options.height) + "x" + std::to_string(m.options.width) +
                                   " but model.input is " + std::to_string(cfg.model.input_h) + "x" +
                                   std::to_string(cfg.model.input_w));
      }
      if (m.options.classes != cfg.model.head.num_classes && cfg.model.is_segmentation()) {
        fail(ErrorKind::Shape, "dataset has " + std::to_string(m.options.classes) + " classes, model.head.classes is " +
                                   std::to_string(cfg.model.head.num_classes));
      }
      const auto train_set = load_split(m, "train");
      const auto val_set = load_split(m, "val");
      TrainResult r = train(build(cfg.model, cfg.seed), train_set, val_set, cfg.train);
      const std::string digest = cfg.digest();
      KeyValues meta;
      meta.set("config_digest", digest);
      ensure_parent(tr.out);
      save(r.net, tr.out, meta);
      write_train_log(tr.out + ".log.csv", r.log, digest);
      const auto& last = r.log.back();
      std::fprintf(stderr, "epoch %d val loss %.4f %s %.2f\n", last.epoch, last.loss, metric_name(r.net).c_str(),
                   last.metric);
    } else if (*attack_cmd) {
      const ExperimentConfig cfg = load_config(at);
      const ModelRef src = load_model(at_model);
      const auto samples = val_samples(at, cfg);
      const AdversarialSet set = run_attack(src.net, src.id, samples, cfg.attack, at.workers);
      const std::string digest = cfg.digest();
      ensure_parent(at.out);
      save_adversarial(set, at.out, digest);
      std::ofstream log(at.out + ".losses.csv");
      if (!log) fail(ErrorKind::Io, "cannot write " + at.out + ".losses.csv");
      log << "# config_digest=" << digest << "\nsample,iter,loss\n";
      for (std::size_t i = 0; i < set.ids.size(); ++i) {
        for (std::size_t t = 0; t < set.losses[i].size(); ++t) {
          log << set.ids[i] << ',' << t << ',' << format_double(set.losses[i][t]) << '\n';
        }
      }
    } else if (*transfer_cmd) {
      const ExperimentConfig cfg = load_config(et);
      const auto sources = load_models(et_sources);
      const auto targets = load_models(et_targets);
      const auto samples = val_samples(et, cfg);
      const auto cfgs = attack_list(cfg, et_attacks);
      if (!cfgs.empty() && sources.empty()) fail(ErrorKind::Argument, "--sources is required for attacks");
      emit_csv(et.out, transfer_matrix(sources, targets, samples, cfgs, et.workers, {cfg.seed, cfg.digest()}));
    } else if (*iters_cmd) {
      ExperimentConfig cfg = load_config(si);
      if (!si_snaps.empty()) cfg.attack.snapshot_iters = si_snaps;
      if (!si_attack.empty()) cfg.attack.kind = parse_attack_kind(si_attack);
      cfg.validate();
      const auto source = load_model(si_source);
      const auto targets = load_models(si_targets);
      const auto samples = val_samples(si, cfg);
      const SweepResult r = iteration_sweep(source, targets, samples, cfg.attack, si.workers, {cfg.seed, cfg.digest()});
      emit_csv(si.out, r.records);
      for (const auto& s : r.summaries) {
        std::fprintf(stderr, "%s: min %.2f at %d, final %.2f, overfitting %s\n", s.target.c_str(), s.min_value,
                     s.min_iter, s.final_value, s.overfitting ? "yes" : "no");
      }
    } else if (*ratio_cmd) {
      ExperimentConfig cfg = load_config(sr);
      if (!sr_lambdas.empty()) cfg.lambdas = sr_lambdas;
      cfg.validate();
      const auto source = load_model(sr_source);
      const auto target = load_model(sr_target);
      const auto samples = val_samples(sr, cfg);
      emit_csv(sr.out, ratio_sweep(source, target, samples, cfg.attack, cfg.lambdas, sr.workers,
                                   {cfg.seed, cfg.digest()}));
    } else if (*scale_cmd) {
      ExperimentConfig cfg = load_config(ms);
      if (!ms_scales.empty()) cfg.scales = ms_scales;
      cfg.validate();
      const auto target = load_model(ms_target);
      const auto samples = val_samples(ms, cfg);
      MetricsRecord row;
      row.seed = cfg.seed;
      row.config_digest = cfg.digest();
      std::vector<Tensor> images;
      if (ms_aes.empty()) {
        row.source = "none";
        row.attack = "clean";
      } else {
        require_file(ms_aes);
        AdversarialSet set = load_adversarial(ms_aes);
        const int iter = ms_iter < 0 ? set.iters.back() : ms_iter;
        if (set.ids.size() < samples.size()) fail(ErrorKind::Shape, ms_aes + " holds fewer images than the val split");
        for (std::size_t i = 0; i < samples.size(); ++i) {
          if (set.ids[i] != samples[i].id) fail(ErrorKind::Shape, ms_aes + " was crafted on different samples");
        }
        const auto& at_iter = set.at_iter(iter);
        images.assign(at_iter.begin(), at_iter.begin() + static_cast<std::ptrdiff_t>(samples.size()));
        row.source = set.source;
        row.attack = std::string(to_string(set.cfg.kind));
        row.iter = iter;
      }
      emit_csv(ms.out, multiscale_eval(target, images, samples, cfg.scales, ms.workers, row));
    } else if (*report_cmd) {
      std::vector<MetricsRecord> rows;
      for (const auto& p : rep_in) {
        require_file(p);
        auto r = read_csv(p);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      std::set<std::string> digests;
      for (const auto& r : rows) digests.insert(r.config_digest);
      if (digests.size() > 1 && !rep_force) {
        fail(ErrorKind::Config, "inputs come from " + std::to_string(digests.size()) +
                                    " different config digests; pass --force to combine them");
      }
      const fs::path out(rep_out);
      const std::string text = out.extension() == ".svg" ? cli::svg_report(rows) : cli::markdown_report(rows);
      ensure_parent(out);
      std::ofstream f(out, std::ios::binary);
      if (!f) fail(ErrorKind::Io, "cannot write " + out.string());
      f << text;
    }
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[io]: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return kOther;
  }
  return kOk;
}
