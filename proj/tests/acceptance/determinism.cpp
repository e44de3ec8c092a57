#include <fstream>

#include "criteria.hpp"
#include "segx/datagen.hpp"
#include "segx/digest.hpp"
#include "segx/evaluation.hpp"
#include "segx/trainer.hpp"

namespace fs = std::filesystem;

namespace segx::acceptance {
namespace {

std::string pipeline_csv(const std::vector<SegSample>& train_set, const std::vector<SegSample>& val, int workers,
                         const fs::path& ckpt_dir) {
  auto spec = [](const std::string& name, BackboneKind k, HeadKind h) {
    NetworkSpec s;
    s.name = name;
    s.input_h = s.input_w = 32;
    s.backbone.kind = k;
    s.backbone.stage_widths = {4, 8, 8};
    s.head.kind = h;
    s.head.width = 8;
    return s;
  };
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 8;
  tc.lr = 0.02;
  tc.seed = 3;
  std::vector<ModelRef> models;
  for (auto [name, k, h] : {std::tuple{"plain-fcn", BackboneKind::Plain, HeadKind::FCN},
                            std::tuple{"res-pyramid", BackboneKind::Residual, HeadKind::Pyramid},
                            std::tuple{"res-dilated", BackboneKind::Residual, HeadKind::Dilated}}) {
    TrainResult r = train(build(spec(name, k, h), 11), train_set, val, tc);
    save(r.net, ckpt_dir / (std::string(name) + ".segx"));
    models.push_back({name, load(ckpt_dir / (std::string(name) + ".segx"))});
  }
  const RecordContext ctx{3, "determinism"};
  AttackConfig fs_cfg;
  fs_cfg.iters = 6;
  fs_cfg.snapshot_iters = {1, 3};
  fs_cfg.seed = 3;
  AttackConfig ds_cfg = fs_cfg;
  ds_cfg.kind = AttackKind::DS_SEG;
  const std::vector<AttackConfig> cfgs{fs_cfg, ds_cfg};
  const std::vector<ModelRef> sources(models.begin(), models.begin() + 2);

  std::vector<MetricsRecord> rows = transfer_matrix(sources, models, val, cfgs, workers, ctx);
  const auto sweep = iteration_sweep(models[1], models, val, ds_cfg, workers, ctx);
  rows.insert(rows.end(), sweep.records.begin(), sweep.records.end());
  const std::vector<double> lambdas{0.0, 0.5};
  const auto ratio = ratio_sweep(models[0], models[2], val, ds_cfg, lambdas, workers, ctx);
  rows.insert(rows.end(), ratio.begin(), ratio.end());
  const AdversarialSet set = run_attack(models[0].net, models[0].id, val, ds_cfg, workers);
  save_adversarial(set, ckpt_dir / "aes.segx", ctx.config_digest);
  const AdversarialSet back = load_adversarial(ckpt_dir / "aes.segx");
  MetricsRecord tmpl{models[0].id, "", "ds", ds_cfg.iters, "1", "", 0.0, ctx.seed, ctx.config_digest};
  const std::vector<double> scales{0.5, 1.0};
  const auto ms = multiscale_eval(models[2], back.images.back(), val, scales, workers, tmpl);
  rows.insert(rows.end(), ms.begin(), ms.end());
  write_csv(ckpt_dir / "rows.csv", rows);
  return sha256_file(ckpt_dir / "rows.csv");
}

std::vector<std::string> tree_hashes(const fs::path& dir) {
  std::vector<std::string> out;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back(fs::relative(f, dir).string() + ":" + sha256_file(f));
  return out;
}

}  // namespace

Outcome determinism(const fs::path& scratch) {
  fs::remove_all(scratch);
  GenOptions g;
  g.seed = 5;
  g.n_train = 48;
  g.n_val = 10;
  g.height = g.width = 32;
  std::vector<std::vector<std::string>> data_hashes;
  std::vector<std::string> csv_hashes;
  for (int workers : {1, 4}) {
    const fs::path root = scratch / ("w" + std::to_string(workers));
    g.workers = workers;
    const DatasetManifest m = generate(g, root / "data");
    data_hashes.push_back(tree_hashes(root / "data"));
    fs::create_directories(root / "run");
    csv_hashes.push_back(pipeline_csv(load_split(m, "train"), load_split(m, "val"), workers, root / "run"));
  }
  const bool data_same = data_hashes[0] == data_hashes[1];
  const bool csv_same = csv_hashes[0] == csv_hashes[1];
  const bool ckpt_same = tree_hashes(scratch / "w1" / "run") == tree_hashes(scratch / "w4" / "run");
  Outcome o;
  o.pass = data_same && csv_same && ckpt_same;
  o.detail = "workers 1 vs 4: dataset files " + std::string(data_same ? "identical" : "DIFFER") + " (" +
             std::to_string(data_hashes[0].size()) + "), checkpoints+AEs+CSV " + (ckpt_same ? "identical" : "DIFFER") +
             ", csv sha " + csv_hashes[0].substr(0, 12) + (csv_same ? " == " : " != ") + csv_hashes[1].substr(0, 12);
  return o;
}

}  // namespace segx::acceptance
