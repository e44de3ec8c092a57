#include "segx/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "segx/container.hpp"
#include "segx/metrics.hpp"
#include "segx/ops.hpp"
#include "segx/parallel.hpp"

namespace segx {
namespace {

Tensor as_batch(const Tensor& image) {
  if (image.rank() == 4) return image;
  Shape s{1};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  return image.reshaped(s);
}

LabelMask target_of(const Network& net, const SegSample& s) {
  if (net.spec().is_segmentation()) return s.mask;
  LabelMask m(1, 1, 1);
  m.at(0, 0, 0) = static_cast<std::uint8_t>(classification_label(s.mask, net.spec().head.num_classes + 1));
  return m;
}

void check_compatible(const Network& net, std::span<const SegSample> samples) {
  if (samples.empty()) fail(ErrorKind::Argument, "no samples to evaluate");
  const auto& spec = net.spec();
  const auto& img = samples.front().image;
  if (img.dim(img.rank() - 2) != static_cast<std::size_t>(spec.input_h) ||
      img.dim(img.rank() - 1) != static_cast<std::size_t>(spec.input_w)) {
    fail(ErrorKind::Shape, "model '" + spec.name + "' expects " + std::to_string(spec.input_h) + "x" +
                               std::to_string(spec.input_w) + " inputs, data is " + to_string(img.shape()));
  }
}

std::vector<int> recorded_iters(const AttackConfig& cfg) {
  std::vector<int> iters = cfg.snapshot_iters;
  if (iters.empty() || iters.back() != cfg.iters) iters.push_back(cfg.iters);
  return iters;
}

}  // namespace

std::string to_csv(std::span<const MetricsRecord> records) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.source << ',' << r.target << ',' << r.attack << ',' << r.iter << ',' << r.scale << ',' << r.metric << ','
        << format_double(r.value) << ',' << r.seed << ',' << r.config_digest << '\n';
  }
  return out.str();
}

std::vector<MetricsRecord> parse_csv(std::string_view text) {
  std::vector<MetricsRecord> out;
  bool header_seen = false;
  for (const auto& raw : split(text, '\n')) {
    const std::string line = !raw.empty() && raw.back() == '\r' ? raw.substr(0, raw.size() - 1) : raw;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kCsvHeader) fail(ErrorKind::Format, "unexpected CSV header: " + line);
      header_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 9) fail(ErrorKind::Format, "CSV row has " + std::to_string(f.size()) + " fields: " + line);
    MetricsRecord r;
    r.source = f[0];
    r.target = f[1];
    r.attack = f[2];
    r.scale = f[4];
    r.metric = f[5];
    r.config_digest = f[8];
    try {
      r.iter = std::stoi(f[3]);
      r.value = std::stod(f[6]);
      r.seed = std::stoull(f[7]);
    } catch (const std::exception&) {
      fail(ErrorKind::Format, "malformed CSV row: " + line);
    }
    out.push_back(std::move(r));
  }
  if (!header_seen) fail(ErrorKind::Format, "CSV has no header");
  return out;
}

void write_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << to_csv(records);
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<MetricsRecord> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

const std::vector<Tensor>& AdversarialSet::at_iter(int iter) const {
  for (std::size_t i = 0; i < iters.size(); ++i) {
    if (iters[i] == iter) return images[i];
  }
  fail(ErrorKind::Argument, "no adversarial examples recorded at iteration " + std::to_string(iter));
}

AdversarialSet run_attack(const Network& source, const std::string& source_id, std::span<const SegSample> samples,
                          const AttackConfig& cfg, int workers) {
  cfg.validate();
  check_compatible(source, samples);
  if (!source.spec().is_segmentation()) {
    if (cfg.kind != AttackKind::FGSM && cfg.kind != AttackKind::BIM_CLS) {
      fail(ErrorKind::Config, "classifier sources support fgsm and bim-cls only");
    }
  }
  AdversarialSet set;
  set.source = source_id;
  set.cfg = cfg;
  set.cfg.snapshot_iters = recorded_iters(cfg);
  set.iters = set.cfg.snapshot_iters;
  if (cfg.kind == AttackKind::FGSM) set.iters = set.cfg.snapshot_iters = {1};
  const std::size_t n = samples.size();
  std::vector<AttackResult> results(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const Tensor x = as_batch(samples[i].image);
    const LabelMask y = target_of(source, samples[i]);
    switch (cfg.kind) {
      case AttackKind::FGSM: {
        const int label = y.at(0, 0, 0);
        results[i] = fgsm_cls(source, x, std::span<const int>(&label, 1), cfg.epsilon);
        results[i].snapshots = {{1, results[i].adversarial}};
        break;
      }
      case AttackKind::BIM_CLS: {
        const int label = y.at(0, 0, 0);
        results[i] = bim_cls(source, x, std::span<const int>(&label, 1), set.cfg);
        break;
      }
      default: results[i] = attack_seg(source, x, y, set.cfg, samples[i].id);
    }
  });
  set.images.assign(set.iters.size(), std::vector<Tensor>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < set.iters.size(); ++k) set.images[k][i] = std::move(results[i].snapshots.at(k).image);
    set.ids.push_back(samples[i].id);
    set.losses.push_back(std::move(results[i].losses));
  }
  return set;
}

void save_adversarial(const AdversarialSet& set, const std::filesystem::path& path, const std::string& config_digest) {
  Container c;
  c.header = set.cfg.to_kv();
  c.header.set("kind", "adversarial");
  c.header.set("attack", std::string(to_string(set.cfg.kind)));
  c.header.set("source", set.source);
  c.header.set("config_digest", config_digest);
  c.header.set("count", static_cast<long long>(set.ids.size()));
  Record ids;
  ids.name = "ids";
  ids.dtype = DType::F64;
  ids.dims = {static_cast<std::uint32_t>(set.ids.size())};
  for (auto id : set.ids) ids.values.push_back(static_cast<double>(id));
  c.records.push_back(std::move(ids));
  for (std::size_t k = 0; k < set.iters.size(); ++k) {
    c.records.push_back(tensor_record("adv." + std::to_string(set.iters[k]), Tensor::stack(set.images[k]), DType::F64));
  }
  Record losses;
  losses.name = "losses";
  losses.dtype = DType::F64;
  const std::size_t t = set.losses.empty() ? 0 : set.losses.front().size();
  losses.dims = {static_cast<std::uint32_t>(set.losses.size()), static_cast<std::uint32_t>(t)};
  for (const auto& row : set.losses) losses.values.insert(losses.values.end(), row.begin(), row.end());
  c.records.push_back(std::move(losses));
  write_container(path, c);
}

AdversarialSet load_adversarial(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.get_or("kind", "") != "adversarial") fail(ErrorKind::Format, path.string() + " holds no adversarial examples");
  AdversarialSet set;
  KeyValues cfg_kv;
  for (const auto& [k, v] : c.header.entries()) {
    if (k == "epsilon" || k == "alpha" || k == "iters" || k == "lambda" || k == "kind" || k == "seed" || k == "snapshots") {
      cfg_kv.set(k, v);
    }
  }
  cfg_kv.set("kind", c.header.get("attack"));
  set.cfg = AttackConfig::from_kv(cfg_kv);
  set.source = c.header.get("source");
  set.iters = set.cfg.snapshot_iters;
  for (double v : c.find("ids").values) set.ids.push_back(static_cast<std::uint64_t>(v));
  for (int it : set.iters) {
    const Tensor all = record_tensor(c.find("adv." + std::to_string(it)));
    if (all.rank() != 4 || all.dim(0) != set.ids.size()) fail(ErrorKind::Format, "adversarial record has a bad shape");
    std::vector<Tensor> per;
    for (std::size_t i = 0; i < all.dim(0); ++i) per.push_back(as_batch(all.batch_item(i)));
    set.images.push_back(std::move(per));
  }
  const Record& losses = c.find("losses");
  if (losses.dims.size() == 2) {
    for (std::size_t i = 0; i < losses.dims[0]; ++i) {
      const auto begin = losses.values.begin() + static_cast<std::ptrdiff_t>(i * losses.dims[1]);
      set.losses.emplace_back(begin, begin + losses.dims[1]);
    }
  }
  return set;
}

std::string metric_name(const Network& net) { return net.spec().is_segmentation() ? "mIoU" : "accuracy"; }

double model_metric(const Network& net, std::span<const Tensor> images, std::span<const SegSample> samples,
                    int workers) {
  check_compatible(net, samples);
  if (!images.empty() && images.size() != samples.size()) {
    fail(ErrorKind::Shape, "image count differs from sample count");
  }
  const std::size_t n = samples.size();
  if (net.spec().is_segmentation()) {
    std::vector<ConfusionMatrix> parts(n);
    parallel_for(n, workers, [&](std::size_t i) {
      const Tensor x = as_batch(images.empty() ? samples[i].image : images[i]);
      parts[i] = ConfusionMatrix(static_cast<std::size_t>(net.spec().head.num_classes));
      parts[i].add(argmax_channels(predict(net, x)), samples[i].mask);
    });
    ConfusionMatrix total(static_cast<std::size_t>(net.spec().head.num_classes));
    for (const auto& p : parts) total.merge(p);
    return total.miou();
  }
  std::vector<int> hits(n, 0);
  parallel_for(n, workers, [&](std::size_t i) {
    const Tensor x = as_batch(images.empty() ? samples[i].image : images[i]);
    hits[i] = argmax_rows(predict(net, x))[0] == target_of(net, samples[i]).at(0, 0, 0) ? 1 : 0;
  });
  double total = 0.0;
  for (int h : hits) total += h;
  return 100.0 * total / static_cast<double>(n);
}

std::vector<MetricsRecord> transfer_matrix(std::span<const ModelRef> sources, std::span<const ModelRef> targets,
                                           std::span<const SegSample> samples, std::span<const AttackConfig> cfgs,
                                           int workers, const RecordContext& ctx) {
  std::vector<MetricsRecord> out;
  for (const auto& t : targets) {
    out.push_back({"none", t.id, "clean", 0, "1", metric_name(t.net), model_metric(t.net, {}, samples, workers),
                   ctx.seed, ctx.config_digest});
  }
  for (const auto& s : sources) {
    for (const auto& t : targets) {
      if (t.net.spec().head.num_classes != s.net.spec().head.num_classes) {
        fail(ErrorKind::Shape, "models '" + s.id + "' and '" + t.id + "' disagree on the class count");
      }
    }
    for (const auto& cfg : cfgs) {
      const AdversarialSet set = run_attack(s.net, s.id, samples, cfg, workers);
      for (std::size_t k = 0; k < set.iters.size(); ++k) {
        for (const auto& t : targets) {
          out.push_back({s.id, t.id, std::string(to_string(cfg.kind)), set.iters[k], "1", metric_name(t.net),
                         model_metric(t.net, set.images[k], samples, workers), ctx.seed, ctx.config_digest});
        }
      }
    }
  }
  return out;
}

OverfitSummary summarize_curve(const std::string& target, std::span<const std::pair<int, double>> curve,
                               double delta) {
  if (curve.empty()) fail(ErrorKind::Argument, "empty sweep curve");
  OverfitSummary s;
  s.target = target;
  s.min_iter = curve.front().first;
  s.min_value = curve.front().second;
  for (const auto& [iter, value] : curve) {
    if (value < s.min_value) {
      s.min_value = value;
      s.min_iter = iter;
    }
  }
  s.final_value = curve.back().second;
  s.overfitting = s.final_value > s.min_value + delta;
  return s;
}

SweepResult iteration_sweep(const ModelRef& source, std::span<const ModelRef> targets,
                            std::span<const SegSample> samples, const AttackConfig& cfg, int workers,
                            const RecordContext& ctx, double delta) {
  const AdversarialSet set = run_attack(source.net, source.id, samples, cfg, workers);
  SweepResult result;
  for (const auto& t : targets) {
    std::vector<std::pair<int, double>> curve;
    for (std::size_t k = 0; k < set.iters.size(); ++k) {
      const double v = model_metric(t.net, set.images[k], samples, workers);
      curve.emplace_back(set.iters[k], v);
      result.records.push_back({source.id, t.id, std::string(to_string(cfg.kind)), set.iters[k], "1",
                                metric_name(t.net), v, ctx.seed, ctx.config_digest});
    }
    result.summaries.push_back(summarize_curve(t.id, curve, delta));
  }
  return result;
}

std::vector<MetricsRecord> ratio_sweep(const ModelRef& source, const ModelRef& target,
                                       std::span<const SegSample> samples, const AttackConfig& cfg,
                                       std::span<const double> lambdas, int workers, const RecordContext& ctx) {
  bool has_zero = false;
  for (double l : lambdas) has_zero = has_zero || l == 0.0;
  if (!has_zero) fail(ErrorKind::Config, "ratio sweep needs lambda 0 among the ratios");
  std::vector<MetricsRecord> out;
  for (double l : lambdas) {
    AttackConfig c = cfg;
    c.kind = AttackKind::DS_SEG;
    c.lambda = l;
    c.snapshot_iters.clear();
    const AdversarialSet set = run_attack(source.net, source.id, samples, c, workers);
    out.push_back({source.id, target.id, "ds@" + format_double(l), c.iters, "1", metric_name(target.net),
                   model_metric(target.net, set.images.back(), samples, workers), ctx.seed, ctx.config_digest});
  }
  return out;
}

Tensor scaled_logits(const Network& net, const Tensor& x, double scale) {
  if (!(scale > 0.0)) fail(ErrorKind::Argument, "evaluation scale must be positive");
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  const int m = net.spec().backbone.downsample_factor();
  if (std::round(scale * h) < m || std::round(scale * w) < m) {
    fail(ErrorKind::Shape, "scale " + format_double(scale) + " shrinks the input below the backbone multiple " +
                               std::to_string(m));
  }
  const int sh = scaled_extent(h, scale, m), sw = scaled_extent(w, scale, m);
  return bilinear_resize(predict(net, bilinear_resize(x, sh, sw)), h, w);
}

std::vector<MetricsRecord> multiscale_eval(const ModelRef& target, std::span<const Tensor> images,
                                           std::span<const SegSample> samples, std::span<const double> scales,
                                           int workers, const MetricsRecord& row_template) {
  if (!target.net.spec().is_segmentation()) fail(ErrorKind::Argument, "multi-scale evaluation needs a segmentation model");
  if (scales.empty()) fail(ErrorKind::Argument, "no evaluation scales");
  check_compatible(target.net, samples);
  if (!images.empty() && images.size() != samples.size()) fail(ErrorKind::Shape, "image count differs from sample count");
  const auto k = static_cast<std::size_t>(target.net.spec().head.num_classes);
  const std::size_t n = samples.size(), ns = scales.size();
  std::vector<std::vector<ConfusionMatrix>> parts(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const Tensor x = as_batch(images.empty() ? samples[i].image : images[i]);
    parts[i].assign(ns + 1, ConfusionMatrix(k));
    Tensor prob_sum;
    for (std::size_t s = 0; s < ns; ++s) {
      const Tensor logits = scaled_logits(target.net, x, scales[s]);
      parts[i][s].add(argmax_channels(logits), samples[i].mask);
      const Tensor prob = softmax_channels(logits);
      if (s == 0) {
        prob_sum = prob;
      } else {
        for (std::size_t j = 0; j < prob.size(); ++j) prob_sum[j] += prob[j];
      }
    }
    parts[i][ns].add(argmax_channels(prob_sum), samples[i].mask);
  });
  std::vector<MetricsRecord> out;
  for (std::size_t s = 0; s <= ns; ++s) {
    ConfusionMatrix total(k);
    for (const auto& p : parts) total.merge(p[s]);
    MetricsRecord r = row_template;
    r.target = target.id;
    r.scale = s < ns ? format_double(scales[s]) : "multi";
    r.metric = "mIoU";
    r.value = total.miou();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace segx
