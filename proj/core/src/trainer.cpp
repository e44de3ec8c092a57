#include "segx/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "segx/metrics.hpp"
#include "segx/ops.hpp"
#include "segx/rng.hpp"
#include "segx/tape.hpp"

namespace segx {
namespace {

constexpr std::size_t kEvalChunk = 32;

std::vector<std::size_t> shuffled(std::size_t n, Rng rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

std::vector<int> labels_of(const LabelMask& targets) {
  return std::vector<int>(targets.data().begin(), targets.data().end());
}

// Running loss and metric over a sequence of batches.
class Tally {
 public:
  explicit Tally(const Network& net) : seg_(net.spec().is_segmentation()), cm_(seg_ ? net.spec().head.num_classes : 0) {}

  void add(const Tensor& logits, const LabelMask& targets, double loss) {
    const std::size_t n = targets.batch();
    loss_sum_ += loss * static_cast<double>(n);
    count_ += n;
    if (seg_) {
      cm_.add(argmax_channels(logits), targets);
    } else {
      const auto pred = argmax_rows(logits);
      for (std::size_t i = 0; i < n; ++i) hits_ += pred[i] == targets.data()[i] ? 1 : 0;
    }
  }

  TrainLogRow row(int epoch, std::string split) const {
    TrainLogRow r;
    r.epoch = epoch;
    r.split = std::move(split);
    r.loss = loss_sum_ / static_cast<double>(count_);
    r.metric = seg_ ? cm_.miou() : 100.0 * static_cast<double>(hits_) / static_cast<double>(count_);
    return r;
  }

 private:
  bool seg_;
  ConfusionMatrix cm_;
  double loss_sum_ = 0.0;
  std::size_t count_ = 0;
  std::size_t hits_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) fail(ErrorKind::Config, "train: epochs must be >= 0");
  if (batch < 1) fail(ErrorKind::Config, "train: batch must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorKind::Config, "train: lr must be a finite value >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::Config, "train: need 0 <= momentum < 1");
  if (adversarial) {
    AttackConfig a = attack;
    a.iters = kAdversarialIters;
    a.snapshot_iters.clear();
    a.validate(true);
  }
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv.set("epochs", epochs);
  kv.set("batch", batch);
  kv.set("lr", lr);
  kv.set("momentum", momentum);
  kv.set("seed", static_cast<unsigned long long>(seed));
  kv.set("adversarial", adversarial ? "true" : "false");
  if (adversarial) {
    kv.set("adv.epsilon", attack.epsilon);
    kv.set("adv.alpha", attack.alpha);
  }
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  kv.require_known({"epochs", "batch", "lr", "momentum", "seed", "adversarial", "adv.epsilon", "adv.alpha"});
  TrainConfig c;
  c.epochs = static_cast<int>(kv.get_int_or("epochs", c.epochs));
  c.batch = static_cast<int>(kv.get_int_or("batch", c.batch));
  c.lr = kv.get_double_or("lr", c.lr);
  c.momentum = kv.get_double_or("momentum", c.momentum);
  if (kv.contains("seed")) c.seed = kv.get_u64("seed");
  c.adversarial = kv.get_bool_or("adversarial", false);
  c.attack.epsilon = kv.get_double_or("adv.epsilon", c.attack.epsilon);
  c.attack.alpha = kv.get_double_or("adv.alpha", c.attack.alpha);
  return c;
}

Batch make_batch(const Network& net, std::span<const SegSample> samples, std::span<const std::size_t> order) {
  const std::size_t n = order.empty() ? samples.size() : order.size();
  if (n == 0) fail(ErrorKind::Argument, "empty batch");
  std::vector<Tensor> images;
  images.reserve(n);
  const bool seg = net.spec().is_segmentation();
  const SegSample& first = samples[order.empty() ? 0 : order[0]];
  LabelMask targets = seg ? LabelMask(n, first.mask.height(), first.mask.width()) : LabelMask(n, 1, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const SegSample& s = samples[order.empty() ? i : order[i]];
    images.push_back(s.image.rank() == 4 ? s.image : s.image.reshaped({1, s.image.dim(0), s.image.dim(1), s.image.dim(2)}));
    if (seg) {
      if (s.mask.height() != targets.height() || s.mask.width() != targets.width()) {
        fail(ErrorKind::Shape, "batch samples differ in size");
      }
      std::copy(s.mask.data().begin(), s.mask.data().end(), targets.data().begin() + static_cast<std::ptrdiff_t>(i * s.mask.size()));
    } else {
      targets.at(i, 0, 0) = static_cast<std::uint8_t>(classification_label(s.mask, net.spec().head.num_classes + 1));
    }
  }
  return Batch{Tensor::stack(images), std::move(targets)};
}

TrainLogRow evaluate(const Network& net, std::span<const SegSample> samples, int epoch, const std::string& split) {
  if (samples.empty()) fail(ErrorKind::Argument, "cannot evaluate on an empty split");
  Tally tally(net);
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    const auto chunk = samples.subspan(start, std::min(kEvalChunk, samples.size() - start));
    const Batch b = make_batch(net, chunk);
    Tape tape;
    const ParamBinding p(net, tape, false);
    const Var logits = forward(net, p, tape, tape.constant(b.images));
    const Var loss = softmax_ce_mean(tape, logits, b.targets);
    tally.add(tape.value(logits), b.targets, tape.value(loss)[0]);
  }
  return tally.row(epoch, split);
}

TrainResult train(Network net, std::span<const SegSample> train_set, std::span<const SegSample> val_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) fail(ErrorKind::Argument, "training set is empty");
  TrainResult result;
  if (!val_set.empty()) result.log.push_back(evaluate(net, val_set, 0, "val"));

  std::map<std::string, Tensor> velocity;
  for (const auto& [name, t] : net.params()) velocity.emplace(name, Tensor(t.shape()));

  AttackConfig inner = cfg.attack;
  inner.iters = TrainConfig::kAdversarialIters;
  inner.snapshot_iters.clear();
  const bool seg = net.spec().is_segmentation();
  inner.kind = seg ? AttackKind::BIM_SEG : AttackKind::BIM_CLS;

  const std::size_t batch = static_cast<std::size_t>(cfg.batch);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled(train_set.size(), make_stream(cfg.seed, static_cast<std::uint64_t>(epoch)));
    Tally tally(net);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
      Batch b = make_batch(net, train_set, idx);
      if (cfg.adversarial) {
        b.images = seg ? bim_seg(net, b.images, b.targets, inner).adversarial
                       : bim_cls(net, b.images, labels_of(b.targets), inner).adversarial;
      }
      Tape tape;
      const ParamBinding p(net, tape, true);
      const Var logits = forward(net, p, tape, tape.constant(b.images));
      const Var loss = softmax_ce_mean(tape, logits, b.targets);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        fail(ErrorKind::Numeric, "training diverged: loss is " + format_double(value) + " at epoch " +
                                     std::to_string(epoch) + ", batch " + std::to_string(start / batch));
      }
      result.batch_losses.push_back(value);
      tally.add(tape.value(logits), b.targets, value);
      tape.backward(loss);
      for (auto& [name, param] : net.params()) {
        const Tensor g = tape.grad(p[name]);
        Tensor& v = velocity.at(name);
        for (std::size_t i = 0; i < param.size(); ++i) {
          v[i] = cfg.momentum * v[i] + g[i];
          param[i] -= cfg.lr * v[i];
        }
      }
    }
    result.log.push_back(tally.row(epoch, "train"));
    if (!val_set.empty()) result.log.push_back(evaluate(net, val_set, epoch, "val"));
  }
  net.round_to_storage();
  result.net = std::move(net);
  return result;
}

TrainResult adv_train(Network net, std::span<const SegSample> train_set, std::span<const SegSample> val_set,
                      TrainConfig cfg) {
  cfg.adversarial = true;
  return train(std::move(net), train_set, val_set, cfg);
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log,
                     const std::string& config_digest) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "# config_digest=" << config_digest << "\n";
  out << "epoch,split,loss,metric\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.split << ',' << format_double(r.loss) << ',' << format_double(r.metric) << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace segx
