#include "segx/metrics.hpp"

#include <cmath>
#include <limits>

namespace segx {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::add(const LabelMask& pred, const LabelMask& truth) {
  if (pred.batch() != truth.batch() || pred.height() != truth.height() || pred.width() != truth.width()) {
    fail(ErrorKind::Shape, "confusion: prediction and ground truth sizes differ");
  }
  const auto p = pred.data();
  const auto t = truth.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == LabelMask::kIgnore) continue;
    if (t[i] >= k_ || p[i] >= k_) fail(ErrorKind::Argument, "confusion: label out of range");
    ++counts_[t[i] * k_ + p[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) fail(ErrorKind::Shape, "confusion: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::vector<double> ConfusionMatrix::class_iou() const {
  std::vector<double> iou(k_, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < k_; ++c) {
    std::uint64_t tp = count(c, c), fp = 0, fn = 0;
    for (std::size_t o = 0; o < k_; ++o) {
      if (o == c) continue;
      fp += count(o, c);
      fn += count(c, o);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni > 0) iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return iou;
}

double ConfusionMatrix::miou() const {
  double total = 0.0;
  std::size_t present = 0;
  for (double v : class_iou()) {
    if (std::isnan(v)) continue;
    total += v;
    ++present;
  }
  if (present == 0) fail(ErrorKind::Numeric, "mIoU undefined: every class has an empty union");
  return 100.0 * total / static_cast<double>(present);
}

double ConfusionMatrix::pixel_accuracy() const {
  std::uint64_t hit = 0, all = 0;
  for (std::size_t t = 0; t < k_; ++t) {
    for (std::size_t p = 0; p < k_; ++p) {
      all += count(t, p);
      if (t == p) hit += count(t, p);
    }
  }
  if (all == 0) fail(ErrorKind::Numeric, "pixel accuracy undefined: no labelled pixels");
  return 100.0 * static_cast<double>(hit) / static_cast<double>(all);
}

double miou(const LabelMask& pred, const LabelMask& truth, std::size_t classes) {
  ConfusionMatrix cm(classes);
  cm.add(pred, truth);
  return cm.miou();
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) fail(ErrorKind::Shape, "argmax_rows expects [N,K], got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[i * k + c] > logits[i * k + best]) best = c;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) fail(ErrorKind::Shape, "accuracy: label count differs from batch size");
  if (pred.empty()) fail(ErrorKind::Argument, "accuracy of an empty batch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace segx
