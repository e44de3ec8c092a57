#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "segx/tensor.hpp"

namespace segx {

/// Dataset-level confusion counts, rows = ground truth, columns = prediction.
/// Ignored pixels are skipped. Merging is plain addition, so the result does
/// not depend on sample order.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0);

  std::size_t classes() const { return k_; }
  std::uint64_t count(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }

  void add(const LabelMask& pred, const LabelMask& truth);
  void merge(const ConfusionMatrix& other);

  /// IoU per class; NaN for classes with an empty union.
  std::vector<double> class_iou() const;
  /// Mean IoU over classes with a non-empty union, in percent. Throws
  /// Numeric when every union is empty.
  double miou() const;
  /// Pixel accuracy in percent.
  double pixel_accuracy() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::uint64_t> counts_;
};

double miou(const LabelMask& pred, const LabelMask& truth, std::size_t classes);

/// Percent of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace segx
