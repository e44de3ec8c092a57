#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "segx/tensor.hpp"

namespace segx::testing {

// Straight per-class pixel loops, no confusion matrix.
inline double naive_miou(const LabelMask& pred, const LabelMask& gt, std::size_t k) {
  double total = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.data()[i] == LabelMask::kIgnore) continue;
      const bool p = pred.data()[i] == c, g = gt.data()[i] == c;
      inter += (p && g) ? 1.0 : 0.0;
      uni += (p || g) ? 1.0 : 0.0;
    }
    if (uni > 0) {
      total += inter / uni;
      ++present;
    }
  }
  return 100.0 * total / present;
}

inline double naive_accuracy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  int hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.raw() + i * k;
    hits += static_cast<int>(std::max_element(row, row + k) - row) == labels[i] ? 1 : 0;
  }
  return 100.0 * hits / static_cast<double>(n);
}

// Kernel [O,C,k,k] spread onto a (d(k-1)+1)^2 grid with zeros between taps.
inline Tensor zero_dilated_kernel(const Tensor& w, int d) {
  const std::size_t k = w.dim(2);
  const std::size_t span = static_cast<std::size_t>(d) * (k - 1) + 1;
  Tensor spread({w.dim(0), w.dim(1), span, span});
  for (std::size_t o = 0; o < w.dim(0); ++o)
    for (std::size_t c = 0; c < w.dim(1); ++c)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) spread.at(o, c, i * d, j * d) = w.at(o, c, i, j);
  return spread;
}

}  // namespace segx::testing
