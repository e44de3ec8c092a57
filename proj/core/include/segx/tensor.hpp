#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segx/error.hpp"

namespace segx {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. Image-like data is NCHW with W fastest.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element access for rank-4 tensors.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  /// Same data under a new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  /// Slice of the leading (batch) axis.
  Tensor batch_item(std::size_t n) const;
  static Tensor stack(std::span<const Tensor> items);

  void fill(double value);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Per-pixel class indices, shape (N, H, W). kIgnore pixels are excluded
/// from losses and metrics.
class LabelMask {
 public:
  static constexpr std::uint8_t kIgnore = 255;

  LabelMask() = default;
  LabelMask(std::size_t n, std::size_t h, std::size_t w, std::uint8_t fill = 0);
  LabelMask(std::size_t n, std::size_t h, std::size_t w, std::vector<std::uint8_t> data);

  std::size_t batch() const noexcept { return n_; }
  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<std::uint8_t> data() noexcept { return data_; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }

  std::uint8_t& at(std::size_t n, std::size_t h, std::size_t w) {
    return data_[(n * h_ + h) * w_ + w];
  }
  std::uint8_t at(std::size_t n, std::size_t h, std::size_t w) const {
    return data_[(n * h_ + h) * w_ + w];
  }

  LabelMask batch_item(std::size_t n) const;
  static LabelMask stack(std::span<const LabelMask> items);

  /// Throws Argument if any entry is neither kIgnore nor below num_classes.
  void validate(std::size_t num_classes) const;

  friend bool operator==(const LabelMask&, const LabelMask&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& t);

}  // namespace segx
