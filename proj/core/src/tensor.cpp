#include "segx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace segx {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Argument: return "argument";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Config: return "config";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    fail(ErrorKind::Shape, "tensor data length " + std::to_string(data_.size()) +
                               " does not match shape " + to_string(shape_));
  }
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    fail(ErrorKind::Shape, "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::batch_item(std::size_t n) const {
  if (shape_.empty() || n >= shape_[0]) {
    fail(ErrorKind::Argument, "batch index out of range for " + to_string(shape_));
  }
  Shape item_shape = shape_;
  item_shape[0] = 1;
  const std::size_t stride = data_.size() / shape_[0];
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(n * stride),
                          data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * stride));
  return Tensor(std::move(item_shape), std::move(out));
}

Tensor Tensor::stack(std::span<const Tensor> items) {
  if (items.empty()) fail(ErrorKind::Argument, "cannot stack zero tensors");
  Shape shape = items.front().shape();
  std::size_t batch = 0;
  std::vector<double> data;
  for (const auto& item : items) {
    Shape s = item.shape();
    if (s.empty() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1, shape.end())) {
      fail(ErrorKind::Shape, "stack: mismatched item shape " + to_string(s));
    }
    batch += s[0];
    data.insert(data.end(), item.data_.begin(), item.data_.end());
  }
  shape[0] = batch;
  return Tensor(std::move(shape), std::move(data));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

LabelMask::LabelMask(std::size_t n, std::size_t h, std::size_t w, std::uint8_t fill)
    : n_(n), h_(h), w_(w), data_(n * h * w, fill) {}

LabelMask::LabelMask(std::size_t n, std::size_t h, std::size_t w, std::vector<std::uint8_t> data)
    : n_(n), h_(h), w_(w), data_(std::move(data)) {
  if (data_.size() != n * h * w) fail(ErrorKind::Shape, "label mask length mismatch");
}

LabelMask LabelMask::batch_item(std::size_t n) const {
  if (n >= n_) fail(ErrorKind::Argument, "mask batch index out of range");
  const std::size_t plane = h_ * w_;
  std::vector<std::uint8_t> out(data_.begin() + static_cast<std::ptrdiff_t>(n * plane),
                                data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * plane));
  return LabelMask(1, h_, w_, std::move(out));
}

LabelMask LabelMask::stack(std::span<const LabelMask> items) {
  if (items.empty()) fail(ErrorKind::Argument, "cannot stack zero masks");
  const std::size_t h = items.front().h_;
  const std::size_t w = items.front().w_;
  std::size_t n = 0;
  std::vector<std::uint8_t> data;
  for (const auto& m : items) {
    if (m.h_ != h || m.w_ != w) fail(ErrorKind::Shape, "stack: mismatched mask sizes");
    n += m.n_;
    data.insert(data.end(), m.data_.begin(), m.data_.end());
  }
  return LabelMask(n, h, w, std::move(data));
}

void LabelMask::validate(std::size_t num_classes) const {
  for (auto v : data_) {
    if (v != kIgnore && v >= num_classes) {
      fail(ErrorKind::Argument, "label " + std::to_string(v) + " out of range for " +
                                    std::to_string(num_classes) + " classes");
    }
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::Shape, "max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace segx
