#include "segx/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace segx {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    fail(ErrorKind::Shape, std::string(op) + ": " + what + " must have rank " +
                               std::to_string(rank) + ", got " + to_string(t.shape()));
  }
}

// out[rows x cols] = w[rows x inner] * in[inner x cols] + bias (per row).
// Shared by conv2d and linear so both evaluate affine maps identically.
void affine_forward(const double* w, const double* in, const double* bias, std::size_t rows,
                    std::size_t inner, std::size_t cols, double* out) {
  MatMap(out, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)).noalias() =
      ConstMatMap(w, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(inner)) *
      ConstMatMap(in, static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += bias[r];
  }
}

// d_in[inner x cols] = w^T * d_out.
void affine_backward_input(const double* w, const double* d_out, std::size_t rows,
                           std::size_t inner, std::size_t cols, double* d_in) {
  MatMap(d_in, static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols)).noalias() =
      ConstMatMap(w, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(inner))
          .transpose() *
      ConstMatMap(d_out, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// d_w[rows x inner] += d_out[rows x cols] * in^T.
void affine_backward_weight(const double* d_out, const double* in, std::size_t rows,
                            std::size_t inner, std::size_t cols, double* d_w) {
  MatMap(d_w, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(inner)).noalias() +=
      ConstMatMap(d_out, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)) *
      ConstMatMap(in, static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols))
          .transpose();
}

struct ConvGeometry {
  std::size_t batch, in_c, in_h, in_w;
  std::size_t out_c, k_h, k_w;
  std::size_t out_h, out_w;
  std::ptrdiff_t stride, padding, dilation;

  std::size_t patch() const { return in_c * k_h * k_w; }
  std::size_t out_plane() const { return out_h * out_w; }
  std::size_t in_image() const { return in_c * in_h * in_w; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const double* xc = x + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.k_h; ++i) {
      for (std::size_t j = 0; j < g.k_w; ++j) {
        double* row = col + ((c * g.k_h + i) * g.k_w + j) * plane;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(i) * g.dilation - g.padding;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(j) * g.dilation - g.padding;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * g.stride + dy;
          double* dst = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(y) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox) * g.stride + dx;
            dst[ox] = (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.in_w))
                          ? 0.0
                          : src[static_cast<std::size_t>(xx)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    double* dxc = dx + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.k_h; ++i) {
      for (std::size_t j = 0; j < g.k_w; ++j) {
        const double* row = col + ((c * g.k_h + i) * g.k_w + j) * plane;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(i) * g.dilation - g.padding;
        const std::ptrdiff_t dxo = static_cast<std::ptrdiff_t>(j) * g.dilation - g.padding;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * g.stride + dy;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          double* dst = dxc + static_cast<std::size_t>(y) * g.in_w;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox) * g.stride + dxo;
            if (xx >= 0 && xx < static_cast<std::ptrdiff_t>(g.in_w)) {
              dst[static_cast<std::size_t>(xx)] += src[ox];
            }
          }
        }
      }
    }
  }
}

struct ResizeTap {
  std::size_t lo, hi;
  double frac;
};

std::vector<ResizeTap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<ResizeTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double last = static_cast<double>(in - 1);
  for (std::size_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(s));
    taps[d] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
  }
  return taps;
}

void check_resize_args(const Tensor& x, int out_h, int out_w) {
  require_rank(x, 4, "bilinear_resize", "input");
  if (out_h < 1 || out_w < 1) {
    fail(ErrorKind::Argument, "bilinear_resize: output size must be positive, got " +
                                  std::to_string(out_h) + "x" + std::to_string(out_w));
  }
}

Tensor resize_forward(const Tensor& x, std::size_t oh, std::size_t ow) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ty = resize_taps(h, oh);
  const auto tx = resize_taps(w, ow);
  Tensor out({n, c, oh, ow});
  double* o = out.raw();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = x.raw() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      const double fy = ty[y].frac;
      const double* r0 = src + ty[y].lo * w;
      const double* r1 = src + ty[y].hi * w;
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const double fx = tx[xo].frac;
        const double top = (1.0 - fx) * r0[tx[xo].lo] + fx * r0[tx[xo].hi];
        const double bottom = (1.0 - fx) * r1[tx[xo].lo] + fx * r1[tx[xo].hi];
        *o++ = (1.0 - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::Shape,
         std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void pass_through(Tape& t, Var to, const Tensor& g) {
  if (!t.requires_grad(to)) return;
  Tensor& dst = t.grad_buffer(to);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, const Conv2dOptions& opt) {
  const std::size_t padded = in + 2 * static_cast<std::size_t>(opt.padding);
  const std::size_t span = static_cast<std::size_t>(opt.dilation) * (kernel - 1) + 1;
  if (padded < span) {
    fail(ErrorKind::Shape, "conv2d: padded input extent " + std::to_string(padded) +
                               " smaller than dilated kernel extent " + std::to_string(span));
  }
  return (padded - span) / static_cast<std::size_t>(opt.stride) + 1;
}

Var conv2d(Tape& tape, Var input, Var weight, Var bias, const Conv2dOptions& opt) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(weight);
  const Tensor& b = tape.value(bias);
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0) {
    fail(ErrorKind::Argument, "conv2d: stride and dilation must be >= 1 and padding >= 0");
  }
  if (x.dim(1) != w.dim(1)) {
    fail(ErrorKind::Shape, "conv2d: input has " + std::to_string(x.dim(1)) +
                               " channels but weight expects " + std::to_string(w.dim(1)));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    fail(ErrorKind::Shape, "conv2d: bias shape " + to_string(b.shape()) +
                               " does not match " + std::to_string(w.dim(0)) + " output channels");
  }
  if (w.dim(2) < 1 || w.dim(3) < 1) fail(ErrorKind::Shape, "conv2d: empty kernel");

  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                 conv_output_size(x.dim(2), w.dim(2), opt), conv_output_size(x.dim(3), w.dim(3), opt),
                 opt.stride, opt.padding, opt.dilation};

  Tensor out({g.batch, g.out_c, g.out_h, g.out_w});
  std::vector<double> col(g.patch() * g.out_plane());
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(x.raw() + n * g.in_image(), g, col.data());
    affine_forward(w.raw(), col.data(), b.raw(), g.out_c, g.patch(), g.out_plane(),
                   out.raw() + n * g.out_c * g.out_plane());
  }

  return tape.record(std::move(out), {input, weight, bias},
                     [input, weight, bias, g](Tape& t, const Tensor& gout) {
    const bool need_x = t.requires_grad(input);
    const bool need_w = t.requires_grad(weight);
    const bool need_b = t.requires_grad(bias);
    const Tensor& xv = t.value(input);
    const Tensor& wv = t.value(weight);
    std::vector<double> col(g.patch() * g.out_plane());
    const std::size_t out_image = g.out_c * g.out_plane();
    for (std::size_t n = 0; n < g.batch; ++n) {
      const double* go = gout.raw() + n * out_image;
      if (need_b) {
        Tensor& db = t.grad_buffer(bias);
        for (std::size_t c = 0; c < g.out_c; ++c) {
          double s = 0.0;
          for (std::size_t p = 0; p < g.out_plane(); ++p) s += go[c * g.out_plane() + p];
          db[c] += s;
        }
      }
      if (need_w) {
        im2col(xv.raw() + n * g.in_image(), g, col.data());
        affine_backward_weight(go, col.data(), g.out_c, g.patch(), g.out_plane(),
                               t.grad_buffer(weight).raw());
      }
      if (need_x) {
        affine_backward_input(wv.raw(), go, g.out_c, g.patch(), g.out_plane(), col.data());
        col2im_add(col.data(), g, t.grad_buffer(input).raw() + n * g.in_image());
      }
    }
  });
}

Var relu(Tape& tape, Var x) {
  Tensor out = tape.value(x);
  for (double& v : out.data()) v = (v > 0.0 || std::isnan(v)) ? v : 0.0;
  return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(x);
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0) dx[i] += g[i];
    }
  });
}

Var max_pool2d(Tape& tape, Var x, int kernel, int stride) {
  const Tensor& in = tape.value(x);
  require_rank(in, 4, "max_pool2d", "input");
  if (kernel < 1 || stride < 1) fail(ErrorKind::Argument, "max_pool2d: kernel and stride must be >= 1");
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const auto k = static_cast<std::size_t>(kernel);
  const auto s = static_cast<std::size_t>(stride);
  if (k > h || k > w) {
    fail(ErrorKind::Shape, "max_pool2d: window " + std::to_string(k) + " larger than input " +
                               std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
  Tensor out({n, c, oh, ow});
  std::vector<std::uint32_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = in.raw() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo, ++o) {
        std::size_t best = (y * s) * w + xo * s;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = (y * s + i) * w + xo * s + j;
            if (src[idx] > src[best]) best = idx;
          }
        }
        out[o] = src[best];
        argmax[o] = static_cast<std::uint32_t>(p * h * w + best);
      }
    }
  }
  return tape.record(std::move(out), {x}, [x, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
  });
}

Var adaptive_avg_pool2d(Tape& tape, Var x, int out_h, int out_w) {
  const Tensor& in = tape.value(x);
  require_rank(in, 4, "adaptive_avg_pool2d", "input");
  if (out_h < 1 || out_w < 1) {
    fail(ErrorKind::Argument, "adaptive_avg_pool2d: output dims must be positive");
  }
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const auto oh = static_cast<std::size_t>(out_h), ow = static_cast<std::size_t>(out_w);
  if (oh > h || ow > w) {
    fail(ErrorKind::Argument, "adaptive_avg_pool2d: output " + std::to_string(oh) + "x" +
                                  std::to_string(ow) + " exceeds input " + std::to_string(h) +
                                  "x" + std::to_string(w));
  }
  Tensor out({n, c, oh, ow});
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = in.raw() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      const std::size_t y0 = i * h / oh, y1 = (i + 1) * h / oh;
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        const std::size_t x0 = j * w / ow, x1 = (j + 1) * w / ow;
        double s = 0.0;
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t xx = x0; xx < x1; ++xx) s += src[y * w + xx];
        }
        out[o] = s / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return tape.record(std::move(out), {x}, [x, n, c, h, w, oh, ow](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    std::size_t o = 0;
    for (std::size_t p = 0; p < n * c; ++p) {
      double* dst = dx.raw() + p * h * w;
      for (std::size_t i = 0; i < oh; ++i) {
        const std::size_t y0 = i * h / oh, y1 = (i + 1) * h / oh;
        for (std::size_t j = 0; j < ow; ++j, ++o) {
          const std::size_t x0 = j * w / ow, x1 = (j + 1) * w / ow;
          const double share = g[o] / static_cast<double>((y1 - y0) * (x1 - x0));
          for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t xx = x0; xx < x1; ++xx) dst[y * w + xx] += share;
          }
        }
      }
    }
  });
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  check_resize_args(x, out_h, out_w);
  if (x.dim(2) == static_cast<std::size_t>(out_h) && x.dim(3) == static_cast<std::size_t>(out_w)) {
    return x;
  }
  return resize_forward(x, static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w));
}

Var bilinear_resize(Tape& tape, Var x, int out_h, int out_w) {
  const Tensor& in = tape.value(x);
  check_resize_args(in, out_h, out_w);
  const auto oh = static_cast<std::size_t>(out_h), ow = static_cast<std::size_t>(out_w);
  if (in.dim(2) == oh && in.dim(3) == ow) {
    Tensor copy = in;
    return tape.record(std::move(copy), {x}, [x](Tape& t, const Tensor& g) { pass_through(t, x, g); });
  }
  const std::size_t nc = in.dim(0) * in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor out = resize_forward(in, oh, ow);
  return tape.record(std::move(out), {x}, [x, nc, h, w, oh, ow](Tape& t, const Tensor& g) {
    const auto ty = resize_taps(h, oh);
    const auto tx = resize_taps(w, ow);
    Tensor& dx = t.grad_buffer(x);
    const double* go = g.raw();
    for (std::size_t p = 0; p < nc; ++p) {
      double* dst = dx.raw() + p * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        const double fy = ty[y].frac;
        double* r0 = dst + ty[y].lo * w;
        double* r1 = dst + ty[y].hi * w;
        for (std::size_t xo = 0; xo < ow; ++xo) {
          const double fx = tx[xo].frac;
          const double v = *go++;
          r0[tx[xo].lo] += (1.0 - fy) * (1.0 - fx) * v;
          r0[tx[xo].hi] += (1.0 - fy) * fx * v;
          r1[tx[xo].lo] += fy * (1.0 - fx) * v;
          r1[tx[xo].hi] += fy * fx * v;
        }
      }
    }
  });
}

LabelMask nearest_resize_mask(const LabelMask& mask, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) fail(ErrorKind::Argument, "nearest_resize_mask: output size must be positive");
  const std::size_t h = mask.height(), w = mask.width();
  const auto oh = static_cast<std::size_t>(out_h), ow = static_cast<std::size_t>(out_w);
  if (oh == h && ow == w) return mask;
  auto source_index = [](std::size_t in, std::size_t out) {
    std::vector<std::size_t> idx(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
      const auto s = static_cast<std::size_t>(std::floor((static_cast<double>(d) + 0.5) * scale));
      idx[d] = std::min(s, in - 1);
    }
    return idx;
  };
  const auto sy = source_index(h, oh);
  const auto sx = source_index(w, ow);
  LabelMask out(mask.batch(), oh, ow);
  for (std::size_t n = 0; n < mask.batch(); ++n) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) out.at(n, y, x) = mask.at(n, sy[y], sx[x]);
    }
  }
  return out;
}

Var linear(Tape& tape, Var x, Var w, Var b) {
  const Tensor& in = tape.value(x);
  const Tensor& wt = tape.value(w);
  const Tensor& bt = tape.value(b);
  require_rank(in, 2, "linear", "input");
  require_rank(wt, 2, "linear", "weight");
  if (in.dim(1) != wt.dim(1)) {
    fail(ErrorKind::Shape, "linear: input dim " + std::to_string(in.dim(1)) +
                               " does not match weight dim " + std::to_string(wt.dim(1)));
  }
  if (bt.rank() != 1 || bt.dim(0) != wt.dim(0)) fail(ErrorKind::Shape, "linear: bias shape mismatch");
  const std::size_t n = in.dim(0), d = in.dim(1), k = wt.dim(0);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    affine_forward(wt.raw(), in.raw() + i * d, bt.raw(), k, d, 1, out.raw() + i * k);
  }
  return tape.record(std::move(out), {x, w, b}, [x, w, b, n, d, k](Tape& t, const Tensor& g) {
    std::vector<double> tmp(d);
    for (std::size_t i = 0; i < n; ++i) {
      const double* gi = g.raw() + i * k;
      if (t.requires_grad(b)) {
        Tensor& db = t.grad_buffer(b);
        for (std::size_t r = 0; r < k; ++r) db[r] += gi[r];
      }
      if (t.requires_grad(w)) {
        affine_backward_weight(gi, t.value(x).raw() + i * d, k, d, 1, t.grad_buffer(w).raw());
      }
      if (t.requires_grad(x)) {
        affine_backward_input(t.value(w).raw(), gi, k, d, 1, tmp.data());
        double* dx = t.grad_buffer(x).raw() + i * d;
        for (std::size_t j = 0; j < d; ++j) dx[j] += tmp[j];
      }
    }
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    pass_through(t, a, g);
    pass_through(t, b, g);
  });
}

Var mul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  check_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      const Tensor& other = t.value(b);
      Tensor& da = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * other[i];
    }
    if (t.requires_grad(b)) {
      const Tensor& other = t.value(a);
      Tensor& db = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * other[i];
    }
  });
}

Var scale_shift(Tape& tape, Var x, double scale, double shift) {
  Tensor out = tape.value(x);
  for (double& v : out.data()) v = scale * v + shift;
  return tape.record(std::move(out), {x}, [x, scale](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += scale * g[i];
  });
}

Var sum(Tape& tape, Var x) {
  double s = 0.0;
  for (double v : tape.value(x).data()) s += v;
  return tape.record(Tensor(Shape{}, s), {x}, [x](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (double& v : dx.data()) v += g[0];
  });
}

Var concat_channels(Tape& tape, std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::Argument, "concat_channels: nothing to concatenate");
  const Tensor& first = tape.value(parts.front());
  require_rank(first, 4, "concat_channels", "input");
  const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::size_t channels = 0;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    const Tensor& v = tape.value(p);
    require_rank(v, 4, "concat_channels", "input");
    if (v.dim(0) != n || v.dim(2) != h || v.dim(3) != w) {
      fail(ErrorKind::Shape, "concat_channels: part " + to_string(v.shape()) +
                                 " incompatible with " + to_string(first.shape()));
    }
    widths.push_back(v.dim(1));
    channels += v.dim(1);
  }
  const std::size_t plane = h * w;
  Tensor out({n, channels, h, w});
  for (std::size_t b = 0; b < n; ++b) {
    double* dst = out.raw() + b * channels * plane;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const double* src = tape.value(parts[i]).raw() + b * widths[i] * plane;
      dst = std::copy(src, src + widths[i] * plane, dst);
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), inputs, [inputs, widths, n, channels, plane](Tape& t, const Tensor& g) {
    for (std::size_t b = 0; b < n; ++b) {
      const double* src = g.raw() + b * channels * plane;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::size_t len = widths[i] * plane;
        if (t.requires_grad(inputs[i])) {
          double* dst = t.grad_buffer(inputs[i]).raw() + b * len;
          for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
        }
        src += len;
      }
    }
  });
}

Var flatten(Tape& tape, Var x) {
  const Tensor& in = tape.value(x);
  if (in.rank() < 1) fail(ErrorKind::Shape, "flatten: scalar input");
  const std::size_t n = in.dim(0);
  Tensor out = in.reshaped({n, n ? in.size() / n : 0});
  return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g) { pass_through(t, x, g); });
}

Var softmax_ce_mean(Tape& tape, Var logits, const LabelMask& labels) {
  const Tensor& z = tape.value(logits);
  std::size_t n = 0, k = 0, plane = 0;
  if (z.rank() == 4) {
    n = z.dim(0);
    k = z.dim(1);
    plane = z.dim(2) * z.dim(3);
    if (labels.batch() != n || labels.height() != z.dim(2) || labels.width() != z.dim(3)) {
      fail(ErrorKind::Shape, "softmax_ce_mean: labels do not match logits " + to_string(z.shape()));
    }
  } else if (z.rank() == 2) {
    n = z.dim(0);
    k = z.dim(1);
    plane = 1;
    if (labels.size() != n) fail(ErrorKind::Shape, "softmax_ce_mean: need one label per row");
  } else {
    fail(ErrorKind::Shape, "softmax_ce_mean: logits must be [N,K] or [N,K,H,W]");
  }
  labels.validate(k);

  const auto label = labels.data();
  std::size_t count = 0;
  double total = 0.0;
  std::vector<double> lse(n * plane, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    const double* zb = z.raw() + b * k * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      const std::uint8_t y = label[b * plane + p];
      if (y == LabelMask::kIgnore) continue;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) m = std::max(m, zb[c * plane + p]);
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += std::exp(zb[c * plane + p] - m);
      lse[b * plane + p] = m + std::log(s);
      total += lse[b * plane + p] - zb[y * plane + p];
      ++count;
    }
  }
  if (count == 0) fail(ErrorKind::Argument, "softmax_ce_mean: empty loss, every pixel is ignored");

  const double mean = total / static_cast<double>(count);
  return tape.record(Tensor(Shape{}, mean), {logits},
                     [logits, labels, lse = std::move(lse), n, k, plane, count](Tape& t, const Tensor& g) {
    const Tensor& zv = t.value(logits);
    Tensor& dz = t.grad_buffer(logits);
    const double scale = g[0] / static_cast<double>(count);
    const auto lab = labels.data();
    for (std::size_t b = 0; b < n; ++b) {
      const double* zb = zv.raw() + b * k * plane;
      double* db = dz.raw() + b * k * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const std::uint8_t y = lab[b * plane + p];
        if (y == LabelMask::kIgnore) continue;
        const double l = lse[b * plane + p];
        for (std::size_t c = 0; c < k; ++c) {
          const double prob = std::exp(zb[c * plane + p] - l);
          db[c * plane + p] += scale * (prob - (c == y ? 1.0 : 0.0));
        }
      }
    }
  });
}

Tensor softmax_channels(const Tensor& logits) {
  if (logits.rank() != 2 && logits.rank() != 4) {
    fail(ErrorKind::Shape, "softmax_channels: logits must be [N,K] or [N,K,H,W]");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const std::size_t plane = logits.rank() == 4 ? logits.dim(2) * logits.dim(3) : 1;
  Tensor out(logits.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.raw() + b * k * plane;
    double* o = out.raw() + b * k * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) m = std::max(m, z[c * plane + p]);
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += (o[c * plane + p] = std::exp(z[c * plane + p] - m));
      for (std::size_t c = 0; c < k; ++c) o[c * plane + p] /= s;
    }
  }
  return out;
}

LabelMask argmax_channels(const Tensor& logits) {
  if (logits.rank() != 2 && logits.rank() != 4) {
    fail(ErrorKind::Shape, "argmax_channels: logits must be [N,K] or [N,K,H,W]");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const std::size_t h = logits.rank() == 4 ? logits.dim(2) : 1;
  const std::size_t w = logits.rank() == 4 ? logits.dim(3) : 1;
  const std::size_t plane = h * w;
  LabelMask out(n, h, w);
  auto dst = out.data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.raw() + b * k * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (z[c * plane + p] > z[best * plane + p]) best = c;
      }
      dst[b * plane + p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace segx
