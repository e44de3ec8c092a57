#pragma once

#include <span>

#include "segx/tape.hpp"
#include "segx/tensor.hpp"

namespace segx {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

/// Output extent of a convolution along one axis.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, const Conv2dOptions& opt);

/// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] -> [N,Cout,H',W'].
Var conv2d(Tape& tape, Var input, Var weight, Var bias, const Conv2dOptions& opt = {});

/// max(0, x). The subgradient at 0 is 0.
Var relu(Tape& tape, Var x);

/// Windowed maximum without padding. Gradient goes to the first maximum in
/// scan order.
Var max_pool2d(Tape& tape, Var x, int kernel, int stride);

/// Mean over the cells [floor(i*H/out), floor((i+1)*H/out)) of each axis.
Var adaptive_avg_pool2d(Tape& tape, Var x, int out_h, int out_w);

/// Half-pixel-center bilinear resampling with edge clamping:
///   src = (dst + 0.5) * (in / out) - 0.5, clamped to [0, in - 1].
/// Resizing to the same size returns the input unchanged.
Var bilinear_resize(Tape& tape, Var x, int out_h, int out_w);
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

/// Nearest-neighbour mask resize under the same half-pixel convention. Not
/// differentiable; kIgnore survives.
LabelMask nearest_resize_mask(const LabelMask& mask, int out_h, int out_w);

/// x [N,D], w [K,D], b [K] -> [N,K].
Var linear(Tape& tape, Var x, Var w, Var b);

Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
/// scale * x + shift.
Var scale_shift(Tape& tape, Var x, double scale, double shift);
Var sum(Tape& tape, Var x);

/// Concatenates rank-4 tensors along the channel axis.
Var concat_channels(Tape& tape, std::span<const Var> parts);

/// [N, ...] -> [N, prod(...)].
Var flatten(Tape& tape, Var x);

/// Mean cross-entropy over every non-ignored pixel. Logits are [N,K,H,W] with
/// labels (N,H,W), or [N,K] with labels (N,1,1). Throws Numeric when every
/// label is ignored.
Var softmax_ce_mean(Tape& tape, Var logits, const LabelMask& labels);

/// Channel-wise softmax of [N,K,H,W] or [N,K] logits.
Tensor softmax_channels(const Tensor& logits);

/// Per-pixel argmax over channels, lowest index on ties.
LabelMask argmax_channels(const Tensor& logits);

}  // namespace segx
