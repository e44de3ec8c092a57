#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "segx/kv.hpp"
#include "segx/tape.hpp"
#include "segx/tensor.hpp"

namespace segx {

enum class BackboneKind { Plain, Residual };
enum class Downsample { MaxPool, StridedConv };
enum class HeadKind { Cls, FCN, Pyramid, Dilated };

std::string_view to_string(BackboneKind k);
std::string_view to_string(Downsample d);
std::string_view to_string(HeadKind k);
BackboneKind parse_backbone_kind(std::string_view s);
Downsample parse_downsample(std::string_view s);
HeadKind parse_head_kind(std::string_view s);

/// Feature trunk. Stage 0 runs at full resolution; every later stage starts
/// by halving the resolution, so the total downsampling is 2^(stages-1).
///
/// Plain (VGG-like) blocks are conv-relu-conv-relu. Residual (ResNet-like)
/// blocks are relu(x + conv(relu(conv(x)))) with the second conv
/// zero-initialised, so every residual block is the identity at init.
struct BackboneSpec {
  BackboneKind kind = BackboneKind::Plain;
  std::vector<int> stage_widths = {8, 16, 32};
  int blocks_per_stage = 1;
  Downsample downsample = Downsample::MaxPool;
  int in_channels = 3;

  int downsample_factor() const { return 1 << (static_cast<int>(stage_widths.size()) - 1); }

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

/// Output head.
///  - Cls: global average pool + linear, logits [N,K].
///  - FCN: 1x1 score convs on the last `fcn_fuse_stages` stages, fused
///    coarse-to-fine by upsample-and-add (3 stages ~ FCN8s, 2 ~ FCN16s). A
///    3x3 conv of `width` channels precedes the deepest score when width > 0.
///  - Pyramid: pyramid pooling over `pyramid_grids` concatenated with the
///    features, then 3x3 conv + 1x1 classifier.
///  - Dilated: parallel 3x3 convs at `dilation_rates` summed, then 1x1
///    classifier.
/// Segmentation heads end with a bilinear resize to the input resolution.
struct HeadSpec {
  HeadKind kind = HeadKind::FCN;
  int num_classes = 4;
  int width = 32;
  int fcn_fuse_stages = 3;
  std::vector<int> pyramid_grids = {1, 2, 4};
  std::vector<int> dilation_rates = {1, 2, 3};

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct NetworkSpec {
  std::string name = "net";
  BackboneSpec backbone;
  HeadSpec head;
  int input_h = 64;
  int input_w = 64;

  bool is_segmentation() const { return head.kind != HeadKind::Cls; }

  /// Throws Config on inconsistent specs.
  void validate() const;

  KeyValues to_kv() const;
  static NetworkSpec from_kv(const KeyValues& kv);

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// A network is its spec plus named parameters. Parameters are kept at
/// single-precision-representable values so checkpoints round-trip exactly.
class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, std::map<std::string, Tensor> params);

  const NetworkSpec& spec() const { return spec_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& params() { return params_; }
  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);

  std::size_t parameter_count() const;

  /// Rounds every parameter to the nearest float.
  void round_to_storage();

  friend bool operator==(const Network&, const Network&) = default;

 private:
  NetworkSpec spec_;
  std::map<std::string, Tensor> params_;
};

/// He-uniform initialisation from seed. Biases and residual-branch final
/// convs start at zero.
Network build(const NetworkSpec& spec, std::uint64_t seed);

/// Parameters placed on a tape for one forward pass.
class ParamBinding {
 public:
  ParamBinding(const Network& net, Tape& tape, bool requires_grad);
  Var operator[](const std::string& name) const;
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

/// Per-stage backbone outputs, shallowest first.
std::vector<Var> forward_backbone(const Network& net, const ParamBinding& p, Tape& tape, Var x);

/// [N,3,H,W] -> [N,K,H,W]. H and W must be multiples of the downsample factor.
Var forward_seg(const Network& net, const ParamBinding& p, Tape& tape, Var x);

/// [N,3,H,W] -> [N,K].
Var forward_cls(const Network& net, const ParamBinding& p, Tape& tape, Var x);

/// Dispatches on the head kind.
Var forward(const Network& net, const ParamBinding& p, Tape& tape, Var x);

/// Forward pass without gradients.
Tensor predict(const Network& net, const Tensor& x);

/// Context branch of a pyramid head for one grid size, before concatenation:
/// pool -> 1x1 conv -> relu -> upsample to the feature size.
Var pyramid_branch(const Network& net, const ParamBinding& p, Tape& tape, Var features, std::size_t index);

void save(const Network& net, const std::filesystem::path& path, const KeyValues& extra = {});
Network load(const std::filesystem::path& path);
/// Header of a checkpoint without its spec keys ("meta." entries).
KeyValues load_meta(const std::filesystem::path& path);

}  // namespace segx
