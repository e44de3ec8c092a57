#include "segx/models.hpp"

#include <algorithm>
#include <cmath>

#include "segx/container.hpp"
#include "segx/ops.hpp"
#include "segx/rng.hpp"

namespace segx {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct ParamShape {
  std::string name;
  Shape shape;
  bool zero_init = false;
};

class LayoutBuilder {
 public:
  void conv(const std::string& prefix, std::size_t out_c, std::size_t in_c, std::size_t k, bool zero = false) {
    shapes_.push_back({prefix + ".w", {out_c, in_c, k, k}, zero});
    shapes_.push_back({prefix + ".b", {out_c}, true});
  }
  void linear(const std::string& prefix, std::size_t out_d, std::size_t in_d) {
    shapes_.push_back({prefix + ".w", {out_d, in_d}, false});
    shapes_.push_back({prefix + ".b", {out_d}, true});
  }
  std::vector<ParamShape> take() { return std::move(shapes_); }

 private:
  std::vector<ParamShape> shapes_;
};

constexpr double kInputScale = 4.0;

std::string stage_prefix(std::size_t s) { return "backbone.s" + std::to_string(s); }

std::size_t branch_width(const NetworkSpec& spec) {
  const auto c = static_cast<std::size_t>(spec.backbone.stage_widths.back());
  return std::max<std::size_t>(4, c / spec.head.pyramid_grids.size());
}

std::vector<ParamShape> parameter_layout(const NetworkSpec& spec) {
  LayoutBuilder b;
  const auto& bb = spec.backbone;
  const auto k = static_cast<std::size_t>(spec.head.num_classes);
  std::size_t in_c = static_cast<std::size_t>(bb.in_channels);
  for (std::size_t s = 0; s < bb.stage_widths.size(); ++s) {
    const auto w = static_cast<std::size_t>(bb.stage_widths[s]);
    b.conv(stage_prefix(s) + ".in", w, in_c, 3);
    for (int j = 0; j < bb.blocks_per_stage; ++j) {
      const std::string blk = stage_prefix(s) + ".b" + std::to_string(j);
      b.conv(blk + ".c1", w, w, 3);
      b.conv(blk + ".c2", w, w, 3, bb.kind == BackboneKind::Residual);
    }
    in_c = w;
  }
  const std::size_t feat = in_c;
  const auto hw = static_cast<std::size_t>(spec.head.width);
  switch (spec.head.kind) {
    case HeadKind::Cls:
      b.linear("head.linear", k, feat);
      break;
    case HeadKind::FCN: {
      const std::size_t stages = bb.stage_widths.size();
      const auto fuse = static_cast<std::size_t>(spec.head.fcn_fuse_stages);
      if (hw > 0) b.conv("head.fcn.hidden", hw, feat, 3);
      for (std::size_t s = stages - fuse; s < stages; ++s) {
        const std::size_t src = (s == stages - 1 && hw > 0) ? hw : static_cast<std::size_t>(bb.stage_widths[s]);
        b.conv("head.fcn.score" + std::to_string(s), k, src, 1);
      }
      break;
    }
    case HeadKind::Pyramid: {
      const std::size_t bw = branch_width(spec);
      for (std::size_t i = 0; i < spec.head.pyramid_grids.size(); ++i) {
        b.conv("head.psp.branch" + std::to_string(i), bw, feat, 1);
      }
      b.conv("head.psp.fuse", hw, feat + bw * spec.head.pyramid_grids.size(), 3);
      b.conv("head.psp.cls", k, hw, 1);
      break;
    }
    case HeadKind::Dilated:
      for (std::size_t i = 0; i < spec.head.dilation_rates.size(); ++i) {
        b.conv("head.dil.rate" + std::to_string(i), hw, feat, 3);
      }
      b.conv("head.dil.cls", k, hw, 1);
      break;
  }
  return b.take();
}

Var conv_named(Tape& tape, const ParamBinding& p, const std::string& prefix, Var x, Conv2dOptions opt = {}) {
  return conv2d(tape, x, p[prefix + ".w"], p[prefix + ".b"], opt);
}

void check_input(const Network& net, const Tensor& x, bool need_divisible) {
  const auto& spec = net.spec();
  if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(spec.backbone.in_channels)) {
    fail(ErrorKind::Shape, "network '" + spec.name + "' expects [N," + std::to_string(spec.backbone.in_channels) +
                               ",H,W] input, got " + to_string(x.shape()));
  }
  const auto m = static_cast<std::size_t>(spec.backbone.downsample_factor());
  if (need_divisible && (x.dim(2) % m != 0 || x.dim(3) % m != 0)) {
    fail(ErrorKind::Shape, "network '" + spec.name + "': input size " + std::to_string(x.dim(2)) + "x" +
                               std::to_string(x.dim(3)) + " must be a multiple of " + std::to_string(m));
  }
}

}  // namespace

std::string_view to_string(BackboneKind k) { return k == BackboneKind::Plain ? "plain" : "residual"; }
std::string_view to_string(Downsample d) { return d == Downsample::MaxPool ? "maxpool" : "strided"; }
std::string_view to_string(HeadKind k) {
  switch (k) {
    case HeadKind::Cls: return "cls";
    case HeadKind::FCN: return "fcn";
    case HeadKind::Pyramid: return "pyramid";
    case HeadKind::Dilated: return "dilated";
  }
  return "?";
}

BackboneKind parse_backbone_kind(std::string_view s) {
  if (s == "plain") return BackboneKind::Plain;
  if (s == "residual") return BackboneKind::Residual;
  fail(ErrorKind::Config, "unknown backbone kind '" + std::string(s) + "'");
}

Downsample parse_downsample(std::string_view s) {
  if (s == "maxpool") return Downsample::MaxPool;
  if (s == "strided") return Downsample::StridedConv;
  fail(ErrorKind::Config, "unknown downsample mode '" + std::string(s) + "'");
}

HeadKind parse_head_kind(std::string_view s) {
  if (s == "cls") return HeadKind::Cls;
  if (s == "fcn") return HeadKind::FCN;
  if (s == "pyramid") return HeadKind::Pyramid;
  if (s == "dilated") return HeadKind::Dilated;
  fail(ErrorKind::Config, "unknown head kind '" + std::string(s) + "'");
}

void NetworkSpec::validate() const {
  auto bad = [this](const std::string& why) { fail(ErrorKind::Config, "network '" + name + "': " + why); };
  const auto& bb = backbone;
  if (bb.stage_widths.empty()) bad("backbone needs at least one stage");
  if (bb.stage_widths.size() > 8) bad("too many backbone stages");
  for (int w : bb.stage_widths) {
    if (w < 1 || w > 1024) bad("stage width " + std::to_string(w) + " out of range [1,1024]");
  }
  if (bb.in_channels < 1) bad("input channels must be positive");
  if (bb.blocks_per_stage < 0) bad("blocks_per_stage must be >= 0");
  if (bb.kind == BackboneKind::Residual && bb.blocks_per_stage < 1) bad("residual backbone needs >= 1 block per stage");
  if (input_h < 1 || input_w < 1) bad("input size must be positive");
  const int factor = bb.downsample_factor();
  if (factor > 1 && factor > std::min(input_h, input_w) / 4) {
    bad("downsample factor " + std::to_string(factor) + " exceeds min(H,W)/4 for " + std::to_string(input_h) +
        "x" + std::to_string(input_w) + " input");
  }
  if (input_h % factor != 0 || input_w % factor != 0) bad("input size must be a multiple of " + std::to_string(factor));
  if (head.num_classes < 2 || head.num_classes > 254) bad("num_classes must be in [2,254]");
  switch (head.kind) {
    case HeadKind::Cls: break;
    case HeadKind::FCN:
      if (head.fcn_fuse_stages < 1 || head.fcn_fuse_stages > static_cast<int>(bb.stage_widths.size())) {
        bad("fcn_fuse_stages must be in [1, number of stages]");
      }
      if (head.width < 0) bad("head width must be >= 0");
      break;
    case HeadKind::Pyramid:
      if (head.pyramid_grids.empty()) bad("pyramid head needs at least one grid");
      for (int g : head.pyramid_grids) {
        if (g < 1) bad("pyramid grid sizes must be >= 1");
      }
      if (head.width < 1) bad("pyramid head width must be >= 1");
      break;
    case HeadKind::Dilated:
      if (head.dilation_rates.empty()) bad("dilated head needs at least one rate");
      for (int r : head.dilation_rates) {
        if (r < 1) bad("dilation rates must be >= 1");
      }
      if (head.width < 1) bad("dilated head width must be >= 1");
      break;
  }
}

KeyValues NetworkSpec::to_kv() const {
  KeyValues kv;
  kv.set("name", name);
  kv.set("input.h", input_h);
  kv.set("input.w", input_w);
  kv.set("backbone.kind", std::string(to_string(backbone.kind)));
  kv.set("backbone.widths", join_ints(backbone.stage_widths));
  kv.set("backbone.blocks", backbone.blocks_per_stage);
  kv.set("backbone.downsample", std::string(to_string(backbone.downsample)));
  kv.set("backbone.in_channels", backbone.in_channels);
  kv.set("head.kind", std::string(to_string(head.kind)));
  kv.set("head.classes", head.num_classes);
  kv.set("head.width", head.width);
  kv.set("head.fcn_fuse", head.fcn_fuse_stages);
  kv.set("head.grids", join_ints(head.pyramid_grids));
  kv.set("head.rates", join_ints(head.dilation_rates));
  return kv;
}

NetworkSpec NetworkSpec::from_kv(const KeyValues& kv) {
  NetworkSpec s;
  s.name = kv.get("name");
  s.input_h = static_cast<int>(kv.get_int("input.h"));
  s.input_w = static_cast<int>(kv.get_int("input.w"));
  s.backbone.kind = parse_backbone_kind(kv.get("backbone.kind"));
  s.backbone.stage_widths = kv.get_int_list("backbone.widths");
  s.backbone.blocks_per_stage = static_cast<int>(kv.get_int("backbone.blocks"));
  s.backbone.downsample = parse_downsample(kv.get("backbone.downsample"));
  s.backbone.in_channels = static_cast<int>(kv.get_int("backbone.in_channels"));
  s.head.kind = parse_head_kind(kv.get("head.kind"));
  s.head.num_classes = static_cast<int>(kv.get_int("head.classes"));
  s.head.width = static_cast<int>(kv.get_int("head.width"));
  s.head.fcn_fuse_stages = static_cast<int>(kv.get_int("head.fcn_fuse"));
  s.head.pyramid_grids = kv.get_int_list("head.grids");
  s.head.dilation_rates = kv.get_int_list("head.rates");
  s.validate();
  return s;
}

Network::Network(NetworkSpec spec, std::map<std::string, Tensor> params)
    : spec_(std::move(spec)), params_(std::move(params)) {}

const Tensor& Network::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorKind::Argument, "network '" + spec_.name + "' has no parameter " + name);
  return it->second;
}

Tensor& Network::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorKind::Argument, "network '" + spec_.name + "' has no parameter " + name);
  return it->second;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void Network::round_to_storage() {
  for (auto& [name, t] : params_) {
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  }
}

Network build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::map<std::string, Tensor> params;
  for (auto& ps : parameter_layout(spec)) {
    Tensor t(ps.shape, 0.0);
    if (!ps.zero_init) {
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < ps.shape.size(); ++i) fan_in *= ps.shape[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      Rng rng = make_stream(seed, fnv1a(ps.name));
      for (double& v : t.data()) v = uniform(rng, -bound, bound);
    }
    if (!params.emplace(ps.name, std::move(t)).second) {
      fail(ErrorKind::Config, "duplicate parameter name " + ps.name);
    }
  }
  Network net(spec, std::move(params));
  net.round_to_storage();
  return net;
}

ParamBinding::ParamBinding(const Network& net, Tape& tape, bool requires_grad) {
  for (const auto& [name, t] : net.params()) vars_.emplace(name, tape.leaf(t, requires_grad));
}

Var ParamBinding::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) fail(ErrorKind::Argument, "missing parameter " + name);
  return it->second;
}

std::vector<Var> forward_backbone(const Network& net, const ParamBinding& p, Tape& tape, Var x) {
  const auto& bb = net.spec().backbone;
  std::vector<Var> stages;
  // Images in [0,1] are centred to roughly zero mean, unit spread.
  Var h = scale_shift(tape, x, kInputScale, -0.5 * kInputScale);
  for (std::size_t s = 0; s < bb.stage_widths.size(); ++s) {
    const std::string sp = stage_prefix(s);
    Conv2dOptions entry{1, 1, 1};
    if (s > 0) {
      if (bb.downsample == Downsample::MaxPool) {
        h = max_pool2d(tape, h, 2, 2);
      } else {
        entry.stride = 2;
      }
    }
    h = relu(tape, conv_named(tape, p, sp + ".in", h, entry));
    for (int j = 0; j < bb.blocks_per_stage; ++j) {
      const std::string blk = sp + ".b" + std::to_string(j);
      Var y = relu(tape, conv_named(tape, p, blk + ".c1", h, {1, 1, 1}));
      y = conv_named(tape, p, blk + ".c2", y, {1, 1, 1});
      h = bb.kind == BackboneKind::Residual ? relu(tape, add(tape, h, y)) : relu(tape, y);
    }
    stages.push_back(h);
  }
  return stages;
}

Var pyramid_branch(const Network& net, const ParamBinding& p, Tape& tape, Var features, std::size_t index) {
  const Shape& fs = tape.shape(features);
  const int fh = static_cast<int>(fs[2]), fw = static_cast<int>(fs[3]);
  const int g = net.spec().head.pyramid_grids.at(index);
  // Grids coarser than the feature map are clamped to it.
  Var pooled = adaptive_avg_pool2d(tape, features, std::min(g, fh), std::min(g, fw));
  Var y = relu(tape, conv_named(tape, p, "head.psp.branch" + std::to_string(index), pooled));
  return bilinear_resize(tape, y, fh, fw);
}

Var forward_seg(const Network& net, const ParamBinding& p, Tape& tape, Var x) {
  const auto& spec = net.spec();
  if (!spec.is_segmentation()) fail(ErrorKind::Argument, "network '" + spec.name + "' has a classification head");
  const Tensor& xv = tape.value(x);
  check_input(net, xv, true);
  const int out_h = static_cast<int>(xv.dim(2)), out_w = static_cast<int>(xv.dim(3));
  std::vector<Var> stages = forward_backbone(net, p, tape, x);
  const Var top = stages.back();
  Var logits{};
  switch (spec.head.kind) {
    case HeadKind::FCN: {
      const std::size_t n = stages.size();
      const auto fuse = static_cast<std::size_t>(spec.head.fcn_fuse_stages);
      Var deepest = top;
      if (spec.head.width > 0) deepest = relu(tape, conv_named(tape, p, "head.fcn.hidden", top, {1, 1, 1}));
      logits = conv_named(tape, p, "head.fcn.score" + std::to_string(n - 1), deepest);
      for (std::size_t s = n - 1; s-- > n - fuse;) {
        const Shape& fs = tape.shape(stages[s]);
        Var up = bilinear_resize(tape, logits, static_cast<int>(fs[2]), static_cast<int>(fs[3]));
        logits = add(tape, up, conv_named(tape, p, "head.fcn.score" + std::to_string(s), stages[s]));
      }
      break;
    }
    case HeadKind::Pyramid: {
      std::vector<Var> parts{top};
      for (std::size_t i = 0; i < spec.head.pyramid_grids.size(); ++i) {
        parts.push_back(pyramid_branch(net, p, tape, top, i));
      }
      Var fused = relu(tape, conv_named(tape, p, "head.psp.fuse", concat_channels(tape, parts), {1, 1, 1}));
      logits = conv_named(tape, p, "head.psp.cls", fused);
      break;
    }
    case HeadKind::Dilated: {
      Var acc{};
      for (std::size_t i = 0; i < spec.head.dilation_rates.size(); ++i) {
        const int r = spec.head.dilation_rates[i];
        Var branch = conv_named(tape, p, "head.dil.rate" + std::to_string(i), top, {1, r, r});
        acc = i == 0 ? branch : add(tape, acc, branch);
      }
      logits = conv_named(tape, p, "head.dil.cls", relu(tape, acc));
      break;
    }
    case HeadKind::Cls: break;
  }
  return bilinear_resize(tape, logits, out_h, out_w);
}

Var forward_cls(const Network& net, const ParamBinding& p, Tape& tape, Var x) {
  const auto& spec = net.spec();
  if (spec.head.kind != HeadKind::Cls) {
    fail(ErrorKind::Argument, "network '" + spec.name + "' has a segmentation head");
  }
  check_input(net, tape.value(x), true);
  Var top = forward_backbone(net, p, tape, x).back();
  Var pooled = flatten(tape, adaptive_avg_pool2d(tape, top, 1, 1));
  return linear(tape, pooled, p["head.linear.w"], p["head.linear.b"]);
}

Var forward(const Network& net, const ParamBinding& p, Tape& tape, Var x) {
  return net.spec().is_segmentation() ? forward_seg(net, p, tape, x) : forward_cls(net, p, tape, x);
}

Tensor predict(const Network& net, const Tensor& x) {
  Tape tape;
  ParamBinding p(net, tape, false);
  return tape.value(forward(net, p, tape, tape.constant(x)));
}

void save(const Network& net, const std::filesystem::path& path, const KeyValues& extra) {
  Container c;
  c.header = net.spec().to_kv();
  c.header.set("kind", "checkpoint");
  for (const auto& [k, v] : extra.entries()) c.header.set("meta." + k, v);
  for (const auto& [name, t] : net.params()) c.records.push_back(tensor_record(name, t, DType::F32));
  write_container(path, c);
}

Network load(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header.get_or("kind", "") != "checkpoint") fail(ErrorKind::Format, path.string() + " is not a checkpoint");
  NetworkSpec spec = NetworkSpec::from_kv(c.header);
  std::map<std::string, Tensor> params;
  for (const auto& ps : parameter_layout(spec)) {
    if (!c.has(ps.name)) fail(ErrorKind::Format, path.string() + ": missing parameter " + ps.name);
    Tensor t = record_tensor(c.find(ps.name));
    if (t.shape() != ps.shape) {
      fail(ErrorKind::Format, path.string() + ": parameter " + ps.name + " has shape " + to_string(t.shape()) +
                                  ", expected " + to_string(ps.shape));
    }
    params.emplace(ps.name, std::move(t));
  }
  if (params.size() != c.records.size()) fail(ErrorKind::Format, path.string() + ": unexpected extra records");
  return Network(std::move(spec), std::move(params));
}

KeyValues load_meta(const std::filesystem::path& path) {
  return read_container(path).header.subset("meta.");
}

}  // namespace segx
