#include "segx/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "segx/container.hpp"
#include "segx/digest.hpp"
#include "segx/ops.hpp"
#include "segx/parallel.hpp"
#include "segx/rng.hpp"

namespace segx {
namespace {

constexpr std::uint64_t kValIdBase = 1ULL << 32;
constexpr int kNoiseGrid = 5;
constexpr double kNoiseAmplitude = 0.12;
constexpr std::size_t kWriteChunk = 256;

enum class ShapeKind { Circle = 1, Rectangle = 2, Triangle = 3 };

struct Shape2D {
  ShapeKind kind;
  double cx, cy;
  double radius;
  double half_u, half_v, angle;   // rectangle
  std::array<double, 6> tri{};    // triangle vertices
  std::array<double, 3> color{};

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    switch (kind) {
      case ShapeKind::Circle: return dx * dx + dy * dy <= radius * radius;
      case ShapeKind::Rectangle: {
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        return std::abs(u) <= half_u && std::abs(v) <= half_v;
      }
      case ShapeKind::Triangle: {
        auto edge = [&](int a, int b) {
          return (tri[2 * b] - tri[2 * a]) * (y - tri[2 * a + 1]) - (tri[2 * b + 1] - tri[2 * a + 1]) * (x - tri[2 * a]);
        };
        const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
        return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
      }
    }
    return false;
  }
};

void check_options(const GenOptions& opt) {
  if (opt.classes < 2) fail(ErrorKind::Config, "datagen: need at least 2 classes (background + one shape)");
  if (opt.classes > kMaxClasses) {
    fail(ErrorKind::Config, "datagen: at most " + std::to_string(kMaxClasses) +
                                " classes supported (background, circle, rectangle, triangle)");
  }
  if (opt.height < 32 || opt.width < 32) fail(ErrorKind::Config, "datagen: height and width must be >= 32");
  if (opt.n_train < 0 || opt.n_val < 0) fail(ErrorKind::Config, "datagen: sample counts must be non-negative");
  if (opt.min_shapes < 1 || opt.max_shapes < opt.min_shapes) {
    fail(ErrorKind::Config, "datagen: need 1 <= min_shapes <= max_shapes");
  }
}

std::string file_key(const std::string& split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return split + "." + buf;
}

std::string file_path(const std::string& split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.segx", index);
  return split + "/" + buf;
}

std::uint64_t sample_id(const std::string& split, std::size_t index) {
  return split == "val" ? kValIdBase + index : index;
}

}  // namespace

std::string_view class_name(int label) {
  static constexpr std::array<std::string_view, kMaxClasses> kNames = {"background", "circle", "rectangle",
                                                                       "triangle"};
  if (label < 0 || label >= kMaxClasses) fail(ErrorKind::Argument, "no class " + std::to_string(label));
  return kNames[static_cast<std::size_t>(label)];
}

SegSample render_sample(const GenOptions& opt, std::uint64_t id) {
  check_options(opt);
  Rng rng = make_stream(opt.seed, id);
  const auto h = static_cast<std::size_t>(opt.height), w = static_cast<std::size_t>(opt.width);

  // Background: per-channel base colour plus smooth low-frequency noise.
  std::array<double, 3> base{};
  for (double& b : base) b = uniform(rng, 0.25, 0.75);
  Tensor grid({1, 3, kNoiseGrid, kNoiseGrid});
  for (double& v : grid.data()) v = uniform(rng, -1.0, 1.0);
  Tensor image = bilinear_resize(grid, opt.height, opt.width).reshaped({3, h, w});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) {
      double& v = image[c * h * w + i];
      v = std::clamp(base[c] + kNoiseAmplitude * v, 0.0, 1.0);
    }
  }

  LabelMask mask(1, h, w, 0);
  const double extent = static_cast<double>(std::min(h, w));
  const auto n_shapes = static_cast<int>(opt.min_shapes + uniform_index(rng, static_cast<std::uint64_t>(opt.max_shapes - opt.min_shapes + 1)));
  for (int s = 0; s < n_shapes; ++s) {
    Shape2D shape{};
    shape.kind = static_cast<ShapeKind>(1 + uniform_index(rng, static_cast<std::uint64_t>(opt.classes - 1)));
    shape.radius = uniform(rng, 0.15, 0.32) * extent;
    shape.cx = uniform(rng, 0.15, 0.85) * static_cast<double>(w);
    shape.cy = uniform(rng, 0.15, 0.85) * static_cast<double>(h);
    shape.angle = uniform(rng, 0.0, std::numbers::pi);
    shape.half_u = shape.radius * uniform(rng, 0.6, 1.0);
    shape.half_v = shape.radius * uniform(rng, 0.5, 1.0);
    for (int v = 0; v < 3; ++v) {
      const double a = shape.angle + 2.0 * std::numbers::pi * v / 3.0 + uniform(rng, -0.3, 0.3);
      const double r = shape.radius * uniform(rng, 0.9, 1.2);
      shape.tri[static_cast<std::size_t>(2 * v)] = shape.cx + r * std::cos(a);
      shape.tri[static_cast<std::size_t>(2 * v + 1)] = shape.cy + r * std::sin(a);
    }
    // Keep shapes visibly distinct from the background base colour.
    for (int attempt = 0; attempt < 16; ++attempt) {
      double dist = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        shape.color[c] = uniform01(rng);
        dist += std::abs(shape.color[c] - base[c]);
      }
      if (dist >= 0.45) break;
    }

    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        int covered = 0;
        for (int sy = -1; sy <= 1; ++sy) {
          for (int sx = -1; sx <= 1; ++sx) covered += shape.contains(px + sx / 3.0, py + sy / 3.0) ? 1 : 0;
        }
        if (covered == 0) continue;
        const double a = covered / 9.0;
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = image[(c * h + y) * w + x];
          v = (1.0 - a) * v + a * shape.color[c];
        }
        if (shape.contains(px, py)) mask.at(0, y, x) = static_cast<std::uint8_t>(shape.kind);
      }
    }
  }
  for (double& v : image.data()) v = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
  return SegSample{std::move(image), std::move(mask), id};
}

int classification_label(const LabelMask& mask, int classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (auto v : mask.data()) {
    if (v != LabelMask::kIgnore && v < classes) ++counts[v];
  }
  int best = 1;
  for (int c = 2; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  }
  return best - 1;
}

std::vector<SegSample> render_split(const GenOptions& opt, const std::string& split) {
  const int n = split == "val" ? opt.n_val : opt.n_train;
  std::vector<SegSample> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), opt.workers, [&](std::size_t i) { out[i] = render_sample(opt, sample_id(split, i)); });
  return out;
}

void save_sample(const SegSample& s, const std::filesystem::path& path, const std::string& split) {
  Container c;
  c.header.set("kind", "sample");
  c.header.set("id", static_cast<unsigned long long>(s.id));
  c.header.set("split", split);
  c.records.push_back(tensor_record("image", s.image, DType::F32));
  c.records.push_back(mask_record("mask", s.mask));
  write_container(path, c);
}

SegSample load_sample(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header.get_or("kind", "") != "sample") fail(ErrorKind::Format, path.string() + " is not a sample file");
  SegSample s;
  s.id = c.header.get_u64("id");
  s.image = record_tensor(c.find("image"));
  s.mask = record_mask(c.find("mask"));
  if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.image.dim(1) != s.mask.height() ||
      s.image.dim(2) != s.mask.width()) {
    fail(ErrorKind::Format, path.string() + ": image and mask shapes disagree");
  }
  return s;
}

KeyValues DatasetManifest::to_kv() const {
  KeyValues kv;
  kv.set("format", "segx-dataset");
  kv.set("version", 1);
  kv.set("seed", static_cast<unsigned long long>(options.seed));
  kv.set("n_train", options.n_train);
  kv.set("n_val", options.n_val);
  kv.set("height", options.height);
  kv.set("width", options.width);
  kv.set("classes", options.classes);
  kv.set("min_shapes", options.min_shapes);
  kv.set("max_shapes", options.max_shapes);
  std::string names;
  for (std::size_t i = 0; i < class_names.size(); ++i) names += (i ? "," : "") + class_names[i];
  kv.set("class_names", names);
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    kv.set("freq.pixel." + class_names[c], pixel_frequency.at(c));
    kv.set("freq.image." + class_names[c], image_frequency.at(c));
  }
  for (const auto& [rel, sha] : files) {
    const std::string split = rel.substr(0, rel.find('/'));
    const std::string index = rel.substr(rel.find('/') + 1, 6);
    kv.set("file." + split + "." + index, sha);
  }
  return kv;
}

DatasetManifest DatasetManifest::from_kv(const KeyValues& kv, std::filesystem::path root) {
  if (kv.get_or("format", "") != "segx-dataset") fail(ErrorKind::Format, "not a segx dataset manifest");
  DatasetManifest m;
  m.root = std::move(root);
  m.options.seed = kv.get_u64("seed");
  m.options.n_train = static_cast<int>(kv.get_int("n_train"));
  m.options.n_val = static_cast<int>(kv.get_int("n_val"));
  m.options.height = static_cast<int>(kv.get_int("height"));
  m.options.width = static_cast<int>(kv.get_int("width"));
  m.options.classes = static_cast<int>(kv.get_int("classes"));
  m.options.min_shapes = static_cast<int>(kv.get_int("min_shapes"));
  m.options.max_shapes = static_cast<int>(kv.get_int("max_shapes"));
  m.class_names = split(kv.get("class_names"), ',');
  for (const auto& name : m.class_names) {
    m.pixel_frequency.push_back(kv.get_double("freq.pixel." + name));
    m.image_frequency.push_back(kv.get_double("freq.image." + name));
  }
  for (const std::string split_name : {"train", "val"}) {
    const int n = split_name == "val" ? m.options.n_val : m.options.n_train;
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
      m.files.emplace_back(file_path(split_name, i), kv.get(file_key("file." + split_name, i)));
    }
  }
  return m;
}

std::vector<std::string> DatasetManifest::split_files(const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& [rel, sha] : files) {
    if (rel.compare(0, split.size() + 1, split + "/") == 0) out.push_back(rel);
  }
  return out;
}

DatasetManifest generate(const GenOptions& opt, const std::filesystem::path& dir) {
  check_options(opt);
  std::error_code ec;
  std::filesystem::create_directories(dir / "train", ec);
  std::filesystem::create_directories(dir / "val", ec);
  if (ec || !std::filesystem::is_directory(dir / "val")) {
    fail(ErrorKind::Io, "cannot create dataset directory " + dir.string());
  }

  DatasetManifest m;
  m.options = opt;
  m.root = dir;
  const auto k = static_cast<std::size_t>(opt.classes);
  for (std::size_t c = 0; c < k; ++c) m.class_names.emplace_back(class_name(static_cast<int>(c)));
  std::vector<std::uint64_t> pixel_counts(k, 0), image_counts(k, 0);
  std::uint64_t total_pixels = 0;

  for (const std::string split_name : {"train", "val"}) {
    const auto n = static_cast<std::size_t>(split_name == "val" ? opt.n_val : opt.n_train);
    for (std::size_t start = 0; start < n; start += kWriteChunk) {
      const std::size_t count = std::min(kWriteChunk, n - start);
      std::vector<SegSample> chunk(count);
      parallel_for(count, opt.workers,
                   [&](std::size_t i) { chunk[i] = render_sample(opt, sample_id(split_name, start + i)); });
      for (std::size_t i = 0; i < count; ++i) {
        const std::string rel = file_path(split_name, start + i);
        save_sample(chunk[i], dir / rel, split_name);
        m.files.emplace_back(rel, sha256_file(dir / rel));
        if (split_name == "train") {
          std::vector<bool> seen(k, false);
          for (auto v : chunk[i].mask.data()) {
            ++pixel_counts[v];
            seen[v] = true;
          }
          for (std::size_t c = 0; c < k; ++c) image_counts[c] += seen[c] ? 1 : 0;
          total_pixels += chunk[i].mask.size();
        }
      }
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    m.pixel_frequency.push_back(total_pixels ? static_cast<double>(pixel_counts[c]) / static_cast<double>(total_pixels) : 0.0);
    m.image_frequency.push_back(opt.n_train ? static_cast<double>(image_counts[c]) / opt.n_train : 0.0);
  }
  m.to_kv().write_file(dir / "manifest.txt");
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = std::filesystem::is_directory(dir) ? dir / "manifest.txt" : dir;
  return DatasetManifest::from_kv(KeyValues::read_file(path), path.parent_path());
}

void for_each_sample(const DatasetManifest& manifest, const std::string& split,
                     const std::function<bool(const SegSample&)>& fn) {
  if (split != "train" && split != "val") fail(ErrorKind::Argument, "unknown split '" + split + "'");
  for (const auto& [rel, sha] : manifest.files) {
    if (rel.compare(0, split.size() + 1, split + "/") != 0) continue;
    const auto path = manifest.root / rel;
    if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "missing sample file " + path.string());
    const std::vector<std::uint8_t> bytes = read_bytes(path);
    if (sha256_hex(bytes) != sha) fail(ErrorKind::Corruption, "checksum mismatch for " + path.string());
    Container c = decode(bytes);
    SegSample s;
    s.id = c.header.get_u64("id");
    s.image = record_tensor(c.find("image"));
    s.mask = record_mask(c.find("mask"));
    if (!fn(s)) break;
  }
}

std::vector<SegSample> load_split(const DatasetManifest& manifest, const std::string& split, std::size_t limit) {
  std::vector<SegSample> out;
  for_each_sample(manifest, split, [&](const SegSample& s) {
    out.push_back(s);
    return limit == 0 || out.size() < limit;
  });
  return out;
}

}  // namespace segx
