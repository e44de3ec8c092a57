#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "segx/kv.hpp"
#include "segx/tensor.hpp"

namespace segx {

/// Shape classes in label order. Label 0 is background.
inline constexpr int kMaxClasses = 4;
std::string_view class_name(int label);

struct SegSample {
  Tensor image;      // [3,H,W] in [0,1]
  LabelMask mask;    // (1,H,W)
  std::uint64_t id = 0;
};

struct GenOptions {
  std::uint64_t seed = 0;
  int n_train = 2000;
  int n_val = 200;
  int height = 64;
  int width = 64;
  int classes = 4;
  int min_shapes = 1;
  int max_shapes = 3;
  int workers = 1;
};

struct DatasetManifest {
  GenOptions options;
  std::vector<std::string> class_names;
  std::vector<double> pixel_frequency;    // per class, over the train split
  std::vector<double> image_frequency;    // fraction of train images containing each class
  std::vector<std::pair<std::string, std::string>> files;  // relative path -> sha256
  std::filesystem::path root;

  KeyValues to_kv() const;
  static DatasetManifest from_kv(const KeyValues& kv, std::filesystem::path root);
  std::vector<std::string> split_files(const std::string& split) const;
};

/// Renders sample `id` of the corpus defined by opt. Pure function of
/// (opt.seed, id, geometry, class count). Image and mask come from a single
/// rasterizer: the mask labels pixel centres, the image averages a 3x3
/// subsample grid centred on the same point.
SegSample render_sample(const GenOptions& opt, std::uint64_t id);

/// Writes <dir>/manifest.txt plus <dir>/{train,val}/NNNNNN.segx.
DatasetManifest generate(const GenOptions& opt, const std::filesystem::path& dir);

DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Samples of one split in manifest order. Verifies each file's SHA-256.
std::vector<SegSample> load_split(const DatasetManifest& manifest, const std::string& split, std::size_t limit = 0);

/// Streaming variant; stops early when fn returns false.
void for_each_sample(const DatasetManifest& manifest, const std::string& split,
                     const std::function<bool(const SegSample&)>& fn);

void save_sample(const SegSample& s, const std::filesystem::path& path, const std::string& split);
SegSample load_sample(const std::filesystem::path& path);

/// Classification label of a sample: the most frequent shape class minus one
/// (so labels run over [0, classes-2]); ties go to the lower class.
int classification_label(const LabelMask& mask, int classes);

/// In-memory corpus without touching disk.
std::vector<SegSample> render_split(const GenOptions& opt, const std::string& split);

}  // namespace segx
