#include <gtest/gtest.h>

#include <filesystem>
#include <array>
#include <fstream>
#include <optional>
#include <set>

#include "segx/datagen.hpp"
#include "segx/digest.hpp"

using namespace segx;

namespace {

GenOptions small(std::uint64_t seed = 5) {
  GenOptions g;
  g.seed = seed;
  g.n_train = 12;
  g.n_val = 4;
  g.height = 32;
  g.width = 40;
  return g;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("segx_datagen_" + name);
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST(Datagen, SameSeedIdenticalFiles) {
  const auto a = fresh_dir("a"), b = fresh_dir("b");
  const DatasetManifest ma = generate(small(), a);
  const DatasetManifest mb = generate(small(), b);
  ASSERT_EQ(ma.files.size(), 16u);
  for (std::size_t i = 0; i < ma.files.size(); ++i) {
    EXPECT_EQ(sha256_file(a / ma.files[i].first), sha256_file(b / mb.files[i].first));
  }
  EXPECT_EQ(sha256_file(a / "manifest.txt"), sha256_file(b / "manifest.txt"));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Datagen, WorkerCountDoesNotMatter) {
  GenOptions g = small(9);
  const auto one = render_split(g, "train");
  g.workers = 4;
  const auto four = render_split(g, "train");
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].image, four[i].image);
    EXPECT_EQ(one[i].mask, four[i].mask);
  }
}

TEST(Datagen, TwoClassesOnlyBinaryLabels) {
  GenOptions g = small();
  g.classes = 2;
  g.n_train = 100;
  std::set<int> seen;
  for (const auto& s : render_split(g, "train")) {
    for (auto v : s.mask.data()) seen.insert(v);
  }
  EXPECT_EQ(seen, (std::set<int>{0, 1}));
}

TEST(Datagen, ImagesInRangeAndMasksValid) {
  for (const auto& s : render_split(small(3), "val")) {
    for (double v : s.image.data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    EXPECT_NO_THROW(s.mask.validate(4));
    EXPECT_EQ(s.image.shape(), (Shape{3, 32, 40}));
  }
}

TEST(Datagen, BadOptionsAreRejected) {
  GenOptions g = small();
  g.classes = 5;
  EXPECT_THROW(render_sample(g, 0), Error);
  g = small();
  g.height = 16;
  EXPECT_THROW(render_sample(g, 0), Error);
  g = small();
  g.classes = 1;
  EXPECT_THROW(render_sample(g, 0), Error);
}

TEST(Datagen, UnwritableDirectoryIsIoError) {
  try {
    generate(small(), "/proc/segx_cannot_write_here");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

// Over 1000 samples: background is the majority and each shape class covers
// between 2% and 40% of all pixels and appears in at least 5% of images.
TEST(Datagen, ClassCensus) {
  GenOptions g = small(11);
  g.n_train = 1000;
  g.height = g.width = 64;
  std::vector<double> pixels(4, 0.0), images(4, 0.0);
  double total = 0.0;
  for (const auto& s : render_split(g, "train")) {
    std::vector<bool> seen(4, false);
    for (auto v : s.mask.data()) {
      pixels[v] += 1.0;
      seen[v] = true;
    }
    for (std::size_t c = 0; c < 4; ++c) images[c] += seen[c] ? 1.0 : 0.0;
    total += static_cast<double>(s.mask.size());
  }
  EXPECT_GT(pixels[0] / total, 0.5);
  for (std::size_t c = 1; c < 4; ++c) {
    EXPECT_GE(pixels[c] / total, 0.02) << class_name(static_cast<int>(c));
    EXPECT_LE(pixels[c] / total, 0.40) << class_name(static_cast<int>(c));
    EXPECT_GE(images[c] / 1000.0, 0.05);
  }
}

// One rasterizer feeds both outputs: a labelled pixel whose neighbours are
// all labelled is fully covered, so with a single flat-coloured shape every
// such interior pixel carries exactly the same colour.
TEST(Datagen, MaskAlignsWithRendering) {
  GenOptions g = small(13);
  g.min_shapes = g.max_shapes = 1;
  g.n_train = 50;
  std::size_t checked = 0;
  for (const auto& s : render_split(g, "train")) {
    const std::size_t h = s.mask.height(), w = s.mask.width();
    std::optional<std::array<double, 3>> colour;
    for (std::size_t y = 1; y + 1 < h; ++y) {
      for (std::size_t x = 1; x + 1 < w; ++x) {
        bool interior = true;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) interior = interior && s.mask.at(0, y + dy, x + dx) != 0;
        }
        if (!interior) continue;
        const std::array<double, 3> px = {s.image[(0 * h + y) * w + x], s.image[(1 * h + y) * w + x],
                                          s.image[(2 * h + y) * w + x]};
        if (!colour) colour = px;
        EXPECT_EQ(px, *colour) << "sample " << s.id << " at " << y << "," << x;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(Datagen, ManifestAndLoad) {
  const auto dir = fresh_dir("load");
  const DatasetManifest m = generate(small(), dir);
  const DatasetManifest r = read_manifest(dir);
  EXPECT_EQ(r.to_kv(), m.to_kv());
  EXPECT_EQ(r.class_names, (std::vector<std::string>{"background", "circle", "rectangle", "triangle"}));
  const auto train = load_split(r, "train");
  const auto val = load_split(r, "val");
  ASSERT_EQ(train.size(), 12u);
  ASSERT_EQ(val.size(), 4u);
  const auto fresh = render_split(small(), "train");
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_EQ(train[i].image, fresh[i].image);
    EXPECT_EQ(train[i].mask, fresh[i].mask);
    EXPECT_EQ(train[i].id, fresh[i].id);
  }
  EXPECT_EQ(load_split(r, "train", 3).size(), 3u);
  std::filesystem::remove_all(dir);
}

TEST(Datagen, SampleRoundTripIsExact) {
  const SegSample s = render_sample(small(), 3);
  const auto path = std::filesystem::temp_directory_path() / "segx_sample_rt.segx";
  save_sample(s, path, "train");
  const SegSample back = load_sample(path);
  EXPECT_EQ(back.image, s.image);
  EXPECT_EQ(back.mask, s.mask);
  EXPECT_EQ(back.id, s.id);
  std::filesystem::remove(path);
}

TEST(Datagen, ChecksumMismatchIsCorruption) {
  const auto dir = fresh_dir("corrupt");
  const DatasetManifest m = generate(small(), dir);
  const auto victim = dir / m.files.front().first;
  auto bytes = std::filesystem::file_size(victim);
  {
    std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(bytes - 1));
    f.put('\x7f');
  }
  try {
    load_split(read_manifest(dir), "train");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Corruption);
  }
  std::filesystem::remove_all(dir);
}

TEST(Datagen, ClassificationLabelIsDominantShape) {
  LabelMask m(1, 2, 3, std::vector<std::uint8_t>{0, 2, 2, 3, 3, 0});
  EXPECT_EQ(classification_label(m, 4), 1);  // tie between 2 and 3 -> lower
  m.at(0, 1, 2) = 3;
  EXPECT_EQ(classification_label(m, 4), 2);
}
