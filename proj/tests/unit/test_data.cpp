#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "bitadapt/data.hpp"
#include "bitadapt/errors.hpp"

using namespace bitadapt;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = BITADAPT_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "bitadapt_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

IdxError::Kind idx_kind(const fs::path& images, const fs::path& labels) {
  try {
    load_idx(images, labels);
  } catch (const IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no IdxError";
  return IdxError::Kind::io;
}

LabeledDataset small_dataset(std::size_t classes, std::size_t per_class) {
  GlyphConfig g;
  g.seed = 3;
  g.num_classes = classes;
  g.samples_per_class = per_class;
  g.image_size = 8;
  return make_glyphs(g);
}

}  // namespace

TEST(Idx, CanonicalFixture) {
  auto ds = load_idx(kFixtures / "four-images.idx", kFixtures / "four-labels.idx");
  EXPECT_EQ(ds.image_shape, (Shape{1, 28, 28}));
  EXPECT_EQ(ds.labels, (std::vector<std::int64_t>{0, 1, 2, 3}));
  auto x = ds.images(std::vector<std::size_t>{0, 1, 2, 3});
  EXPECT_EQ(x.shape(), (Shape{4, 1, 28, 28}));
  // pixel (i, r, c) = (64 i + 3 r + 5 c) mod 256, scaled by 1/255
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t r = 0; r < 28; r += 9)
      for (std::size_t c = 0; c < 28; c += 7) {
        const float want = static_cast<float>((64 * i + 3 * r + 5 * c) % 256) / 255.f;
        EXPECT_EQ(x.data()[(i * 28 + r) * 28 + c], want);
      }
}

TEST(Idx, Errors) {
  const auto img = kFixtures / "four-images.idx", lab = kFixtures / "four-labels.idx";
  write_bytes(scratch("empty.idx"), {});
  EXPECT_EQ(idx_kind(scratch("empty.idx"), lab), IdxError::Kind::truncated);
  try {
    load_idx(scratch("empty.idx"), lab);
  } catch (const IdxError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }

  auto bytes = read_bytes(img);
  auto cut = bytes;
  cut.resize(cut.size() - 10);
  write_bytes(scratch("cut.idx"), cut);
  EXPECT_EQ(idx_kind(scratch("cut.idx"), lab), IdxError::Kind::truncated);

  auto bad = bytes;
  bad[2] = 0x09;
  write_bytes(scratch("bad.idx"), bad);
  EXPECT_EQ(idx_kind(scratch("bad.idx"), lab), IdxError::Kind::bad_magic);

  write_bytes(scratch("three-labels.idx"), {0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 2});
  EXPECT_EQ(idx_kind(img, scratch("three-labels.idx")), IdxError::Kind::count_mismatch);
  try {
    load_idx(img, scratch("three-labels.idx"));
  } catch (const IdxError& e) {
    EXPECT_NE(std::string(e.what()).find("count mismatch"), std::string::npos);
  }
  EXPECT_EQ(idx_kind(scratch("missing.idx"), lab), IdxError::Kind::io);
}

TEST(Idx, WriteReadRoundTripIsExact) {
  auto ds = small_dataset(5, 3);
  write_idx(ds, scratch("rt-images.idx"), scratch("rt-labels.idx"));
  auto back = load_idx(scratch("rt-images.idx"), scratch("rt-labels.idx"));
  EXPECT_EQ(back.image_shape, ds.image_shape);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.pixels, ds.pixels);
}

TEST(Episode, TwentyWayAndFiveShotShapes) {
  auto ds = small_dataset(30, 7);
  std::vector<std::int64_t> split = ds.classes();
  Rng rng(1);
  auto ep = sample_episode(ds, split, 20, 1, 5, rng);
  EXPECT_EQ(ep.support_indices.size(), 20u);
  EXPECT_EQ(ep.query_indices.size(), 100u);
  EXPECT_EQ(ep.support_x.shape(), (Shape{20, 1, 8, 8}));
  auto ep5 = sample_episode(ds, split, 5, 5, 2, rng);
  EXPECT_EQ(ep5.support_indices.size(), 25u);
}

TEST(Episode, DisjointAndRemapped) {
  auto ds = small_dataset(12, 8);
  std::vector<std::int64_t> split = ds.classes();
  Rng rng(2);
  for (int trial = 0; trial < 10000; ++trial) {
    auto ep = sample_episode(ds, split, 5, 2, 3, rng);
    std::set<std::size_t> s(ep.support_indices.begin(), ep.support_indices.end());
    for (auto q : ep.query_indices) ASSERT_FALSE(s.contains(q));
    std::set<std::int64_t> cls(ep.classes.begin(), ep.classes.end());
    ASSERT_EQ(cls.size(), 5u);
    for (std::size_t i = 0; i < ep.support_y.size(); ++i) {
      ASSERT_EQ(ep.support_y[i], static_cast<std::int64_t>(i / 2));
      ASSERT_EQ(ds.labels[ep.support_indices[i]], ep.classes[ep.support_y[i]]);
    }
    for (std::size_t i = 0; i < ep.query_y.size(); ++i) {
      ASSERT_EQ(ds.labels[ep.query_indices[i]], ep.classes[ep.query_y[i]]);
    }
  }
}

TEST(Episode, Errors) {
  auto ds = small_dataset(4, 3);
  std::vector<std::int64_t> split = ds.classes();
  Rng rng(3);
  EXPECT_THROW(sample_episode(ds, split, 5, 1, 1, rng), std::invalid_argument);
  EXPECT_THROW(sample_episode(ds, split, 2, 2, 2, rng), std::invalid_argument);
}

TEST(Batches, CoverageAndDeterminism) {
  Rng a(5), b(5);
  BatchIterator ia(103, 10, true, false, a), ib(103, 10, true, false, b);
  EXPECT_EQ(ia.batches(), 11u);
  std::vector<std::size_t> ba, bb, all;
  while (ia.next(ba)) {
    ASSERT_TRUE(ib.next(bb));
    EXPECT_EQ(ba, bb);
    all.insert(all.end(), ba.begin(), ba.end());
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 103; ++i) EXPECT_EQ(all[i], i);

  Rng c(6);
  BatchIterator one(50, 50, true, false, c);
  EXPECT_EQ(one.batches(), 1u);
  Rng d(7);
  BatchIterator dropped(25, 10, false, true, d);
  EXPECT_EQ(dropped.batches(), 2u);
}

TEST(Split, DisjointByCount) {
  auto ds = small_dataset(10, 2);
  auto s = ClassSplit::by_count(ds, 6);
  EXPECT_EQ(s.meta_train.size(), 6u);
  EXPECT_EQ(s.meta_test.size(), 4u);
  EXPECT_NO_THROW(s.validate(ds));
  s.meta_test.push_back(s.meta_train.front());
  EXPECT_THROW(s.validate(ds), std::invalid_argument);
}

TEST(Glyphs, SeededAndOnGrid) {
  auto a = small_dataset(60, 4);
  auto b = small_dataset(60, 4);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.classes().size(), 60u);
  for (auto v : a.pixels) {
    ASSERT_GE(v, 0.f);
    ASSERT_LE(v, 1.f);
    ASSERT_EQ(v, static_cast<float>(std::lround(v * 255.f)) / 255.f);
  }
  // classes differ from each other
  std::set<std::vector<float>> firsts;
  for (const auto& [c, idx] : a.class_index) {
    auto x = a.images(std::vector<std::size_t>{idx.front()});
    firsts.insert({x.data().begin(), x.data().end()});
  }
  EXPECT_EQ(firsts.size(), 60u);
}
