#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>
#include <vector>

#include "dcnet/dataset.hpp"
#include "oracles.hpp"

namespace dcnet {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

void write_bytes(const fs::path& file, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(file, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

TEST(Idx, WriterProducesBigEndianHeader) {
  TempDir dir("idx");
  write_idx_images(dir.path / "img", std::vector<std::uint8_t>(2 * 3 * 4, 7), 2, 3, 4);
  write_idx_labels(dir.path / "lbl", {1, 9});
  std::vector<std::uint8_t> want;
  put_be32(want, 0x803);
  put_be32(want, 2);
  put_be32(want, 3);
  put_be32(want, 4);
  auto img = read_bytes(dir.path / "img");
  ASSERT_EQ(img.size(), 16u + 24u);
  EXPECT_TRUE(std::equal(want.begin(), want.end(), img.begin()));
  auto lbl = read_bytes(dir.path / "lbl");
  EXPECT_EQ(lbl, (std::vector<std::uint8_t>{0, 0, 8, 1, 0, 0, 0, 2, 1, 9}));
}

TEST(Idx, RoundTripScalesPixels) {
  TempDir dir("idx");
  std::vector<std::uint8_t> pixels{0, 255, 51, 102, 1, 2, 3, 4};
  write_idx_images(dir.path / "img", pixels, 2, 2, 2);
  write_idx_labels(dir.path / "lbl", {3, 0});
  auto d = load_idx(dir.path / "img", dir.path / "lbl");
  EXPECT_EQ(d.images.shape(), (Shape{2, 1, 2, 2}));
  EXPECT_EQ(d.labels, (std::vector<int>{3, 0}));
  EXPECT_EQ(d.images[0], 0.0f);
  EXPECT_EQ(d.images[1], 1.0f);
  EXPECT_FLOAT_EQ(d.images[2], 0.2f);
  EXPECT_FLOAT_EQ(d.images[7], 4.0f / 255.0f);
}

TEST(Idx, MalformedFiles) {
  TempDir dir("idx");
  write_idx_images(dir.path / "img", std::vector<std::uint8_t>(8, 1), 2, 2, 2);
  write_idx_labels(dir.path / "lbl", {1, 2});
  write_idx_labels(dir.path / "lbl3", {1, 2, 3});
  write_idx_labels(dir.path / "bad_label", {1, 12});

  auto img = read_bytes(dir.path / "img");
  auto truncated = img;
  truncated.pop_back();
  write_bytes(dir.path / "trunc", truncated);
  auto magic = img;
  magic[3] = 0x01;
  write_bytes(dir.path / "magic", magic);
  write_bytes(dir.path / "tiny", {0, 0, 8});

  EXPECT_THROW(load_idx(dir.path / "trunc", dir.path / "lbl"), FormatError);
  EXPECT_THROW(load_idx(dir.path / "magic", dir.path / "lbl"), FormatError);
  EXPECT_THROW(load_idx(dir.path / "tiny", dir.path / "lbl"), FormatError);
  EXPECT_THROW(load_idx(dir.path / "img", dir.path / "lbl3"), FormatError);
  EXPECT_THROW(load_idx(dir.path / "img", dir.path / "bad_label"), FormatError);
  EXPECT_THROW(load_idx(dir.path / "img", dir.path / "img"), FormatError);
  EXPECT_THROW(load_idx(dir.path / "missing", dir.path / "lbl"), InputError);
}

TEST(Idx, FullSizeSyntheticSet) {
  TempDir dir("mnist");
  testing::write_synthetic_mnist(dir.path, 60000, 10000);
  auto split = load_mnist(dir.path);
  EXPECT_EQ(split.train.size(), 60000u);
  EXPECT_EQ(split.test.size(), 10000u);
  EXPECT_EQ(split.train.images.shape(), (Shape{60000, 1, 28, 28}));
  EXPECT_EQ(split.train.labels[12345], 5);
  EXPECT_FLOAT_EQ(split.train.images(12345, 0, 14, 10), 230.0f / 255.0f);
  EXPECT_EQ(split.train.head(10).size(), 10u);
  EXPECT_THROW(split.test.head(10001), ConfigError);
}

std::vector<std::uint8_t> cifar_records(std::size_t n) {
  std::vector<std::uint8_t> bytes;
  for (std::size_t i = 0; i < n; ++i) {
    bytes.push_back(static_cast<std::uint8_t>(i % 10));
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 1024; ++p)
        bytes.push_back(static_cast<std::uint8_t>((c * 80 + p + i) % 256));
  }
  return bytes;
}

TEST(Cifar, RecordLayout) {
  TempDir dir("cifar");
  write_bytes(dir.path / "b.bin", cifar_records(3));
  auto d = load_cifar10_batch(dir.path / "b.bin");
  EXPECT_EQ(d.images.shape(), (Shape{3, 3, 32, 32}));
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 2}));
  // channel c, row y, col x comes from byte 1 + c*1024 + y*32 + x of the record
  EXPECT_FLOAT_EQ(d.images(2, 1, 3, 5), static_cast<float>((80 + 3 * 32 + 5 + 2) % 256) / 255.0f);
  EXPECT_FLOAT_EQ(d.images(0, 2, 0, 0), 160.0f / 255.0f);
}

TEST(Cifar, WrongSizeOrLabel) {
  TempDir dir("cifar");
  auto bytes = cifar_records(2);
  bytes.pop_back();
  write_bytes(dir.path / "short.bin", bytes);
  EXPECT_THROW(load_cifar10_batch(dir.path / "short.bin"), FormatError);
  auto bad = cifar_records(1);
  bad[0] = 10;
  write_bytes(dir.path / "label.bin", bad);
  EXPECT_THROW(load_cifar10_batch(dir.path / "label.bin"), FormatError);
  EXPECT_THROW(load_cifar10(dir.path), InputError);
}

TEST(Cifar, FullBatchesAndDirectory) {
  TempDir dir("cifar");
  const auto batch = cifar_records(10000);
  write_bytes(dir.path / "data_batch_1.bin", batch);
  write_bytes(dir.path / "data_batch_2.bin", batch);
  write_bytes(dir.path / "test_batch.bin", batch);
  auto split = load_cifar10(dir.path);
  EXPECT_EQ(split.train.size(), 20000u);
  EXPECT_EQ(split.test.size(), 10000u);
  EXPECT_EQ(split.train.labels[10003], 3);
}

TEST(Augment, CentreDrawIsIdentityAndFlipTwiceRestores) {
  std::mt19937_64 rng(71);
  auto x = testing::random_tensor<double>({2, 3, 6, 6}, rng);
  auto y = x;
  std::vector<AugmentDraw> centre(2);
  apply_augment(y, std::span<const AugmentDraw>(centre));
  EXPECT_EQ(y, x);
  std::vector<AugmentDraw> flip(2, AugmentDraw{4, 4, true});
  apply_augment(y, std::span<const AugmentDraw>(flip));
  EXPECT_EQ(y(1, 2, 3, 0), x(1, 2, 3, 5));
  apply_augment(y, std::span<const AugmentDraw>(flip));
  EXPECT_EQ(y, x);
}

TEST(Augment, CropShiftsWithZeroFill) {
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i + 1);
  std::vector<AugmentDraw> d{AugmentDraw{5, 3, false}};
  apply_augment(x, std::span<const AugmentDraw>(d));
  // output(y,x) = source(y+1, x-1)
  EXPECT_EQ(x(0, 0, 0, 0), 0.0);
  EXPECT_EQ(x(0, 0, 0, 1), 5.0);
  EXPECT_EQ(x(0, 0, 2, 3), 15.0);
  EXPECT_EQ(x(0, 0, 3, 2), 0.0);
  std::vector<AugmentDraw> far{AugmentDraw{9, 0, false}};
  EXPECT_THROW(apply_augment(x, std::span<const AugmentDraw>(far)), DomainError);
}

TEST(Augment, DrawsReplayFromSeed) {
  std::mt19937_64 a(72), b(72);
  auto da = draw_augment(a, 500), db = draw_augment(b, 500);
  std::set<std::size_t> offsets;
  std::size_t flips = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    EXPECT_EQ(da[i].offset_y, db[i].offset_y);
    EXPECT_EQ(da[i].offset_x, db[i].offset_x);
    EXPECT_EQ(da[i].flip, db[i].flip);
    EXPECT_LE(da[i].offset_y, 2 * kAugmentPad);
    offsets.insert(da[i].offset_x);
    flips += da[i].flip;
  }
  EXPECT_EQ(offsets.size(), 2 * kAugmentPad + 1);
  EXPECT_GT(flips, 150u);
  EXPECT_LT(flips, 350u);
}

TEST(BatchSampler, CoversEachEpochOnce) {
  BatchSampler s(10, 5, 3);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 2; ++i)
    for (auto v : s.next()) seen.insert(v);
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 10u);
  EXPECT_EQ(s.epoch(), 0u);
  s.next();
  EXPECT_EQ(s.epoch(), 1u);
}

TEST(BatchSampler, SeedDeterminesOrder) {
  BatchSampler a(100, 7, 9), b(100, 7, 9), c(100, 7, 10);
  bool differs = false;
  for (int i = 0; i < 30; ++i) {
    auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(BatchSampler(0, 1, 1), InputError);
  EXPECT_THROW(BatchSampler(5, 0, 1), ConfigError);
}

TEST(Dataset, GatherByIndex) {
  TempDir dir("gather");
  testing::write_synthetic_mnist(dir.path, 20, 10);
  auto d = load_mnist(dir.path).train;
  std::vector<std::size_t> idx{3, 17};
  auto imgs = d.gather_images<double>(std::span<const std::size_t>(idx));
  EXPECT_EQ(imgs.shape(), (Shape{2, 1, 28, 28}));
  EXPECT_EQ(d.gather_labels(std::span<const std::size_t>(idx)), (std::vector<int>{3, 7}));
  EXPECT_EQ(imgs(1, 0, 18, 5), static_cast<double>(d.images(17, 0, 18, 5)));
  std::vector<std::size_t> bad{20};
  EXPECT_THROW(d.gather_images<double>(std::span<const std::size_t>(bad)), InputError);
}

}  // namespace
}  // namespace dcnet
