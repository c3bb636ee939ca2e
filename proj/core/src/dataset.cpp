#include "dcnet/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "dcnet/errors.hpp"

namespace dcnet {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;

std::vector<std::uint8_t> read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const fs::path& file) {
  if (bytes.size() < offset + 4) throw FormatError(file.string() + ": truncated IDX header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

Dataset Dataset::head(std::size_t n) const {
  if (n > size()) {
    throw ConfigError("subset of " + std::to_string(n) + " exceeds dataset size " +
                      std::to_string(size()));
  }
  Dataset out;
  out.images = images.slice_rows(0, n);
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  out.num_classes = num_classes;
  return out;
}

template <typename T>
Tensor<T> Dataset::gather_images(std::span<const std::size_t> indices) const {
  Shape shape = images.shape();
  shape[0] = indices.size();
  Tensor<T> out(shape);
  const std::size_t stride = images.size() / images.dim(0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw InputError("sample index out of range");
    const float* src = images.data() + indices[i] * stride;
    std::copy(src, src + stride, out.data() + i * stride);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

Dataset load_idx(const fs::path& images_file, const fs::path& labels_file) {
  const auto img = read_bytes(images_file);
  const auto lab = read_bytes(labels_file);

  if (read_be32(img, 0, images_file) != kIdxImages) {
    throw FormatError(images_file.string() + ": bad IDX image magic");
  }
  if (read_be32(lab, 0, labels_file) != kIdxLabels) {
    throw FormatError(labels_file.string() + ": bad IDX label magic");
  }
  const std::size_t n = read_be32(img, 4, images_file);
  const std::size_t rows = read_be32(img, 8, images_file);
  const std::size_t cols = read_be32(img, 12, images_file);
  const std::size_t n_labels = read_be32(lab, 4, labels_file);
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images_file.string() + ": empty IDX");
  if (img.size() != 16 + n * rows * cols) {
    throw FormatError(images_file.string() + ": expected " + std::to_string(16 + n * rows * cols) +
                      " bytes, found " + std::to_string(img.size()));
  }
  if (lab.size() != 8 + n_labels) {
    throw FormatError(labels_file.string() + ": length does not match label count");
  }
  if (n_labels != n) throw FormatError("IDX image and label counts differ");

  Dataset out;
  out.images = Tensor<float>({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) out.images[i] = img[16 + i] / 255.0f;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[8 + i] > 9) throw FormatError(labels_file.string() + ": label outside 0-9");
    out.labels[i] = lab[8 + i];
  }
  return out;
}

DatasetSplit load_mnist(const fs::path& dir) {
  return {load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
          load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
}

Dataset load_cifar10_batch(const fs::path& file) {
  const auto bytes = read_bytes(file);
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError(file.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of 3073");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset out;
  out.images = Tensor<float>({n, 3, 32, 32});
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] > 9) throw FormatError(file.string() + ": label outside 0-9");
    out.labels[i] = rec[0];
    float* dst = out.images.data() + i * 3072;
    for (std::size_t j = 0; j < 3072; ++j) dst[j] = rec[1 + j] / 255.0f;
  }
  return out;
}

DatasetSplit load_cifar10(const fs::path& dir) {
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i) {
    const auto file = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (fs::exists(file)) parts.push_back(load_cifar10_batch(file));
  }
  if (parts.empty()) throw InputError("no data_batch_<i>.bin files in " + dir.string());
  DatasetSplit split;
  split.train = std::move(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i) {
    split.train.images = concat_rows(split.train.images, parts[i].images);
    split.train.labels.insert(split.train.labels.end(), parts[i].labels.begin(),
                              parts[i].labels.end());
  }
  split.test = load_cifar10_batch(dir / "test_batch.bin");
  return split;
}

void write_idx_images(const fs::path& file, const std::vector<std::uint8_t>& pixels,
                      std::size_t count, std::size_t rows, std::size_t cols) {
  if (pixels.size() != count * rows * cols) throw DimensionError("IDX pixel count mismatch");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw InputError("cannot write " + file.string());
  write_be32(out, kIdxImages);
  write_be32(out, static_cast<std::uint32_t>(count));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const fs::path& file, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw InputError("cannot write " + file.string());
  write_be32(out, kIdxLabels);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

std::vector<AugmentDraw> draw_augment(std::mt19937_64& rng, std::size_t count) {
  std::uniform_int_distribution<std::size_t> offset(0, 2 * kAugmentPad);
  std::bernoulli_distribution flip(0.5);
  std::vector<AugmentDraw> draws(count);
  for (auto& d : draws) {
    d.offset_y = offset(rng);
    d.offset_x = offset(rng);
    d.flip = flip(rng);
  }
  return draws;
}

template <typename T>
void apply_augment(Tensor<T>& batch, std::span<const AugmentDraw> draws) {
  if (batch.rank() != 4 || draws.size() != batch.dim(0)) {
    throw DimensionError("apply_augment: need one draw per image of an [n,C,H,W] batch");
  }
  const std::size_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  std::vector<T> plane(h * w);
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    const auto& d = draws[n];
    if (d.offset_y > 2 * kAugmentPad || d.offset_x > 2 * kAugmentPad) {
      throw DomainError("augment offset outside the padded border");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* img = &batch(n, ch, 0, 0);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          // Output (y,x) reads padded (y+oy, x+ox), i.e. source (y+oy-pad, x+ox-pad).
          const std::size_t xx = d.flip ? w - 1 - x : x;
          const auto sy = static_cast<std::ptrdiff_t>(y + d.offset_y) - static_cast<std::ptrdiff_t>(kAugmentPad);
          const auto sx = static_cast<std::ptrdiff_t>(xx + d.offset_x) - static_cast<std::ptrdiff_t>(kAugmentPad);
          const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                              sx < static_cast<std::ptrdiff_t>(w);
          plane[y * w + x] = inside ? img[sy * static_cast<std::ptrdiff_t>(w) + sx] : T(0);
        }
      }
      std::copy(plane.begin(), plane.end(), img);
    }
  }
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), order_(dataset_size), rng_(seed) {
  if (dataset_size == 0) throw InputError("cannot sample from an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  for (std::size_t i = 0; i < dataset_size; ++i) order_[i] = i;
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  while (batch.size() < batch_size_) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

template Tensor<float> Dataset::gather_images(std::span<const std::size_t>) const;
template Tensor<double> Dataset::gather_images(std::span<const std::size_t>) const;
template void apply_augment(Tensor<float>&, std::span<const AugmentDraw>);
template void apply_augment(Tensor<double>&, std::span<const AugmentDraw>);

}  // namespace dcnet
