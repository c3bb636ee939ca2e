#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "dcnet/tensor.hpp"

namespace dcnet {

/// Images as [n, C, H, W] in [0,1] plus integer labels.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::size_t num_classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
  /// First n samples; n must not exceed size().
  Dataset head(std::size_t n) const;
  /// Gathers samples by index into a batch.
  template <typename T>
  Tensor<T> gather_images(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// One IDX image file (magic 0x00000803) with its label file (0x00000801).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Reads train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte
/// and t10k-labels-idx1-ubyte from `dir`.
DatasetSplit load_mnist(const std::filesystem::path& dir);

/// One CIFAR-10 binary batch: 3073-byte records (label, R plane, G plane, B plane).
Dataset load_cifar10_batch(const std::filesystem::path& file);

/// Concatenates every data_batch_<i>.bin present in `dir` for training and
/// reads test_batch.bin for testing.
DatasetSplit load_cifar10(const std::filesystem::path& dir);

/// Big-endian IDX writer, used by tests and data preparation tools.
void write_idx_images(const std::filesystem::path& file, const std::vector<std::uint8_t>& pixels,
                      std::size_t count, std::size_t rows, std::size_t cols);
void write_idx_labels(const std::filesystem::path& file, const std::vector<std::uint8_t>& labels);

/// Crop offset into the 4-pixel zero-padded image and horizontal flip.
struct AugmentDraw {
  std::size_t offset_y = 4;
  std::size_t offset_x = 4;
  bool flip = false;
};

constexpr std::size_t kAugmentPad = 4;

std::vector<AugmentDraw> draw_augment(std::mt19937_64& rng, std::size_t count);

/// Applies one draw per image of an [n,C,H,W] batch in place.
template <typename T>
void apply_augment(Tensor<T>& batch, std::span<const AugmentDraw> draws);

/// Deterministic shuffled mini-batches; reshuffles at each epoch boundary.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  void reshuffle();

  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace dcnet
