#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcnet/network.hpp"

namespace dcnet {

/// Binary layout, all integers little-endian:
///   "DCNETCKP"  u32 version
///   u32 n_meta   { u32 len, key bytes, u32 len, value bytes } * n_meta
///   u32 n_tensor { u32 len, name bytes, u8 dtype (0 f32, 1 f64), u32 rank,
///                  u64 dims[rank], values (IEEE-754, dtype width) } * n_tensor
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct NamedTensor {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<double> values;  // f32 payloads widen exactly
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  static constexpr char kMagic[8] = {'D', 'C', 'N', 'E', 'T', 'C', 'K', 'P'};

  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  std::optional<std::string> meta(const std::string& key) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Parameters followed by moving statistics, in network order.
template <typename T>
Checkpoint capture(Network<T>& net, std::map<std::string, std::string> metadata = {});

enum class LoadMode {
  Strict,   // every network tensor present with matching shape, nothing extra
  Partial,  // copy what matches by name and shape, report the rest
};

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> skipped;  // in the checkpoint, not used
  std::vector<std::string> missing;  // in the network, not found
};

/// Partial loading of an inner-product checkpoint into a decoupled network of
/// the same shape copies kernels, so directions carry over.
template <typename T>
LoadReport restore(Network<T>& net, const Checkpoint& ckpt, LoadMode mode);

}  // namespace dcnet
