#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dcnet/attack.hpp"
#include "dcnet/network.hpp"
#include "dcnet/optim.hpp"

namespace dcnet {

enum class DatasetKind { Mnist, Cifar10 };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& text);

struct DataConfig {
  DatasetKind kind = DatasetKind::Mnist;
  std::filesystem::path path = "data/mnist";
  std::size_t train_subset = 0;  // 0 = all
  std::size_t test_subset = 0;
  bool augment = true;  // crop+flip; CIFAR only
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t steps = 2000;
  std::size_t eval_interval = 100;  // metrics row every K steps
  std::size_t eval_batch = 250;
  std::uint64_t seed = 1;
};

struct OptimConfig {
  UpdateKind kind = UpdateKind::Adam;
  double lr = 1e-3;
  std::vector<double> lr_decay_at{0.5, 0.75};  // fractions of total steps
  double lr_decay_factor = 0.1;
  std::vector<LrPoint> lr_schedule;  // explicit (step, lr) points; overrides decay
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8, momentum = 0.9;
  GradientMode gradient_mode = GradientMode::Standard;
  bool projection = false;
  std::size_t projection_interval = 1;
  double projection_s = 1.0;

  UpdateRule rule(std::size_t total_steps) const;
};

struct OutputConfig {
  std::filesystem::path dir = "runs/default";
  std::optional<std::filesystem::path> init_checkpoint;
  bool strict_init = false;
};

/// Everything a run needs. Parsed from the INI-style grammar in docs/config.md;
/// to_text() emits a canonical form that parses back to an equal config.
struct ExperimentConfig {
  ArchitectureDescription arch;
  DataConfig data;
  TrainConfig train;
  OptimConfig optim;
  AttackConfig attack;
  OutputConfig output;

  static ExperimentConfig parse(std::string_view text, const std::string& origin = "<config>");
  static ExperimentConfig from_file(const std::filesystem::path& file);
  std::string to_text() const;

  /// Fills image geometry from the dataset kind and checks every field.
  void finalize();
  void validate() const;
};

}  // namespace dcnet
