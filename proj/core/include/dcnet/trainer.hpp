#pragma once

#include <filesystem>
#include <optional>

#include "dcnet/checkpoint.hpp"
#include "dcnet/config.hpp"
#include "dcnet/dataset.hpp"
#include "dcnet/network.hpp"

namespace dcnet {

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::size_t samples = 0;
};

/// Mean loss and accuracy in Mode::Eval over the first `limit` samples (0 = all).
template <typename T>
EvalResult evaluate(Network<T>& net, const Dataset& data, std::size_t batch_size,
                    std::size_t limit = 0);

/// Loads the configured dataset and applies the subset sizes.
DatasetSplit load_data(const ExperimentConfig& cfg);

/// Builds the configured network; with an init checkpoint, copies matching
/// tensors (strict or partial per config).
template <typename T>
Network<T> make_network(const ExperimentConfig& cfg, LoadReport* report = nullptr);

/// Independent deterministic streams derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct TrainOutcome {
  std::size_t steps = 0;
  EvalResult final_eval;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::filesystem::path timing;
};

/// Runs the configured number of steps. Writes config.ini, metrics.csv,
/// timing.csv and model.ckpt into cfg.output.dir. With `adversarial`, every
/// batch gets FGSM copies appended in the ratio adv_ratio : (1 - adv_ratio).
TrainOutcome train(const ExperimentConfig& cfg, const DatasetSplit& data, Network<float>& net,
                   bool adversarial = false);

}  // namespace dcnet
