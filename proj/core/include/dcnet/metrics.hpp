#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dcnet/checkpoint.hpp"
#include "dcnet/network.hpp"

namespace dcnet {

struct MetricsRow {
  std::size_t step = 0;
  double train_loss = 0;
  double train_acc = 0;
  double eval_loss = 0;
  double eval_acc = 0;
  std::vector<double> w_norms;  // mean kernel norm per conv layer
  std::vector<double> rhos;     // mean radius per decoupled layer that has one
};

/// Conv layers reported in metrics rows, in network order.
struct LayerColumns {
  std::vector<std::string> w_norm_layers;
  std::vector<std::string> rho_layers;

  template <typename T>
  static LayerColumns of(Network<T>& net);
};

/// Fills the per-layer columns of `row` from the current parameters.
template <typename T>
void fill_layer_stats(Network<T>& net, MetricsRow& row);

std::string metrics_header(const LayerColumns& columns);
std::string format_metrics_row(const MetricsRow& row);

/// metrics.csv holds only deterministic columns; wall-clock seconds per
/// logged step go to a separate timing file so reruns compare byte for byte.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& metrics_file, const std::filesystem::path& timing_file,
                const LayerColumns& columns);
  void write(const MetricsRow& row, double wall_time);

 private:
  std::size_t expected_w_, expected_rho_;
  std::ofstream metrics_, timing_;
  bool any_row_ = false;
  std::size_t last_step_ = 0;
};

/// Per-tensor summary of a checkpoint: name, dtype, shape, count, mean, std,
/// min, max, l2, and mean row norm for rank-2 tensors.
std::string checkpoint_summary_csv(const Checkpoint& ckpt);

}  // namespace dcnet
