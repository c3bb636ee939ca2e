#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dcnet/network.hpp"

namespace dcnet {

/// max over checked elements would hide scale, so errors are vector-relative:
/// |a - n| / max(|a|, |n|, 1e-8) over one parameter group.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

struct OperatorPointOptions {
  std::size_t patches = 3;
  std::size_t patch_dim = 4;
  std::size_t kernels = 2;
  double step = 1e-5;
  double knee_band = 0.01;     // skip draws with | |x|/rho_eff - 1 | below this
  double max_abs_cos = 0.99;   // skip draws too close to theta = 0 or pi
};

struct OperatorPointResult {
  double weights = 0;
  double input = 0;
  double rho = 0;  // zero when the operator has no radius
  double max() const { return std::max({weights, input, rho}); }
};

/// Draws a random non-degenerate (W, X, rho) for one decoupled layer and
/// compares the analytic gradient of a random linear functional of its output
/// against central differences. Radii are treated as trainable when present.
OperatorPointResult check_operator_point(const OperatorSpec& spec, std::mt19937_64& rng,
                                         const OperatorPointOptions& options = {});

struct GradcheckOptions {
  ArchitectureDescription arch;  // custom layers, 8x8 input unless overridden
  std::size_t batch = 2;
  std::uint64_t seed = 7;
  double step = 1e-5;
  double threshold = 1e-4;
  /// Moves every Ball/Segmented radius so one patch sits exactly on the knee.
  bool force_knee = false;

  /// Two 4-kernel conv layers on 2x8x8 input with a 3-class head.
  static GradcheckOptions tiny(const OperatorSpec& spec);
};

struct GroupReport {
  std::string name;
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // perturbation crossed a ReLU/pool/knee boundary
};

struct GradcheckReport {
  std::vector<GroupReport> groups;
  double threshold = 1e-4;

  bool passed() const;
  double max_rel_error() const;
  std::size_t excluded() const;
  std::string to_text() const;
};

/// Full-network check in double precision. One training-mode pass initialises
/// the moving statistics; the check itself runs in eval mode so that those
/// statistics stay fixed.
GradcheckReport gradcheck_network(const GradcheckOptions& options);

struct EquivalenceReport {
  double output = 0;  // max |difference| relative to the largest magnitude
  double grad_input = 0;
  double grad_weights = 0;
};

/// A linearly weighted Linear+Cosine decoupled layer against a bias-free
/// inner-product convolution with the same kernels.
EquivalenceReport compare_linear_weighted_to_standard(std::uint64_t seed);

}  // namespace dcnet
