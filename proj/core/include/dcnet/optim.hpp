#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcnet/network.hpp"

namespace dcnet {

enum class UpdateKind { Adam, SgdMomentum };
enum class GradientMode { Standard, Weighted };

std::string to_string(UpdateKind kind);
std::string to_string(GradientMode mode);
UpdateKind parse_update_kind(const std::string& text);
GradientMode parse_gradient_mode(const std::string& text);

struct LrPoint {
  std::size_t step;  // first step (0-based) that uses `lr`
  double lr;
};

/// Piecewise-constant learning rate.
struct LrSchedule {
  std::vector<LrPoint> points{{0, 1e-3}};

  static LrSchedule constant(double lr);
  /// base, then base*factor at each fraction of `total_steps`.
  static LrSchedule step_decay(double base, std::size_t total_steps,
                               const std::vector<double>& fractions = {0.5, 0.75},
                               double factor = 0.1);

  double at(std::size_t step) const;
  void validate() const;
};

struct ProjectionSpec {
  std::size_t interval = 1;
  double s = 1.0;
};

struct UpdateRule {
  UpdateKind kind = UpdateKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;
  LrSchedule schedule;
  GradientMode gradient_mode = GradientMode::Standard;
  std::optional<ProjectionSpec> projection;

  void validate() const;
};

/// Scales each gradient row by the norm of the matching kernel row.
template <typename T>
Tensor<T> apply_weighted_gradients(const Tensor<T>& grad, const Tensor<T>& weights);

/// Rescales every row to Euclidean norm s.
template <typename T>
Tensor<T> project_weights(const Tensor<T>& weights, double s);

/// ADAM or SGD+momentum over a network's parameters. The gradient-mode
/// transform and projection touch only unweighted decoupled kernels; radii are
/// clamped to kMinRho after every update.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(UpdateRule rule);

  /// Projects decoupled kernels once before training when projection is on,
  /// so the first update already sees norm-s kernels.
  void initialize(Network<T>& net);

  /// One update from the grads currently stored in the network. Throws
  /// NumericError (leaving every parameter untouched) on non-finite grads.
  void step(Network<T>& net);
  void step(const std::vector<ParamRef<T>>& params);

  std::size_t steps_taken() const noexcept { return t_; }
  double current_lr() const { return rule_.schedule.at(t_); }
  const UpdateRule& rule() const noexcept { return rule_; }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  UpdateRule rule_;
  std::size_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace dcnet
