#pragma once

#include <string>
#include <string_view>

namespace dcnet {

// Magnitude function h(|w|, |x|).
enum class MagnitudeKind { Sphere, Ball, Tanh, Linear, Segmented, Log, Mix };

// Angular activation g(theta), theta in [0, pi].
enum class AngularKind { LinearAngle, Cosine, Sigmoid, SquareCosine };

// How |w| re-enters the magnitude function.
enum class WeightingMode { Unweighted, LinearWeighted, NonlinearCoupled, NonlinearSeparate };

struct MagnitudeSpec {
  MagnitudeKind kind = MagnitudeKind::Tanh;
  double alpha = 1.0;
  // Second slope for Segmented, log weight for Mix; unused elsewhere.
  double beta = 0.0;
  bool rho_learnable = false;

  /// Defaults used for the published experiments: alpha = 1, Segmented beta = 0.5,
  /// Mix beta = 1, and a learnable radius for every kind that has one.
  static MagnitudeSpec defaults(MagnitudeKind kind);

  /// Ball, Tanh and Segmented have a nonzero operator radius.
  bool has_radius() const noexcept;
  bool is_bounded() const noexcept;
  void validate() const;
};

struct AngularSpec {
  AngularKind kind = AngularKind::Cosine;
  double k = 0.3;  // sigmoid curvature

  void validate() const;
};

struct OperatorSpec {
  MagnitudeSpec magnitude;
  AngularSpec angular;
  WeightingMode weighting = WeightingMode::Unweighted;

  bool is_unweighted() const noexcept { return weighting == WeightingMode::Unweighted; }
  bool rho_trainable() const noexcept;
  void validate() const;
  std::string describe() const;
};

std::string_view to_string(MagnitudeKind kind);
std::string_view to_string(AngularKind kind);
std::string_view to_string(WeightingMode mode);

MagnitudeKind parse_magnitude_kind(std::string_view name);
AngularKind parse_angular_kind(std::string_view name);
WeightingMode parse_weighting_mode(std::string_view name);

inline constexpr MagnitudeKind kAllMagnitudeKinds[] = {
    MagnitudeKind::Sphere, MagnitudeKind::Ball,      MagnitudeKind::Tanh, MagnitudeKind::Linear,
    MagnitudeKind::Segmented, MagnitudeKind::Log, MagnitudeKind::Mix};
inline constexpr AngularKind kAllAngularKinds[] = {AngularKind::LinearAngle, AngularKind::Cosine,
                                                   AngularKind::Sigmoid,
                                                   AngularKind::SquareCosine};

}  // namespace dcnet
