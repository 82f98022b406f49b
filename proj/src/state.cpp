#include "hybridtrack/state.hpp"

#include <cmath>
#include <string>

#include "hybridtrack/errors.hpp"

namespace hybridtrack {

double wrap_angle(double theta) {
  if (!std::isfinite(theta)) {
    throw InvalidValueError("wrap_angle: non-finite angle");
  }
  // In-range values pass through untouched so wrapping is idempotent.
  if (theta >= -kPi && theta < kPi) {
    return theta;
  }
  constexpr double two_pi = 2.0 * kPi;
  double r = theta - two_pi * std::floor((theta + kPi) / two_pi);
  if (r >= kPi) r -= two_pi;
  if (r < -kPi) r += two_pi;
  return r;
}

double angle_residual(double a, double b) { return wrap_angle(a - b); }

void validate(const StateVector& s) {
  const Vec7 v = s.to_vector();
  if (!v.allFinite()) {
    throw InvalidValueError("state has non-finite components");
  }
  if (!(s.w > 0.0 && s.l > 0.0 && s.h > 0.0)) {
    throw InvalidValueError("state extents must be positive");
  }
  if (!(s.theta >= -kPi && s.theta < kPi)) {
    throw InvalidValueError("state yaw is not wrapped to [-pi, pi)");
  }
}

Vec7 state_difference(const StateVector& a, const StateVector& b) {
  Vec7 d = a.to_vector() - b.to_vector();
  d[6] = angle_residual(a.theta, b.theta);
  return d;
}

std::string_view to_string(TrackStatus s) {
  switch (s) {
    case TrackStatus::kTentative:
      return "tentative";
    case TrackStatus::kActive:
      return "active";
    case TrackStatus::kDead:
      return "dead";
  }
  return "unknown";
}

bool is_valid_transition(TrackStatus from, TrackStatus to) {
  switch (from) {
    case TrackStatus::kTentative:
      return to == TrackStatus::kActive || to == TrackStatus::kDead;
    case TrackStatus::kActive:
      return to == TrackStatus::kDead;
    case TrackStatus::kDead:
      return false;
  }
  return false;
}

void Trajectory::transition(TrackStatus to) {
  if (!is_valid_transition(status, to)) {
    throw ContractViolation("track " + std::to_string(track_id) + ": illegal transition " +
                            std::string(to_string(status)) + " -> " +
                            std::string(to_string(to)));
  }
  status = to;
}

std::string_view to_string(CostFunction c) {
  switch (c) {
    case CostFunction::kCIoU3D:
      return "ciou3d";
    case CostFunction::kL2:
      return "l2";
    case CostFunction::kL2PlusSize:
      return "l2size";
    case CostFunction::kCIoU2D:
      return "ciou2d";
  }
  return "unknown";
}

CostFunction parse_cost_function(std::string_view name) {
  for (auto c : {CostFunction::kCIoU3D, CostFunction::kL2, CostFunction::kL2PlusSize,
                 CostFunction::kCIoU2D}) {
    if (to_string(c) == name) return c;
  }
  throw ConfigError("unknown cost function '" + std::string(name) +
                    "' (expected ciou3d, l2, l2size or ciou2d)");
}

void TrackerConfig::validate() const {
  if (!(a_min >= 0.0 && a_min < a_max && a_max <= 1.0)) {
    throw ConfigError("require 0 <= a_min < a_max <= 1");
  }
  if (t_max < 1) throw ConfigError("t_max must be >= 1");
  if (mu_max < 1) throw ConfigError("mu_max must be >= 1");
  if (sigma_birth < 1) throw ConfigError("sigma_birth must be >= 1");
  if (!(tau_3d > 0.0)) throw ConfigError("tau_3d must be > 0");
  if (!(tau_l2 > 0.0)) throw ConfigError("tau_l2 must be > 0");
  if (p_window < 0) throw ConfigError("p_window must be >= 0");
  if (!(epsilon_init >= 0.0) || !std::isfinite(epsilon_init)) {
    throw ConfigError("epsilon_init must be finite and >= 0");
  }
}

double TrackerConfig::gate() const {
  const bool distance =
      cost_function == CostFunction::kL2 || cost_function == CostFunction::kL2PlusSize;
  return distance ? tau_l2 : tau_3d;
}

}  // namespace hybridtrack
