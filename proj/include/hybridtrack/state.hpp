#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace hybridtrack {

inline constexpr int kStateDim = 7;
inline constexpr double kPi = 3.14159265358979323846;

using Vec7 = Eigen::Matrix<double, kStateDim, 1>;
using Mat7 = Eigen::Matrix<double, kStateDim, kStateDim>;

/// Wraps an angle into [-pi, pi). Throws InvalidValueError on non-finite input.
double wrap_angle(double theta);

/// wrap_angle(a - b).
double angle_residual(double a, double b);

/// Box state [x, y, z, w, l, h, theta]. z is the vertical axis; (x, y) is the
/// ground plane. Dimensions are meters, theta is the yaw in radians.
struct StateVector {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double w = 1.0;
  double l = 1.0;
  double h = 1.0;
  double theta = 0.0;

  Vec7 to_vector() const { return Vec7(x, y, z, w, l, h, theta); }
  static StateVector from_vector(const Vec7& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
  }

  friend bool operator==(const StateVector&, const StateVector&) = default;
};

/// Checks finiteness and positive extents; theta must already be wrapped.
void validate(const StateVector& s);

/// Componentwise a - b with the yaw component wrapped.
Vec7 state_difference(const StateVector& a, const StateVector& b);

struct Detection {
  StateVector state;
  double score = 1.0;
  int frame = 0;
  int source_id = 0;
};

enum class TrackStatus : std::uint8_t { kTentative, kActive, kDead };

std::string_view to_string(TrackStatus s);

/// Legal transitions are Tentative->Active, Tentative->Dead and Active->Dead.
bool is_valid_transition(TrackStatus from, TrackStatus to);

/// One tracked object. `posteriors` holds x_{k0} .. x_{k-1}; coasted frames
/// contribute their prior so the chain has no gaps.
struct Trajectory {
  int track_id = 0;
  TrackStatus status = TrackStatus::kTentative;
  int birth_frame = 0;
  std::vector<StateVector> posteriors;
  /// Stand-in for the states before birth (x_{k0} - epsilon). Absent for
  /// trajectories constructed directly; history lookups then repeat the
  /// oldest posterior.
  std::optional<StateVector> virtual_history;
  std::optional<StateVector> last_prior;
  std::optional<Detection> last_detection;
  Vec7 last_correction = Vec7::Zero();
  int miss_count = 0;
  int age = 0;
  int update_count = 0;
  bool updated_this_frame = false;
  /// Per-track filter memory (recurrent hidden state, or mean/covariance for
  /// the classical baseline).
  Eigen::VectorXd filter_state;

  const StateVector& current() const { return posteriors.back(); }

  /// Moves to `to`; throws ContractViolation on an illegal transition.
  void transition(TrackStatus to);
};

enum class CostFunction : std::uint8_t { kCIoU3D, kL2, kL2PlusSize, kCIoU2D };

std::string_view to_string(CostFunction c);
CostFunction parse_cost_function(std::string_view name);

struct TrackerConfig {
  int t_max = 8;
  double a_min = 0.1;
  double a_max = 0.9;
  int mu_max = 22;
  int sigma_birth = 5;
  double tau_3d = 1.20;
  /// Gate of the distance costs (l2, l2size) in meters.
  double tau_l2 = 3.0;
  int p_window = 10;
  double epsilon_init = 1e-3;
  CostFunction cost_function = CostFunction::kCIoU3D;
  bool report_coasted = false;
  /// Detections below this score are dropped before association.
  double min_score = 0.0;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  /// tau_l2 for the distance costs, tau_3d otherwise.
  double gate() const;
};

}  // namespace hybridtrack
