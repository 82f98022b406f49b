#pragma once

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "hybridtrack/model.hpp"
#include "hybridtrack/state.hpp"

namespace hybridtrack {

/// Per-trajectory recursive estimator plugged into the tracker. The tracker
/// owns birth, association, coasting and death; a filter only predicts and
/// corrects.
class MotionFilter {
 public:
  virtual ~MotionFilter() = default;

  virtual std::string_view name() const = 0;

  /// Sets up the filter memory of a newborn trajectory.
  virtual void initialize(Trajectory& traj) const = 0;

  /// One prior per trajectory for `frame`; each prior is also stored in
  /// `last_prior`.
  virtual std::vector<StateVector> predict(std::span<Trajectory* const> trajs, int frame,
                                           const TrackerConfig& cfg) const = 0;

  /// Corrects each trajectory's `last_prior` with its matched detection.
  virtual void update(std::span<Trajectory* const> trajs,
                      std::span<const Detection* const> detections) const = 0;
};

/// Learned residual prediction plus learned recurrent gain.
class HybridFilter final : public MotionFilter {
 public:
  explicit HybridFilter(std::shared_ptr<const HybridModel> model);

  std::string_view name() const override { return "hybrid"; }
  void initialize(Trajectory& traj) const override;
  std::vector<StateVector> predict(std::span<Trajectory* const> trajs, int frame,
                                   const TrackerConfig& cfg) const override;
  void update(std::span<Trajectory* const> trajs,
              std::span<const Detection* const> detections) const override;

  const HybridModel& model() const { return *model_; }

 private:
  std::shared_ptr<const HybridModel> model_;
};

/// Noise settings of the classical baseline. Defaults are the widely used
/// AB3DMOT constant-velocity settings.
struct ConstantVelocityOptions {
  double initial_state_variance = 10.0;
  double initial_velocity_variance = 10000.0;
  double process_state_variance = 1.0;
  double process_velocity_variance = 0.01;
  double measurement_variance = 1.0;
};

/// Linear Kalman filter over [x y z w l h yaw vx vy vz] with a
/// constant-velocity transition and identity observation of the box.
class ConstantVelocityFilter final : public MotionFilter {
 public:
  explicit ConstantVelocityFilter(ConstantVelocityOptions opts = {});

  std::string_view name() const override { return "cv-kalman"; }
  void initialize(Trajectory& traj) const override;
  std::vector<StateVector> predict(std::span<Trajectory* const> trajs, int frame,
                                   const TrackerConfig& cfg) const override;
  void update(std::span<Trajectory* const> trajs,
              std::span<const Detection* const> detections) const override;

 private:
  ConstantVelocityOptions opts_;
};

}  // namespace hybridtrack
