#pragma once

#include <optional>
#include <utility>

#include "hybridtrack/model.hpp"
#include "hybridtrack/state.hpp"

namespace hybridtrack {

/// Features of the recurrent gain estimator.
struct GainInput {
  Vec7 innovation = Vec7::Zero();           // r - H x_prior, yaw wrapped
  Vec7 prior_delta = Vec7::Zero();          // x_prior - x_{k-1}, yaw wrapped
  Vec7 previous_correction = Vec7::Zero();  // correction applied at the last update

  Eigen::Matrix<double, 21, 1> flatten() const;
};

/// 7x7 gain. The observation map is the identity.
struct KalmanGain {
  Mat7 matrix = Mat7::Zero();
};

GainInput make_gain_input(const StateVector& prior, const StateVector& previous,
                          const StateVector& measurement, const Vec7& previous_correction);

/// Runs one recurrent step and the linear gain head (49 outputs, row-major).
std::pair<KalmanGain, Eigen::VectorXd> estimate_gain(const HybridModel& model,
                                                     const GainInput& input,
                                                     const Eigen::VectorXd& hidden);

/// Posterior x = prior + K (r - prior), yaw wrapped before the product and
/// after the sum, extents floored. Appends the posterior to `traj`, stores the
/// applied correction, resets the miss counter, and commits `new_hidden` when
/// given.
StateVector update_posterior(Trajectory& traj, const StateVector& prior, const Detection& det,
                             const KalmanGain& gain,
                             std::optional<Eigen::VectorXd> new_hidden = std::nullopt);

/// Bookkeeping shared by every filter after a successful update: appends the
/// posterior, stores the correction, resets the miss counter.
void commit_update(Trajectory& traj, const StateVector& prior, const Detection& det,
                   const StateVector& posterior, const Vec7& correction);

/// The arithmetic of update_posterior without touching a trajectory; returns
/// (posterior, applied correction).
std::pair<StateVector, Vec7> apply_gain(const StateVector& prior, const StateVector& measurement,
                                        const Mat7& gain);

}  // namespace hybridtrack
