#include "hybridtrack/update.hpp"

#include <algorithm>

#include "hybridtrack/errors.hpp"
#include "hybridtrack/motion.hpp"

namespace hybridtrack {

Eigen::Matrix<double, 21, 1> GainInput::flatten() const {
  Eigen::Matrix<double, 21, 1> v;
  v << innovation, prior_delta, previous_correction;
  return v;
}

GainInput make_gain_input(const StateVector& prior, const StateVector& previous,
                          const StateVector& measurement, const Vec7& previous_correction) {
  return {state_difference(measurement, prior), state_difference(prior, previous),
          previous_correction};
}

std::pair<KalmanGain, Eigen::VectorXd> estimate_gain(const HybridModel& model,
                                                     const GainInput& input,
                                                     const Eigen::VectorXd& hidden) {
  if (hidden.size() != model.shape().gain_hidden) {
    throw ShapeError("gain hidden state has " + std::to_string(hidden.size()) +
                     " entries, expected " + std::to_string(model.shape().gain_hidden));
  }
  const nn::Matrix features = input.flatten();
  auto out = model.gain_forward(features, hidden);
  KalmanGain gain;
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 7; ++c) gain.matrix(r, c) = out.gains(7 * r + c, 0);
  }
  return {gain, Eigen::VectorXd(out.hidden.col(0))};
}

std::pair<StateVector, Vec7> apply_gain(const StateVector& prior, const StateVector& measurement,
                                        const Mat7& gain) {
  const Vec7 innovation = state_difference(measurement, prior);
  Vec7 correction = gain * innovation;
  const Vec7 p = prior.to_vector();
  Vec7 post = p + correction;
  post[6] = wrap_angle(post[6]);
  for (int i = 3; i < 6; ++i) {
    if (post[i] < kMinExtent) {
      post[i] = kMinExtent;
      correction[i] = post[i] - p[i];
    }
  }
  return {StateVector::from_vector(post), correction};
}

StateVector update_posterior(Trajectory& traj, const StateVector& prior, const Detection& det,
                             const KalmanGain& gain, std::optional<Eigen::VectorXd> new_hidden) {
  auto [posterior, correction] = apply_gain(prior, det.state, gain.matrix);
  commit_update(traj, prior, det, posterior, correction);
  if (new_hidden) traj.filter_state = std::move(*new_hidden);
  return posterior;
}

void commit_update(Trajectory& traj, const StateVector& prior, const Detection& det,
                   const StateVector& posterior, const Vec7& correction) {
  if (traj.status == TrackStatus::kDead) {
    throw ContractViolation("track " + std::to_string(traj.track_id) + " is dead");
  }
  traj.posteriors.push_back(posterior);
  traj.last_prior = prior;
  traj.last_detection = det;
  traj.last_correction = correction;
  traj.miss_count = 0;
  traj.update_count += 1;
  traj.updated_this_frame = true;
}

}  // namespace hybridtrack
