#include "hybridtrack/filters.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>

#include "hybridtrack/errors.hpp"
#include "hybridtrack/motion.hpp"
#include "hybridtrack/update.hpp"

namespace hybridtrack {

HybridFilter::HybridFilter(std::shared_ptr<const HybridModel> model) : model_(std::move(model)) {
  if (!model_) throw ContractViolation("HybridFilter needs a model");
}

void HybridFilter::initialize(Trajectory& traj) const {
  traj.filter_state = Eigen::VectorXd::Zero(model_->shape().gain_hidden);
}

std::vector<StateVector> HybridFilter::predict(std::span<Trajectory* const> trajs, int frame,
                                               const TrackerConfig& cfg) const {
  return predict_priors(trajs, *model_, frame, cfg);
}

void HybridFilter::update(std::span<Trajectory* const> trajs,
                          std::span<const Detection* const> detections) const {
  if (trajs.size() != detections.size()) throw ShapeError("update: size mismatch");
  if (trajs.empty()) return;
  const int hd = model_->shape().gain_hidden;
  const auto batch = static_cast<Eigen::Index>(trajs.size());
  nn::Matrix features(ModelShape::kGainInputDim, batch);
  nn::Matrix hidden(hd, batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const Trajectory& t = *trajs[static_cast<std::size_t>(j)];
    if (!t.last_prior) throw ContractViolation("update before predict");
    if (t.filter_state.size() != hd) throw ShapeError("gain hidden state has wrong size");
    features.col(j) = make_gain_input(*t.last_prior, t.current(),
                                      detections[static_cast<std::size_t>(j)]->state,
                                      t.last_correction)
                          .flatten();
    hidden.col(j) = t.filter_state;
  }
  const auto out = model_->gain_forward(features, hidden);
  for (Eigen::Index j = 0; j < batch; ++j) {
    Trajectory& t = *trajs[static_cast<std::size_t>(j)];
    KalmanGain gain;
    for (int r = 0; r < 7; ++r) {
      for (int c = 0; c < 7; ++c) gain.matrix(r, c) = out.gains(7 * r + c, j);
    }
    const StateVector prior = *t.last_prior;
    update_posterior(t, prior, *detections[static_cast<std::size_t>(j)], gain,
                     Eigen::VectorXd(out.hidden.col(j)));
  }
}

// ---- classical constant-velocity baseline ------------------------------------

namespace {

constexpr int kCvDim = 10;
using CvVec = Eigen::Matrix<double, kCvDim, 1>;
using CvMat = Eigen::Matrix<double, kCvDim, kCvDim>;

struct CvState {
  CvVec mean;
  CvMat cov;
};

CvState unpack(const Eigen::VectorXd& packed) {
  if (packed.size() != kCvDim + kCvDim * kCvDim) {
    throw ShapeError("constant-velocity filter state has wrong size");
  }
  CvState s;
  s.mean = packed.head<kCvDim>();
  s.cov = Eigen::Map<const CvMat>(packed.data() + kCvDim);
  return s;
}

Eigen::VectorXd pack(const CvState& s) {
  Eigen::VectorXd out(kCvDim + kCvDim * kCvDim);
  out.head<kCvDim>() = s.mean;
  Eigen::Map<CvMat>(out.data() + kCvDim) = s.cov;
  return out;
}

StateVector box_of(const CvVec& mean) {
  Vec7 v = mean.head<7>();
  v[6] = wrap_angle(v[6]);
  for (int i = 3; i < 6; ++i) v[i] = std::max(v[i], kMinExtent);
  return StateVector::from_vector(v);
}

}  // namespace

ConstantVelocityFilter::ConstantVelocityFilter(ConstantVelocityOptions opts) : opts_(opts) {}

void ConstantVelocityFilter::initialize(Trajectory& traj) const {
  CvState s;
  s.mean.setZero();
  s.mean.head<7>() = traj.current().to_vector();
  s.cov.setZero();
  for (int i = 0; i < 7; ++i) s.cov(i, i) = opts_.initial_state_variance;
  for (int i = 7; i < kCvDim; ++i) s.cov(i, i) = opts_.initial_velocity_variance;
  traj.filter_state = pack(s);
}

std::vector<StateVector> ConstantVelocityFilter::predict(std::span<Trajectory* const> trajs,
                                                         int /*frame*/,
                                                         const TrackerConfig& /*cfg*/) const {
  CvMat f = CvMat::Identity();
  for (int i = 0; i < 3; ++i) f(i, 7 + i) = 1.0;
  CvMat q = CvMat::Zero();
  for (int i = 0; i < 7; ++i) q(i, i) = opts_.process_state_variance;
  for (int i = 7; i < kCvDim; ++i) q(i, i) = opts_.process_velocity_variance;

  std::vector<StateVector> priors;
  priors.reserve(trajs.size());
  for (Trajectory* t : trajs) {
    CvState s = unpack(t->filter_state);
    s.mean = f * s.mean;
    s.mean[6] = wrap_angle(s.mean[6]);
    s.cov = f * s.cov * f.transpose() + q;
    t->filter_state = pack(s);
    const StateVector prior = box_of(s.mean);
    t->last_prior = prior;
    priors.push_back(prior);
  }
  return priors;
}

void ConstantVelocityFilter::update(std::span<Trajectory* const> trajs,
                                    std::span<const Detection* const> detections) const {
  if (trajs.size() != detections.size()) throw ShapeError("update: size mismatch");
  Eigen::Matrix<double, 7, kCvDim> hmat = Eigen::Matrix<double, 7, kCvDim>::Zero();
  hmat.leftCols<7>().setIdentity();
  const Mat7 r = Mat7::Identity() * opts_.measurement_variance;
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    Trajectory& t = *trajs[j];
    const Detection& det = *detections[j];
    CvState s = unpack(t.filter_state);
    Vec7 innovation = det.state.to_vector() - s.mean.head<7>();
    // A heading flipped by a half turn describes the same box.
    double dyaw = angle_residual(det.state.theta, s.mean[6]);
    if (dyaw > 0.5 * kPi) dyaw -= kPi;
    if (dyaw < -0.5 * kPi) dyaw += kPi;
    innovation[6] = dyaw;
    const Mat7 sys = hmat * s.cov * hmat.transpose() + r;
    const Eigen::Matrix<double, kCvDim, 7> gain = s.cov * hmat.transpose() * sys.inverse();
    s.mean += gain * innovation;
    s.mean[6] = wrap_angle(s.mean[6]);
    s.cov = (CvMat::Identity() - gain * hmat) * s.cov;
    t.filter_state = pack(s);
    const StateVector prior = *t.last_prior;
    const StateVector posterior = box_of(s.mean);
    commit_update(t, prior, det, posterior, state_difference(posterior, prior));
  }
}

}  // namespace hybridtrack
