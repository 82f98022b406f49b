#pragma once

#include <span>
#include <vector>

#include "hybridtrack/model.hpp"
#include "hybridtrack/state.hpp"

namespace hybridtrack {

/// Minimum box extent after a residual is applied.
inline constexpr double kMinExtent = 0.01;

/// Flattened residual-predictor input: `window` recent states (positions
/// re-centred on the newest one, newest first), `p_window` consecutive
/// state differences (newest first, yaw wrapped), then the previous gain
/// correction.
struct TrpInput {
  Eigen::VectorXd values;
};

struct TransitionResidual {
  Vec7 values = Vec7::Zero();
};

/// Batched assembly over aligned histories. `history` lists 7 x B states
/// oldest first (the last one is x_{k-1}); `virtual_state` (optional) stands
/// in for states before the first entry, otherwise the first entry repeats.
nn::Matrix assemble_trp_batch(std::span<const nn::Matrix> history,
                              const nn::Matrix* virtual_state, const nn::Matrix& last_correction,
                              int window, int p_window);

struct TrpInputGrads {
  std::vector<nn::Matrix> history;
  nn::Matrix virtual_state;  // empty when there is no virtual state
  nn::Matrix last_correction;
};

/// Adjoint of assemble_trp_batch (wrapping treated as identity).
TrpInputGrads assemble_trp_backward(const nn::Matrix& input_grad, std::size_t history_len,
                                    bool has_virtual, int window, int p_window);

/// Throws ContractViolation when the trajectory has no posterior.
TrpInput assemble_trp_input(const Trajectory& traj, int p_window, int window = 20);

TransitionResidual predict_residual(const HybridModel& model, const TrpInput& input);

/// Ramp (k - birth)/t_max capped at 1, then damped by consecutive misses.
double scaling_factor(const Trajectory& traj, int frame, const TrackerConfig& cfg);

/// previous + alpha * residual with the yaw wrapped and extents floored.
StateVector compose_prior(const StateVector& previous, const Vec7& residual, double alpha);

/// Predicts and stores the prior of one trajectory for `frame`.
StateVector predict_prior(Trajectory& traj, const HybridModel& model, int frame,
                          const TrackerConfig& cfg);

/// Same as predict_prior for many trajectories with one batched network pass.
std::vector<StateVector> predict_priors(std::span<Trajectory* const> trajs,
                                        const HybridModel& model, int frame,
                                        const TrackerConfig& cfg);

}  // namespace hybridtrack
