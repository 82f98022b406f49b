#include "hybridtrack/motion.hpp"

#include <algorithm>
#include <cmath>

#include "hybridtrack/errors.hpp"

namespace hybridtrack {

namespace {

// Index into the history counting back from the newest state: m = 0 is
// x_{k-1}. Returns -1 for the virtual state.
int history_slot(int m, int n, bool has_virtual) {
  if (m < n) return n - 1 - m;
  return has_virtual ? -1 : 0;
}

}  // namespace

nn::Matrix assemble_trp_batch(std::span<const nn::Matrix> history,
                              const nn::Matrix* virtual_state, const nn::Matrix& last_correction,
                              int window, int p_window) {
  if (history.empty()) throw ContractViolation("TRP input needs at least one posterior");
  const int n = static_cast<int>(history.size());
  const auto batch = history.back().cols();
  const bool has_virtual = virtual_state != nullptr;
  auto state = [&](int m) -> const nn::Matrix& {
    const int slot = history_slot(m, n, has_virtual);
    return slot < 0 ? *virtual_state : history[static_cast<std::size_t>(slot)];
  };

  nn::Matrix out(static_cast<Eigen::Index>((window + p_window + 1) * 7), batch);
  const nn::Matrix& newest = history.back();
  for (int m = 0; m < window; ++m) {
    auto block = out.middleRows(7 * m, 7);
    block = state(m);
    block.topRows(3) -= newest.topRows(3);
  }
  for (int i = 1; i <= p_window; ++i) {
    auto block = out.middleRows(7 * (window + i - 1), 7);
    block = state(i - 1) - state(i);
    for (Eigen::Index c = 0; c < batch; ++c) block(6, c) = wrap_angle(block(6, c));
  }
  out.bottomRows(7) = last_correction;
  return out;
}

TrpInputGrads assemble_trp_backward(const nn::Matrix& input_grad, std::size_t history_len,
                                    bool has_virtual, int window, int p_window) {
  const int n = static_cast<int>(history_len);
  const auto batch = input_grad.cols();
  TrpInputGrads g;
  g.history.assign(history_len, nn::Matrix::Zero(7, batch));
  if (has_virtual) g.virtual_state = nn::Matrix::Zero(7, batch);
  auto slot = [&](int m) -> nn::Matrix& {
    const int s = history_slot(m, n, has_virtual);
    return s < 0 ? g.virtual_state : g.history[static_cast<std::size_t>(s)];
  };
  nn::Matrix& newest = g.history.back();
  for (int m = 0; m < window; ++m) {
    const auto block = input_grad.middleRows(7 * m, 7);
    slot(m) += block;
    newest.topRows(3) -= block.topRows(3);
  }
  for (int i = 1; i <= p_window; ++i) {
    const auto block = input_grad.middleRows(7 * (window + i - 1), 7);
    slot(i - 1) += block;
    slot(i) -= block;
  }
  g.last_correction = input_grad.bottomRows(7);
  return g;
}

TrpInput assemble_trp_input(const Trajectory& traj, int p_window, int window) {
  if (traj.posteriors.empty()) {
    throw ContractViolation("track " + std::to_string(traj.track_id) + " has no posterior");
  }
  // Only the newest max(window, p_window + 1) states are ever read.
  const std::size_t keep = static_cast<std::size_t>(std::max(window, p_window + 1));
  const std::size_t n = traj.posteriors.size();
  const std::size_t first = n > keep ? n - keep : 0;
  std::vector<nn::Matrix> history;
  history.reserve(n - first);
  for (std::size_t i = first; i < n; ++i) history.emplace_back(traj.posteriors[i].to_vector());
  nn::Matrix virt;
  if (traj.virtual_history) virt = traj.virtual_history->to_vector();
  const nn::Matrix corr = traj.last_correction;
  // Trimmed histories never reach the virtual state or the repeat rule.
  const bool use_virtual = traj.virtual_history.has_value() && first == 0;
  return {assemble_trp_batch(history, use_virtual ? &virt : nullptr, corr, window, p_window)};
}

TransitionResidual predict_residual(const HybridModel& model, const TrpInput& input) {
  const nn::Matrix out = model.trp_forward(input.values);
  return {Vec7(out.col(0))};
}

double scaling_factor(const Trajectory& traj, int frame, const TrackerConfig& cfg) {
  const int elapsed = frame - traj.birth_frame;
  if (elapsed < 0) throw ContractViolation("scaling_factor: frame precedes birth");
  double alpha = elapsed < cfg.t_max ? static_cast<double>(elapsed) / cfg.t_max : 1.0;
  const int kappa = traj.miss_count;
  if (kappa >= 1) {
    alpha = kappa < cfg.mu_max ? alpha * (1.0 - static_cast<double>(kappa) / cfg.mu_max) *
                                     (cfg.a_max - cfg.a_min)
                               : cfg.a_min;
  }
  return alpha;
}

StateVector compose_prior(const StateVector& previous, const Vec7& residual, double alpha) {
  Vec7 v = previous.to_vector() + alpha * residual;
  v[6] = wrap_angle(v[6]);
  for (int i = 3; i < 6; ++i) v[i] = std::max(v[i], kMinExtent);
  return StateVector::from_vector(v);
}

StateVector predict_prior(Trajectory& traj, const HybridModel& model, int frame,
                          const TrackerConfig& cfg) {
  Trajectory* one[] = {&traj};
  return predict_priors(one, model, frame, cfg).front();
}

std::vector<StateVector> predict_priors(std::span<Trajectory* const> trajs,
                                        const HybridModel& model, int frame,
                                        const TrackerConfig& cfg) {
  std::vector<StateVector> priors;
  if (trajs.empty()) return priors;
  const int window = model.shape().window;
  const int p = cfg.p_window;
  if (p != model.shape().p_window) {
    throw ShapeError("tracker p_window differs from the model's difference window");
  }
  nn::Matrix inputs(model.shape().trp_input_dim(), static_cast<Eigen::Index>(trajs.size()));
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    inputs.col(static_cast<Eigen::Index>(j)) = assemble_trp_input(*trajs[j], p, window).values;
  }
  const nn::Matrix residuals = model.trp_forward(inputs);
  priors.reserve(trajs.size());
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    Trajectory& t = *trajs[j];
    const double alpha = scaling_factor(t, frame, cfg);
    const StateVector prior =
        compose_prior(t.current(), Vec7(residuals.col(static_cast<Eigen::Index>(j))), alpha);
    t.last_prior = prior;
    priors.push_back(prior);
  }
  return priors;
}

}  // namespace hybridtrack
