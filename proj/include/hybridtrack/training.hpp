#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hybridtrack/model.hpp"
#include "hybridtrack/state.hpp"

namespace hybridtrack {

inline constexpr int kTrackletLength = 20;

/// One identity over kTrackletLength consecutive frames. `measurements` are
/// the detector boxes paired with the ground truth; when empty the ground
/// truth itself serves as the measurement. The optional context holds the
/// frames right before the window (oldest first); the filter runs over it
/// without loss so the window starts from a mature track instead of a birth.
struct Tracklet {
  std::vector<StateVector> states;
  std::vector<StateVector> measurements;
  std::vector<StateVector> context_states;
  std::vector<StateVector> context_measurements;

  /// Throws ContractViolation on a wrong length or invalid state.
  void validate() const;
};

struct LossReport {
  double states = 0.0;
  double temporal = 0.0;
  double direction = 0.0;
  double total = 0.0;
};

/// Which states feed the residual predictor while unrolling.
enum class HistorySource : std::uint8_t {
  kGroundTruth,  // teacher forcing: history and x_{k-1} are ground truth
  kPosterior,    // the filter's own posteriors, as at inference time
};

struct UnrollOptions {
  HistorySource history = HistorySource::kPosterior;
  /// Apply the birth ramp of the scaling factor (miss count is always 0).
  bool apply_scaling = true;
  int t_max = 8;
  double epsilon_init = 1e-3;
  double direction_eps = 1e-8;
};

/// Batched unroll of the filter over aligned tracklets with everything
/// recorded for reverse-mode differentiation. Step k = 1..19 predicts a prior
/// and corrects it with measurement k. Without context the posterior at k = 0
/// is measurement 0; with context it comes out of the burn-in, which is not
/// differentiated.
class FilterUnroll {
 public:
  /// Filter state at window frame 0, after any context burn-in.
  struct WindowStart {
    std::vector<nn::Matrix> history;  // newest last; the last entry is frame 0
    nn::Matrix correction;
    nn::Matrix hidden;
    std::vector<int> age;  // frames since the filter was started, per column
  };

  static WindowStart window_start(const HybridModel& model,
                                  std::span<const Tracklet* const> batch,
                                  const UnrollOptions& opts);

  /// `start` overrides the burn-in (finite-difference probes keep it fixed,
  /// mirroring the gradient, which does not flow into the burn-in).
  FilterUnroll(const HybridModel& model, std::span<const Tracklet* const> batch,
               const UnrollOptions& opts, const WindowStart* start = nullptr);

  /// 7 x B matrices for k = 1..19.
  const std::vector<nn::Matrix>& priors() const { return priors_; }
  const std::vector<nn::Matrix>& posteriors() const { return posteriors_; }
  /// 7 x B ground truth for k = 0..19.
  const std::vector<nn::Matrix>& ground_truth() const { return targets_; }

  const LossReport& loss() const { return loss_; }

  /// Accumulates d(loss().total)/d(params) into the model's gradient slots.
  void backward(HybridModel& model) const;

  /// Bits of every piecewise branch taken (ReLU masks, L1 signs, floors).
  /// Finite differences are only meaningful when all probes agree on them.
  std::vector<bool> branch_signature() const;

 private:
  struct Step {
    HybridModel::TrpTrace trp;
    HybridModel::GainTrace gain;
    nn::Matrix innovation;
    nn::Matrix gains;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> prior_floor;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> post_floor;
    Eigen::RowVectorXd alpha;  // per column
  };

  static void step_forward(const HybridModel& model, std::span<const nn::Matrix> hist,
                           const nn::Matrix* virtual_state, const nn::Matrix& measurement,
                           nn::Matrix& correction, nn::Matrix& hidden, nn::Matrix& prior,
                           nn::Matrix& posterior, Step& st);

  UnrollOptions opts_;
  Eigen::Index batch_ = 0;
  int slots_ = 0;                         // history entries up to frame 0
  std::vector<nn::Matrix> targets_;       // k = 0..19
  std::vector<nn::Matrix> measurements_;  // k = 0..19
  std::vector<nn::Matrix> history_;       // slots_ entries, then one per step
  std::vector<nn::Matrix> priors_;
  std::vector<nn::Matrix> posteriors_;
  std::vector<Step> steps_;
  LossReport loss_;
};

/// Single-tracklet unroll returning plain states (k = 1..19).
struct UnrollResult {
  std::vector<StateVector> priors;
  std::vector<StateVector> posteriors;
  LossReport loss;
};

UnrollResult unroll_filter(const HybridModel& model, const Tracklet& tracklet,
                           const UnrollOptions& opts = {});

// Losses over aligned step sequences of 7 x B matrices, averaged over the
// batch and the steps. When `grads` is non-null the gradients w.r.t. each
// input sequence are added into it (resized on first use).

double loss_states(std::span<const nn::Matrix> truth, std::span<const nn::Matrix> priors,
                   std::span<const nn::Matrix> posteriors,
                   std::vector<nn::Matrix>* prior_grads = nullptr,
                   std::vector<nn::Matrix>* posterior_grads = nullptr);

double loss_temporal(std::span<const nn::Matrix> posteriors,
                     std::vector<nn::Matrix>* posterior_grads = nullptr);

double loss_direction(std::span<const nn::Matrix> posteriors, double eps = 1e-8,
                      std::vector<nn::Matrix>* posterior_grads = nullptr);

// Single-sequence conveniences.
double loss_states(std::span<const StateVector> truth, std::span<const StateVector> priors,
                   std::span<const StateVector> posteriors);
double loss_temporal(std::span<const StateVector> posteriors);
double loss_direction(std::span<const StateVector> posteriors, double eps = 1e-8);

struct TrainOptions {
  int iterations = 1500;
  int batch_size = 128;
  nn::AdamOptions adam;
  /// Global gradient-norm clip applied before each Adam step; 0 disables it.
  double max_grad_norm = 200.0;
  std::uint64_t seed = 0;
  UnrollOptions unroll;
  /// Called after every iteration with (1-based iteration, batch loss).
  std::function<void(int, const LossReport&)> on_iteration;
};

struct TrainResult {
  std::vector<LossReport> trace;  // one entry per iteration, pre-update loss
  std::vector<double> grad_norms;  // per iteration, before clipping
  LossReport initial;             // full-dataset loss before training
  LossReport final;               // full-dataset loss after training
};

/// Minimises the total loss with Adam. Batches are drawn without replacement
/// (reshuffled each pass) when the dataset holds at least one batch, with
/// replacement otherwise. Throws DivergenceError on a non-finite loss.
TrainResult train(HybridModel& model, std::span<const Tracklet> dataset,
                  const TrainOptions& opts);

/// Mean loss over a dataset, evaluated in chunks.
LossReport evaluate_loss(const HybridModel& model, std::span<const Tracklet> dataset,
                         const UnrollOptions& opts, int chunk = 256);

/// Comma-separated trace: iteration,l_states,l_temporal,l_direction,l_total
void write_loss_trace(const std::vector<LossReport>& trace, std::ostream& out);

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator;
  /// the floor is raised to the stencil's rounding noise over `tolerance`.
  double denominator_floor = 1e-5;
  int entries_per_tensor = 2;
  std::uint64_t seed = 0;
  UnrollOptions unroll;
};

struct GradCheckReport {
  int checked = 0;
  int skipped_kinks = 0;
  int failures = 0;
  double max_relative_error = 0.0;
  std::string worst_tensor;
  bool passed() const { return failures == 0 && checked > 0; }
};

/// Fourth-order central differences of the total loss against backward() for
/// randomly chosen entries of every tensor. Entries whose +h/-h evaluations
/// take different piecewise branches are redrawn.
GradCheckReport gradient_check(HybridModel& model, std::span<const Tracklet> tracklets,
                               const GradCheckOptions& opts);

/// Random smooth tracklet (gentle turns, |yaw| < 2) for gradient checks,
/// optionally preceded by `context` frames.
Tracklet random_tracklet(std::uint64_t seed, double measurement_noise = 0.1, int context = 0);

}  // namespace hybridtrack
