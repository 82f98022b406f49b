#include "hybridtrack/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "hybridtrack/errors.hpp"
#include "hybridtrack/motion.hpp"

namespace hybridtrack {

namespace {

using nn::Matrix;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

constexpr int kSteps = kTrackletLength - 1;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void ensure(std::vector<Matrix>* grads, std::size_t n, Eigen::Index batch) {
  if (grads == nullptr) return;
  if (grads->size() != n) grads->assign(n, Matrix::Zero(7, batch));
}

void check_aligned(std::span<const Matrix> a, std::span<const Matrix> b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": sequence lengths differ");
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].rows() != 7 || b[k].rows() != 7 || a[k].cols() != b[k].cols()) {
      throw ShapeError(std::string(what) + ": step shapes differ");
    }
  }
}

// Sum over the batch of the L1 distance between truth and estimate, yaw
// through the angle residual; adds scale * d/d(estimate) into grad.
double l1_term(const Matrix& truth, const Matrix& est, double scale, Matrix* grad) {
  double sum = 0.0;
  for (Eigen::Index b = 0; b < est.cols(); ++b) {
    for (int c = 0; c < 7; ++c) {
      const double r =
          c == 6 ? angle_residual(est(c, b), truth(c, b)) : est(c, b) - truth(c, b);
      sum += std::abs(r);
      if (grad) (*grad)(c, b) += scale * sign(r);
    }
  }
  return sum;
}

std::vector<Matrix> as_columns(std::span<const StateVector> states) {
  std::vector<Matrix> out;
  out.reserve(states.size());
  for (const StateVector& s : states) out.emplace_back(Matrix(s.to_vector()));
  return out;
}

}  // namespace

void Tracklet::validate() const {
  if (states.size() != static_cast<std::size_t>(kTrackletLength)) {
    throw ContractViolation("tracklet must hold " + std::to_string(kTrackletLength) +
                            " states, got " + std::to_string(states.size()));
  }
  if (!measurements.empty() && measurements.size() != states.size()) {
    throw ContractViolation("tracklet measurements do not align with its states");
  }
  if (!context_measurements.empty() && context_measurements.size() != context_states.size()) {
    throw ContractViolation("tracklet context measurements do not align with its states");
  }
  for (const auto* v : {&states, &measurements, &context_states, &context_measurements}) {
    for (const StateVector& s : *v) hybridtrack::validate(s);
  }
}

// ---- losses -------------------------------------------------------------------

double loss_states(std::span<const Matrix> truth, std::span<const Matrix> priors,
                   std::span<const Matrix> posteriors, std::vector<Matrix>* prior_grads,
                   std::vector<Matrix>* posterior_grads) {
  check_aligned(truth, priors, "loss_states");
  check_aligned(truth, posteriors, "loss_states");
  if (truth.empty()) return 0.0;
  const Eigen::Index batch = truth.front().cols();
  const double scale = 1.0 / (static_cast<double>(truth.size()) * static_cast<double>(batch));
  ensure(prior_grads, truth.size(), batch);
  ensure(posterior_grads, truth.size(), batch);
  double sum = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    sum += l1_term(truth[k], priors[k], scale, prior_grads ? &(*prior_grads)[k] : nullptr);
    sum += l1_term(truth[k], posteriors[k], scale,
                   posterior_grads ? &(*posterior_grads)[k] : nullptr);
  }
  return sum * scale;
}

double loss_temporal(std::span<const Matrix> posteriors, std::vector<Matrix>* posterior_grads) {
  if (posteriors.size() < 2) throw ContractViolation("loss_temporal needs at least 2 states");
  const Eigen::Index batch = posteriors.front().cols();
  const double scale =
      1.0 / (static_cast<double>(posteriors.size() - 1) * static_cast<double>(batch));
  ensure(posterior_grads, posteriors.size(), batch);
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < posteriors.size(); ++k) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int c = 0; c < 3; ++c) {
        const double d = posteriors[k + 1](c, b) - posteriors[k](c, b);
        sum += std::abs(d);
        if (posterior_grads) {
          (*posterior_grads)[k + 1](c, b) += scale * sign(d);
          (*posterior_grads)[k](c, b) -= scale * sign(d);
        }
      }
    }
  }
  return sum * scale;
}

double loss_direction(std::span<const Matrix> posteriors, double eps,
                      std::vector<Matrix>* posterior_grads) {
  if (posteriors.size() < 3) throw ContractViolation("loss_direction needs at least 3 states");
  const Eigen::Index batch = posteriors.front().cols();
  const std::size_t nv = posteriors.size() - 1;
  const double scale = 1.0 / (static_cast<double>(nv - 1) * static_cast<double>(batch));
  ensure(posterior_grads, posteriors.size(), batch);
  double sum = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    std::vector<Eigen::Vector3d> v(nv);
    std::vector<Eigen::Vector3d> d(nv);
    std::vector<double> norm(nv);
    for (std::size_t k = 0; k < nv; ++k) {
      v[k] = (posteriors[k + 1].col(b) - posteriors[k].col(b)).head<3>();
      norm[k] = v[k].norm();
      d[k] = v[k] / (norm[k] + eps);
    }
    std::vector<Eigen::Vector3d> dd(nv, Eigen::Vector3d::Zero());
    for (std::size_t k = 0; k + 1 < nv; ++k) {
      const Eigen::Vector3d e = d[k + 1] - d[k];
      const double en = e.norm();
      sum += en;
      if (en > 0.0) {
        const Eigen::Vector3d ge = scale * e / en;
        dd[k + 1] += ge;
        dd[k] -= ge;
      }
    }
    if (posterior_grads == nullptr) continue;
    for (std::size_t k = 0; k < nv; ++k) {
      if (norm[k] == 0.0) continue;  // zero subgradient at a standstill
      const double s = norm[k] + eps;
      const Eigen::Vector3d gv =
          dd[k] / s - v[k] * (v[k].dot(dd[k]) / (norm[k] * s * s));
      (*posterior_grads)[k + 1].col(b).head<3>() += gv;
      (*posterior_grads)[k].col(b).head<3>() -= gv;
    }
  }
  return sum * scale;
}

double loss_states(std::span<const StateVector> truth, std::span<const StateVector> priors,
                   std::span<const StateVector> posteriors) {
  return loss_states(as_columns(truth), as_columns(priors), as_columns(posteriors));
}

double loss_temporal(std::span<const StateVector> posteriors) {
  return loss_temporal(std::span<const Matrix>(as_columns(posteriors)));
}

double loss_direction(std::span<const StateVector> posteriors, double eps) {
  return loss_direction(std::span<const Matrix>(as_columns(posteriors)), eps);
}

// ---- unroll ---------------------------------------------------------------------

namespace {

Matrix pad_state(const Matrix& first, double eps) {
  Matrix v = first.array() - eps;
  for (Eigen::Index b = 0; b < v.cols(); ++b) {
    v(6, b) = wrap_angle(v(6, b));
    for (int c = 3; c < 6; ++c) v(c, b) = std::max(v(c, b), kMinExtent);
  }
  return v;
}

double ramp(int age, const UnrollOptions& opts) {
  return opts.apply_scaling && age < opts.t_max ? static_cast<double>(age) / opts.t_max : 1.0;
}

}  // namespace

void FilterUnroll::step_forward(const HybridModel& model, std::span<const Matrix> hist,
                                const Matrix* virtual_state, const Matrix& measurement,
                                Matrix& correction, Matrix& hidden, Matrix& prior,
                                Matrix& posterior, Step& st) {
  const ModelShape& shape = model.shape();
  const Eigen::Index batch = measurement.cols();
  const Matrix input =
      assemble_trp_batch(hist, virtual_state, correction, shape.window, shape.p_window);
  const Matrix residual = model.trp_forward(input, &st.trp);

  const Matrix& base = hist.back();
  prior = base + residual * st.alpha.asDiagonal();
  st.prior_floor = BoolArray::Constant(7, batch, false);
  for (Eigen::Index b = 0; b < batch; ++b) {
    prior(6, b) = wrap_angle(prior(6, b));
    for (int c = 3; c < 6; ++c) {
      if (prior(c, b) < kMinExtent) {
        prior(c, b) = kMinExtent;
        st.prior_floor(c, b) = true;
      }
    }
  }

  st.innovation = measurement - prior;
  Matrix features(ModelShape::kGainInputDim, batch);
  features.topRows(7) = st.innovation;
  features.middleRows(7, 7) = prior - base;
  features.bottomRows(7) = correction;
  for (Eigen::Index b = 0; b < batch; ++b) {
    st.innovation(6, b) = wrap_angle(st.innovation(6, b));
    features(6, b) = st.innovation(6, b);
    features(13, b) = wrap_angle(features(13, b));
  }
  auto gain = model.gain_forward(features, hidden, &st.gain);
  st.gains = std::move(gain.gains);
  hidden = std::move(gain.hidden);

  correction.resize(7, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Map<const Eigen::Matrix<double, 7, 7, Eigen::RowMajor>> kmat(
        st.gains.col(b).data());
    correction.col(b) = kmat * st.innovation.col(b);
  }
  posterior = prior + correction;
  st.post_floor = BoolArray::Constant(7, batch, false);
  for (Eigen::Index b = 0; b < batch; ++b) {
    posterior(6, b) = wrap_angle(posterior(6, b));
    for (int c = 3; c < 6; ++c) {
      if (posterior(c, b) < kMinExtent) {
        posterior(c, b) = kMinExtent;
        correction(c, b) = kMinExtent - prior(c, b);
        st.post_floor(c, b) = true;
      }
    }
  }
}

FilterUnroll::WindowStart FilterUnroll::window_start(const HybridModel& model,
                                                      std::span<const Tracklet* const> batch,
                                                      const UnrollOptions& opts) {
  const ModelShape& shape = model.shape();
  const bool teacher = opts.history == HistorySource::kGroundTruth;
  const auto nbatch = static_cast<Eigen::Index>(batch.size());
  const int slots = std::max(shape.window, shape.p_window + 1);

  // `slots` history entries ending with the state at frame 0, the previous
  // correction and the gain memory. Tracklets that open at a birth pad the
  // history with the virtual state; the others first run the filter over
  // their context so the window starts from a mature gain memory.
  WindowStart ws;
  ws.history.assign(static_cast<std::size_t>(slots), Matrix(7, nbatch));
  ws.correction = Matrix::Zero(7, nbatch);
  ws.hidden = Matrix::Zero(shape.gain_hidden, nbatch);
  ws.age.assign(batch.size(), 0);

  Matrix first(7, nbatch);
  for (Eigen::Index b = 0; b < nbatch; ++b) {
    const Tracklet& t = *batch[static_cast<std::size_t>(b)];
    first.col(b) = (teacher || t.measurements.empty() ? t.states[0] : t.measurements[0]).to_vector();
  }
  const Matrix birth_pad = pad_state(first, opts.epsilon_init);
  for (int i = 0; i + 1 < slots; ++i) ws.history[static_cast<std::size_t>(i)] = birth_pad;
  ws.history.back() = first;

  std::map<std::size_t, std::vector<Eigen::Index>> by_context;
  for (Eigen::Index b = 0; b < nbatch; ++b) {
    const std::size_t c = batch[static_cast<std::size_t>(b)]->context_states.size();
    if (c > 0) by_context[c].push_back(b);
  }
  for (const auto& [ctx, cols] : by_context) {
    const auto nb = static_cast<Eigen::Index>(cols.size());
    // Frames: context[0..ctx-1] then window frame 0.
    auto frame_matrix = [&](std::size_t j, bool truth) {
      Matrix m(7, nb);
      for (Eigen::Index i = 0; i < nb; ++i) {
        const Tracklet& t = *batch[static_cast<std::size_t>(cols[static_cast<std::size_t>(i)])];
        const StateVector* s = nullptr;
        if (j < ctx) {
          s = truth || t.context_measurements.empty() ? &t.context_states[j]
                                                       : &t.context_measurements[j];
        } else {
          s = truth || t.measurements.empty() ? &t.states[0] : &t.measurements[0];
        }
        m.col(i) = s->to_vector();
      }
      return m;
    };
    std::vector<Matrix> hist;
    hist.push_back(frame_matrix(0, true));
    const Matrix pad = pad_state(hist.front(), opts.epsilon_init);
    Matrix corr = Matrix::Zero(7, nb);
    Matrix hid = Matrix::Zero(shape.gain_hidden, nb);
    Matrix prior;
    Matrix posterior;
    Step scratch;
    for (std::size_t j = 1; j <= ctx; ++j) {
      scratch.alpha = Eigen::RowVectorXd::Constant(nb, ramp(static_cast<int>(j), opts));
      step_forward(model, hist, &pad, frame_matrix(j, false), corr, hid, prior, posterior,
                   scratch);
      // Ground-truth history keeps the burn-in stable whatever the current
      // parameters do; what carries over is the gain memory and correction.
      hist.push_back(frame_matrix(j, true));
    }
    for (Eigen::Index i = 0; i < nb; ++i) {
      const Eigen::Index b = cols[static_cast<std::size_t>(i)];
      for (int s = 0; s < slots; ++s) {
        // Slot s counts back from frame 0 at slots - 1.
        const int idx = static_cast<int>(hist.size()) - slots + s;
        const Matrix& src = idx >= 0 ? hist[static_cast<std::size_t>(idx)] : pad;
        ws.history[static_cast<std::size_t>(s)].col(b) = src.col(i);
      }
      ws.correction.col(b) = corr.col(i);
      ws.hidden.col(b) = hid.col(i);
      ws.age[static_cast<std::size_t>(b)] = static_cast<int>(ctx);
    }
  }
  return ws;
}

FilterUnroll::FilterUnroll(const HybridModel& model, std::span<const Tracklet* const> batch,
                           const UnrollOptions& opts, const WindowStart* start)
    : opts_(opts), batch_(static_cast<Eigen::Index>(batch.size())) {
  if (batch.empty()) throw ContractViolation("empty training batch");
  if (opts.t_max < 1) throw InvalidValueError("t_max must be at least 1");
  for (const Tracklet* t : batch) t->validate();

  const bool teacher = opts.history == HistorySource::kGroundTruth;
  targets_.assign(kTrackletLength, Matrix(7, batch_));
  measurements_.assign(kTrackletLength, Matrix(7, batch_));
  for (Eigen::Index b = 0; b < batch_; ++b) {
    const Tracklet& t = *batch[static_cast<std::size_t>(b)];
    for (int k = 0; k < kTrackletLength; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      targets_[kk].col(b) = t.states[kk].to_vector();
      measurements_[kk].col(b) =
          (t.measurements.empty() ? t.states[kk] : t.measurements[kk]).to_vector();
    }
  }

  WindowStart ws = start ? *start : window_start(model, batch, opts);
  if (ws.correction.cols() != batch_ || ws.age.size() != batch.size()) {
    throw ShapeError("window start does not match the batch");
  }
  slots_ = static_cast<int>(ws.history.size());
  history_ = std::move(ws.history);
  Matrix correction = std::move(ws.correction);
  Matrix hidden = std::move(ws.hidden);
  const std::vector<int>& age0 = ws.age;

  priors_.reserve(kSteps);
  posteriors_.reserve(kSteps);
  steps_.resize(kSteps);
  for (int k = 1; k < kTrackletLength; ++k) {
    Step& st = steps_[static_cast<std::size_t>(k - 1)];
    st.alpha.resize(batch_);
    for (Eigen::Index b = 0; b < batch_; ++b) {
      st.alpha[b] = ramp(age0[static_cast<std::size_t>(b)] + k, opts);
    }
    const auto hist = std::span<const Matrix>(history_.data(), history_.size());
    Matrix prior;
    Matrix posterior;
    step_forward(model, hist, nullptr, measurements_[static_cast<std::size_t>(k)], correction,
                 hidden, prior, posterior, st);
    history_.push_back(teacher ? targets_[static_cast<std::size_t>(k)] : posterior);
    priors_.push_back(std::move(prior));
    posteriors_.push_back(std::move(posterior));
  }

  const std::span<const Matrix> truth(targets_.data() + 1, kSteps);
  loss_.states = loss_states(truth, priors_, posteriors_);
  loss_.temporal = loss_temporal(std::span<const Matrix>(posteriors_));
  loss_.direction = loss_direction(std::span<const Matrix>(posteriors_), opts.direction_eps);
  loss_.total = loss_.states + loss_.temporal + loss_.direction;
  if (!std::isfinite(loss_.total)) throw DivergenceError("training loss is not finite");
}

void FilterUnroll::backward(HybridModel& model) const {
  const ModelShape& shape = model.shape();
  const std::span<const Matrix> truth(targets_.data() + 1, kSteps);
  std::vector<Matrix> g_prior;
  std::vector<Matrix> g_post;
  loss_states(truth, priors_, posteriors_, &g_prior, &g_post);
  loss_temporal(std::span<const Matrix>(posteriors_), &g_post);
  loss_direction(std::span<const Matrix>(posteriors_), opts_.direction_eps, &g_post);

  const bool teacher = opts_.history == HistorySource::kGroundTruth;
  Matrix g_corr_next = Matrix::Zero(7, batch_);
  Matrix g_hidden_next = Matrix::Zero(shape.gain_hidden, batch_);

  for (int k = kSteps; k >= 1; --k) {
    const auto ks = static_cast<std::size_t>(k - 1);  // step slot and posterior index
    const Step& st = steps_[ks];
    Matrix gp = g_prior[ks];
    Matrix g_kinnov(7, batch_);
    for (Eigen::Index b = 0; b < batch_; ++b) {
      for (int c = 0; c < 7; ++c) {
        if (st.post_floor(c, b)) {
          gp(c, b) -= g_corr_next(c, b);
          g_kinnov(c, b) = 0.0;
        } else {
          gp(c, b) += g_post[ks](c, b);
          g_kinnov(c, b) = g_post[ks](c, b) + g_corr_next(c, b);
        }
      }
    }

    Matrix g_gains(ModelShape::kGainOutputDim, batch_);
    Matrix g_innov(7, batch_);
    for (Eigen::Index b = 0; b < batch_; ++b) {
      const Eigen::Map<const Eigen::Matrix<double, 7, 7, Eigen::RowMajor>> kmat(
          st.gains.col(b).data());
      Eigen::Map<Eigen::Matrix<double, 7, 7, Eigen::RowMajor>> gk(g_gains.col(b).data());
      gk = g_kinnov.col(b) * st.innovation.col(b).transpose();
      g_innov.col(b) = kmat.transpose() * g_kinnov.col(b);
    }
    auto gg = model.gain_backward(st.gain, g_gains, g_hidden_next);
    g_hidden_next = std::move(gg.hidden);
    g_innov += gg.features.topRows(7);
    const Matrix g_delta = gg.features.middleRows(7, 7);
    Matrix g_corr_prev = gg.features.bottomRows(7);

    gp -= g_innov;
    gp += g_delta;
    Matrix g_base = -g_delta;
    Matrix g_residual = Matrix::Zero(7, batch_);
    for (Eigen::Index b = 0; b < batch_; ++b) {
      for (int c = 0; c < 7; ++c) {
        if (st.prior_floor(c, b)) continue;
        g_base(c, b) += gp(c, b);
        g_residual(c, b) = st.alpha[b] * gp(c, b);
      }
    }

    const Matrix g_input = model.trp_backward(st.trp, g_residual);
    // Step k read history_[0 .. slots_ + k - 2]; entry slots_ - 1 + j holds
    // posterior j, and entries up to frame 0 are data.
    const std::size_t hist_len = static_cast<std::size_t>(slots_ + k - 1);
    const auto gi =
        assemble_trp_backward(g_input, hist_len, false, shape.window, shape.p_window);
    g_corr_prev += gi.last_correction;
    if (!teacher) {
      for (std::size_t idx = static_cast<std::size_t>(slots_); idx < hist_len; ++idx) {
        g_post[idx - static_cast<std::size_t>(slots_)] += gi.history[idx];
      }
      if (k >= 2) g_post[ks - 1] += g_base;
    }
    g_corr_next = std::move(g_corr_prev);
  }
}

std::vector<bool> FilterUnroll::branch_signature() const {
  std::vector<bool> bits;
  auto add_dense = [&bits](const nn::Tape& tape) {
    for (std::size_t i = 0; i < tape.size(); ++i) {
      const auto* rec = std::get_if<nn::DenseRecord>(&tape[i]);
      if (rec == nullptr || rec->layer.activation != nn::Activation::kReLU) continue;
      for (Eigen::Index j = 0; j < rec->output.size(); ++j) {
        bits.push_back(rec->output.data()[j] > 0.0);
      }
    }
  };
  auto add_signs = [&bits](const Matrix& a, const Matrix& b, int rows) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      for (int c = 0; c < rows; ++c) {
        const double r = c == 6 ? angle_residual(a(c, j), b(c, j)) : a(c, j) - b(c, j);
        bits.push_back(r > 0.0);
        bits.push_back(r < 0.0);
      }
    }
  };
  for (const Step& st : steps_) {
    add_dense(st.trp.encoder);
    for (const auto& h : st.trp.heads) add_dense(h);
    for (Eigen::Index j = 0; j < st.prior_floor.size(); ++j) {
      bits.push_back(st.prior_floor.data()[j]);
      bits.push_back(st.post_floor.data()[j]);
    }
  }
  for (int k = 0; k < kSteps; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    add_signs(priors_[ks], targets_[ks + 1], 7);
    add_signs(posteriors_[ks], targets_[ks + 1], 7);
    if (k + 1 < kSteps) add_signs(posteriors_[ks + 1], posteriors_[ks], 3);
  }
  return bits;
}

UnrollResult unroll_filter(const HybridModel& model, const Tracklet& tracklet,
                           const UnrollOptions& opts) {
  const Tracklet* one[] = {&tracklet};
  const FilterUnroll u(model, one, opts);
  UnrollResult r;
  for (const Matrix& m : u.priors()) r.priors.push_back(StateVector::from_vector(m.col(0)));
  for (const Matrix& m : u.posteriors()) {
    r.posteriors.push_back(StateVector::from_vector(m.col(0)));
  }
  r.loss = u.loss();
  return r;
}

// ---- optimisation -----------------------------------------------------------

LossReport evaluate_loss(const HybridModel& model, std::span<const Tracklet> dataset,
                         const UnrollOptions& opts, int chunk) {
  LossReport total;
  if (dataset.empty()) return total;
  chunk = std::max(chunk, 1);
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(dataset.size(), start + static_cast<std::size_t>(chunk));
    std::vector<const Tracklet*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&dataset[i]);
    const FilterUnroll u(model, batch, opts);
    const double w = static_cast<double>(end - start);
    total.states += w * u.loss().states;
    total.temporal += w * u.loss().temporal;
    total.direction += w * u.loss().direction;
  }
  const double n = static_cast<double>(dataset.size());
  total.states /= n;
  total.temporal /= n;
  total.direction /= n;
  total.total = total.states + total.temporal + total.direction;
  return total;
}

TrainResult train(HybridModel& model, std::span<const Tracklet> dataset,
                  const TrainOptions& opts) {
  if (dataset.empty()) throw ContractViolation("training dataset is empty");
  if (opts.iterations < 0 || opts.batch_size < 1) {
    throw InvalidValueError("iterations must be >= 0 and batch_size >= 1");
  }
  if (!(opts.max_grad_norm >= 0.0)) throw InvalidValueError("max_grad_norm must be >= 0");
  for (const Tracklet& t : dataset) t.validate();

  TrainResult result;
  result.initial = evaluate_loss(model, dataset, opts.unroll);
  result.trace.reserve(static_cast<std::size_t>(opts.iterations));
  result.grad_norms.reserve(static_cast<std::size_t>(opts.iterations));

  std::mt19937_64 rng(opts.seed);
  const std::size_t n = dataset.size();
  const auto bs = static_cast<std::size_t>(opts.batch_size);
  const bool with_replacement = n < bs;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n;  // forces a shuffle on first use
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  model.params().zero_grad();
  for (int it = 1; it <= opts.iterations; ++it) {
    std::vector<const Tracklet*> batch;
    batch.reserve(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      if (with_replacement) {
        batch.push_back(&dataset[pick(rng)]);
        continue;
      }
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&dataset[order[cursor++]]);
    }
    const FilterUnroll u(model, batch, opts.unroll);
    u.backward(model);
    result.grad_norms.push_back(nn::clip_grad_norm(model.params(), opts.max_grad_norm));
    nn::adam_step(model.params(), opts.adam, it);
    result.trace.push_back(u.loss());
    if (opts.on_iteration) opts.on_iteration(it, u.loss());
  }
  if (!model.params().all_finite()) throw DivergenceError("parameters became non-finite");
  result.final = evaluate_loss(model, dataset, opts.unroll);
  return result;
}

void write_loss_trace(const std::vector<LossReport>& trace, std::ostream& out) {
  out << "iteration,l_states,l_temporal,l_direction,l_total\n";
  const auto old = out.precision(10);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const LossReport& r = trace[i];
    out << (i + 1) << ',' << r.states << ',' << r.temporal << ',' << r.direction << ','
        << r.total << '\n';
  }
  out.precision(old);
}

// ---- gradient check ---------------------------------------------------------------

GradCheckReport gradient_check(HybridModel& model, std::span<const Tracklet> tracklets,
                               const GradCheckOptions& opts) {
  GradCheckReport report;
  std::mt19937_64 rng(opts.seed);
  nn::Parameters& params = model.params();
  for (const Tracklet& tracklet : tracklets) {
    const Tracklet* one[] = {&tracklet};
    params.zero_grad();
    // The burn-in passes no gradient, so the probes hold it fixed as well.
    const FilterUnroll::WindowStart start = FilterUnroll::window_start(model, one, opts.unroll);
    const FilterUnroll base(model, one, opts.unroll, &start);
    base.backward(model);
    const std::vector<bool> signature = base.branch_signature();
    // Rounding noise of the stencil grows with the loss magnitude; below it a
    // relative comparison says nothing, so the denominator never drops there.
    // The unrolled loss sums hundreds of terms through a recurrence and
    // carries on the order of 1e2 ulps of rounding.
    const double noise =
        100.0 * std::numeric_limits<double>::epsilon() * std::abs(base.loss().total) / opts.step;
    const double floor = std::max(opts.denominator_floor, noise / opts.tolerance);
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (const nn::Tensor& t : params) analytic.push_back(t.grad);
    params.zero_grad();

    for (std::size_t ti = 0; ti < params.size(); ++ti) {
      nn::Tensor& tensor = params[ti];
      const auto count = static_cast<std::size_t>(tensor.value.size());
      std::uniform_int_distribution<std::size_t> pick(0, count - 1);
      int done = 0;
      // A few redraws per wanted entry; kinks are rare but not impossible.
      for (int attempt = 0; done < opts.entries_per_tensor &&
                            attempt < 4 * opts.entries_per_tensor + 4;
           ++attempt) {
        const std::size_t e = pick(rng);
        double& v = tensor.value.data()[e];
        const double saved = v;
        // Fourth-order central stencil; the unrolled loss is strongly curved
        // under random heads, so the plain two-point rule is too coarse.
        std::array<double, 4> losses{};
        bool kink = false;
        constexpr std::array<double, 4> kOffsets = {2.0, 1.0, -1.0, -2.0};
        for (std::size_t q = 0; q < kOffsets.size(); ++q) {
          v = saved + kOffsets[q] * opts.step;
          const FilterUnroll probe(model, one, opts.unroll, &start);
          losses[q] = probe.loss().total;
          kink = kink || probe.branch_signature() != signature;
        }
        v = saved;
        if (kink) {
          report.skipped_kinks += 1;
          continue;
        }
        const double numeric =
            (8.0 * (losses[1] - losses[2]) - (losses[0] - losses[3])) / (12.0 * opts.step);
        const double a = analytic[ti].data()[e];
        const double denom =
            std::max({std::abs(a), std::abs(numeric), floor});
        const double rel = std::abs(a - numeric) / denom;
        report.checked += 1;
        done += 1;
        if (rel > report.max_relative_error) {
          report.max_relative_error = rel;
          report.worst_tensor = tensor.name;
        }
        if (rel > opts.tolerance) report.failures += 1;
      }
    }
  }
  return report;
}

Tracklet random_tracklet(std::uint64_t seed, double measurement_noise, int context) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double dt = 0.1;
  double x = 40.0 * (u01(rng) - 0.5);
  double y = 40.0 * (u01(rng) - 0.5);
  const double z = 0.8 + 0.2 * u01(rng);
  const double w = 1.6 + 0.4 * u01(rng);
  const double l = 3.8 + 1.0 * u01(rng);
  const double h = 1.4 + 0.3 * u01(rng);
  double yaw = 2.0 * (u01(rng) - 0.5);
  const double speed = 2.0 + 8.0 * u01(rng);
  const double turn = 0.4 * (u01(rng) - 0.5);
  Tracklet t;
  const int total = std::max(context, 0) + kTrackletLength;
  for (int k = 0; k < total; ++k) {
    const StateVector truth{x, y, z, w, l, h, yaw};
    const StateVector m{x + measurement_noise * noise(rng), y + measurement_noise * noise(rng),
                        z + measurement_noise * noise(rng),
                        w + 0.3 * measurement_noise * noise(rng),
                        l + 0.3 * measurement_noise * noise(rng),
                        h + 0.3 * measurement_noise * noise(rng),
                        yaw + 0.2 * measurement_noise * noise(rng)};
    const bool in_context = k < context;
    (in_context ? t.context_states : t.states).push_back(truth);
    (in_context ? t.context_measurements : t.measurements).push_back(m);
    x += speed * std::cos(yaw) * dt;
    y += speed * std::sin(yaw) * dt;
    yaw += turn * dt;
  }
  return t;
}

}  // namespace hybridtrack
