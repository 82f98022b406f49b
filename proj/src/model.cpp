#include "hybridtrack/model.hpp"

#include "hybridtrack/errors.hpp"
#include "hybridtrack/state.hpp"

namespace hybridtrack {

namespace {
constexpr std::array<int, 3> kHeadRows = {3, 3, 1};
constexpr std::array<int, 3> kHeadOffset = {0, 3, 6};
constexpr std::array<const char*, 3> kHeadNames = {"trp.head_xyz", "trp.head_wlh",
                                                   "trp.head_yaw"};
}  // namespace

HybridModel HybridModel::create(const ModelShape& shape, std::uint64_t seed,
                                HeadInit head_init) {
  if (shape.window < 1 || shape.p_window < 0 || shape.encoder_width < 1 ||
      shape.head_width < 1 || shape.gain_hidden < 1) {
    throw ShapeError("invalid model shape");
  }
  HybridModel m;
  m.shape_ = shape;
  std::mt19937_64 rng(seed);
  const auto last_init = head_init == HeadInit::kZero ? nn::Init::kZero : nn::Init::kUniformFanIn;
  using nn::Activation;
  using nn::Init;
  m.encoder1_ = nn::make_dense(m.params_, "trp.encoder1", shape.trp_input_dim(),
                               shape.encoder_width, Activation::kReLU, Init::kUniformFanIn, rng);
  m.encoder2_ = nn::make_dense(m.params_, "trp.encoder2", shape.encoder_width,
                               shape.encoder_width, Activation::kReLU, Init::kUniformFanIn, rng);
  for (int h = 0; h < 3; ++h) {
    const std::string base = kHeadNames[h];
    m.heads_[h][0] = nn::make_dense(m.params_, base + ".hidden", shape.encoder_width,
                                    shape.head_width, Activation::kReLU, Init::kUniformFanIn, rng);
    m.heads_[h][1] = nn::make_dense(m.params_, base + ".out", shape.head_width, kHeadRows[h],
                                    Activation::kIdentity, last_init, rng);
  }
  m.gain_cell_ = nn::make_recurrent(m.params_, "gain.rnn", ModelShape::kGainInputDim,
                                    shape.gain_hidden, Init::kUniformFanIn, rng);
  m.gain_head_ = nn::make_dense(m.params_, "gain.head", shape.gain_hidden,
                                ModelShape::kGainOutputDim, Activation::kIdentity, last_init, rng);
  if (head_init == HeadInit::kRandom) {
    // Full-scale random gains couple all seven components with |K| ~ 1 and
    // the unrolled filter diverges within a few steps.
    for (const nn::DenseLayer* layer :
         {&m.heads_[0][1], &m.heads_[1][1], &m.heads_[2][1], &m.gain_head_}) {
      m.params_[layer->weight].value *= kRandomHeadScale;
      m.params_[layer->bias].value *= kRandomHeadScale;
    }
  }
  return m;
}

HybridModel HybridModel::load(const std::string& path, const ModelShape& shape) {
  HybridModel m = create(shape, 0, HeadInit::kZero);
  nn::load_checkpoint(m.params_, path);
  return m;
}

nn::Matrix HybridModel::trp_forward(const nn::Matrix& input, TrpTrace* trace) const {
  if (input.rows() != shape_.trp_input_dim()) {
    throw ShapeError("TRP input has " + std::to_string(input.rows()) + " rows, expected " +
                     std::to_string(shape_.trp_input_dim()));
  }
  nn::Tape* enc_tape = trace ? &trace->encoder : nullptr;
  nn::Matrix feat = nn::dense_forward(params_, encoder1_, input, enc_tape);
  feat = nn::dense_forward(params_, encoder2_, feat, enc_tape);

  nn::Matrix out(7, input.cols());
  for (int h = 0; h < 3; ++h) {
    nn::Tape* head_tape = trace ? &trace->heads[h] : nullptr;
    nn::Matrix y = nn::dense_forward(params_, heads_[h][0], feat, head_tape);
    y = nn::dense_forward(params_, heads_[h][1], y, head_tape);
    out.middleRows(kHeadOffset[h], kHeadRows[h]) = y;
  }
  for (Eigen::Index c = 0; c < out.cols(); ++c) out(6, c) = wrap_angle(out(6, c));
  return out;
}

nn::Matrix HybridModel::trp_backward(const TrpTrace& trace, const nn::Matrix& residual_grad) {
  nn::Matrix feat_grad = nn::Matrix::Zero(shape_.encoder_width, residual_grad.cols());
  for (int h = 0; h < 3; ++h) {
    feat_grad +=
        trace.heads[h].backward(residual_grad.middleRows(kHeadOffset[h], kHeadRows[h]), params_);
  }
  return trace.encoder.backward(feat_grad, params_);
}

HybridModel::GainOutput HybridModel::gain_forward(const nn::Matrix& features,
                                                  const nn::Matrix& hidden,
                                                  GainTrace* trace) const {
  GainOutput out;
  out.hidden = nn::rnn_step(params_, gain_cell_, features, hidden, trace ? &trace->rnn : nullptr);
  out.gains = nn::dense_forward(params_, gain_head_, out.hidden, trace ? &trace->head : nullptr);
  return out;
}

HybridModel::GainGrads HybridModel::gain_backward(const GainTrace& trace,
                                                  const nn::Matrix& gains_grad,
                                                  const nn::Matrix& hidden_grad) {
  nn::Matrix h_grad = trace.head.backward(gains_grad, params_);
  h_grad += hidden_grad;
  auto g = nn::rnn_backward(trace.rnn, h_grad, params_);
  return {std::move(g.input), std::move(g.hidden)};
}

}  // namespace hybridtrack
