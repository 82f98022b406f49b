#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "hybridtrack/nn.hpp"

namespace hybridtrack {

/// Architecture sizes of the learnable filter.
struct ModelShape {
  int window = 20;         // past states fed to the residual predictor
  int p_window = 10;       // posterior differences fed to the residual predictor
  int encoder_width = 128;
  int head_width = 64;
  int gain_hidden = 64;

  int trp_input_dim() const { return (window + p_window + 1) * 7; }
  static constexpr int kGainInputDim = 21;
  static constexpr int kGainOutputDim = 49;
};

enum class HeadInit : std::uint8_t {
  kZero,    // final layers of every head start at zero: no residual, K = 0
  kRandom,  // every layer fan-in uniform, final layers scaled by kRandomHeadScale
};

inline constexpr double kRandomHeadScale = 0.1;

/// Transition-residual predictor (encoder + xyz / wlh / yaw heads) and the
/// recurrent gain estimator, sharing one parameter set.
class HybridModel {
 public:
  static HybridModel create(const ModelShape& shape, std::uint64_t seed,
                            HeadInit head_init = HeadInit::kZero);

  /// Builds a zero-head model of `shape` and overwrites it from a checkpoint.
  static HybridModel load(const std::string& path, const ModelShape& shape = {});

  const ModelShape& shape() const { return shape_; }
  nn::Parameters& params() { return params_; }
  const nn::Parameters& params() const { return params_; }

  struct TrpTrace {
    nn::Tape encoder;
    std::array<nn::Tape, 3> heads;
  };

  /// input: trp_input_dim x B. Returns 7 x B residuals [dx dy dz dw dl dh dyaw];
  /// the yaw row is wrapped.
  nn::Matrix trp_forward(const nn::Matrix& input, TrpTrace* trace = nullptr) const;

  /// Gradient w.r.t. the TRP input. Wrapping counts as identity.
  nn::Matrix trp_backward(const TrpTrace& trace, const nn::Matrix& residual_grad);

  struct GainTrace {
    nn::RecurrentRecord rnn;
    nn::Tape head;
  };

  struct GainOutput {
    nn::Matrix gains;   // 49 x B, row-major 7x7 per column
    nn::Matrix hidden;  // H x B
  };

  GainOutput gain_forward(const nn::Matrix& features, const nn::Matrix& hidden,
                          GainTrace* trace = nullptr) const;

  struct GainGrads {
    nn::Matrix features;
    nn::Matrix hidden;
  };

  /// `hidden_grad` is the gradient flowing into the new hidden state from
  /// later steps (zero for the last step).
  GainGrads gain_backward(const GainTrace& trace, const nn::Matrix& gains_grad,
                          const nn::Matrix& hidden_grad);

 private:
  ModelShape shape_;
  nn::Parameters params_;
  nn::DenseLayer encoder1_;
  nn::DenseLayer encoder2_;
  std::array<std::array<nn::DenseLayer, 2>, 3> heads_{};
  nn::RecurrentCell gain_cell_;
  nn::DenseLayer gain_head_;
};

}  // namespace hybridtrack
