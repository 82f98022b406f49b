#pragma once

// Small differentiable toolkit: dense layers, a gated recurrent cell, a tape
// for chained layers, and Adam. All matrices hold one batch element per
// column.

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace hybridtrack::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { kReLU, kTanh, kIdentity };

struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
};

/// Named tensors with gradient and Adam moment slots of identical shape.
class Parameters {
 public:
  /// Registers a tensor; returns its slot index. Names must be unique.
  std::size_t add(std::string name, Matrix init);

  Tensor& operator[](std::size_t i) { return tensors_.at(i); }
  const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
  std::size_t size() const { return tensors_.size(); }

  /// Slot index of `name`; throws ShapeError if absent.
  std::size_t index_of(const std::string& name) const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  void zero_grad();
  std::size_t scalar_count() const;
  bool all_finite() const;

 private:
  std::vector<Tensor> tensors_;
};

struct DenseLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  Activation activation = Activation::kIdentity;
  int in_dim = 0;
  int out_dim = 0;
};

enum class Init : std::uint8_t { kUniformFanIn, kZero };

/// Creates `<name>.weight` (out x in) and `<name>.bias` (out x 1). Uniform
/// init draws from +-1/sqrt(in).
DenseLayer make_dense(Parameters& params, const std::string& name, int in_dim, int out_dim,
                      Activation activation, Init init, std::mt19937_64& rng);

/// Gated recurrent cell. Stacked gate rows are [update; reset; candidate].
struct RecurrentCell {
  std::size_t input_weight = 0;   // 3H x I
  std::size_t hidden_weight = 0;  // 3H x H
  std::size_t input_bias = 0;     // 3H x 1
  std::size_t hidden_bias = 0;    // 3H x 1
  int input_dim = 0;
  int hidden_dim = 0;
};

RecurrentCell make_recurrent(Parameters& params, const std::string& name, int input_dim,
                             int hidden_dim, Init init, std::mt19937_64& rng);

struct DenseRecord {
  DenseLayer layer;
  Matrix input;
  Matrix output;  // post-activation
};

struct RecurrentRecord {
  RecurrentCell cell;
  Matrix input;
  Matrix hidden;
  Matrix update_gate;
  Matrix reset_gate;
  Matrix candidate;
  Matrix hidden_candidate_pre;  // U_n h + b_hn
};

/// Forward record of one chain of layers. backward() replays it in exact
/// reverse order.
class Tape {
 public:
  using Record = std::variant<DenseRecord, RecurrentRecord>;

  void push(Record r) { records_.push_back(std::move(r)); }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const Record& operator[](std::size_t i) const { return records_.at(i); }
  void clear() { records_.clear(); }

  /// Backpropagates `output_grad` through a tape whose records form a chain
  /// of dense layers (each record's input is the previous record's output).
  /// Accumulates parameter gradients and returns the gradient w.r.t. the
  /// first record's input.
  Matrix backward(const Matrix& output_grad, Parameters& params) const;

 private:
  std::vector<Record> records_;
};

/// activation(W * input + b). Records onto `tape` when non-null.
Matrix dense_forward(const Parameters& params, const DenseLayer& layer, const Matrix& input,
                     Tape* tape = nullptr);

/// Gradient w.r.t. the record's input; accumulates into params' grad slots.
Matrix dense_backward(const DenseRecord& record, const Matrix& output_grad, Parameters& params);

/// One recurrent step; returns the new hidden state.
Matrix rnn_step(const Parameters& params, const RecurrentCell& cell, const Matrix& input,
                const Matrix& hidden, RecurrentRecord* record = nullptr);

struct RecurrentGrads {
  Matrix input;
  Matrix hidden;
};

RecurrentGrads rnn_backward(const RecurrentRecord& record, const Matrix& hidden_grad,
                            Parameters& params);

struct AdamOptions {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Rescales all gradients so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` only measures.
double clip_grad_norm(Parameters& params, double max_norm);

/// Adam with bias correction and decoupled weight decay; `step` is 1-based.
/// Zeroes gradients afterwards. Throws DivergenceError on non-finite grads.
void adam_step(Parameters& params, const AdamOptions& opts, int step);

// Checkpoint layout (little-endian):
//   8 bytes  magic "HYTRKCKP"
//   u32      schema version (1)
//   u32      tensor count
//   per tensor: u32 name length, name bytes, u32 rows, u32 cols,
//               rows*cols f64 values in row-major order
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Parameters& params, std::ostream& out);
void save_checkpoint(const Parameters& params, const std::string& path);

/// Reads a checkpoint into `params`, which must already hold tensors with the
/// same names and shapes (the file fixes values only).
void load_checkpoint(Parameters& params, std::istream& in);
void load_checkpoint(Parameters& params, const std::string& path);

}  // namespace hybridtrack::nn
