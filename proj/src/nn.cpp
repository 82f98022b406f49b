#include "hybridtrack/nn.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "hybridtrack/errors.hpp"

namespace hybridtrack::nn {

namespace {

Matrix fan_in_uniform(int rows, int cols, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  // Row-major fill so the draw order does not depend on Eigen's storage.
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

void check_rows(const Matrix& m, int expected, const char* what) {
  if (m.rows() != expected) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) +
                     " rows, got " + std::to_string(m.rows()));
  }
}

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

}  // namespace

std::size_t Parameters::add(std::string name, Matrix init) {
  for (const auto& t : tensors_) {
    if (t.name == name) throw ShapeError("duplicate tensor name '" + name + "'");
  }
  Tensor t;
  t.name = std::move(name);
  t.grad = Matrix::Zero(init.rows(), init.cols());
  t.adam_m = Matrix::Zero(init.rows(), init.cols());
  t.adam_v = Matrix::Zero(init.rows(), init.cols());
  t.value = std::move(init);
  tensors_.push_back(std::move(t));
  return tensors_.size() - 1;
}

std::size_t Parameters::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  throw ShapeError("no tensor named '" + name + "'");
}

void Parameters::zero_grad() {
  for (auto& t : tensors_) t.grad.setZero();
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

bool Parameters::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

DenseLayer make_dense(Parameters& params, const std::string& name, int in_dim, int out_dim,
                      Activation activation, Init init, std::mt19937_64& rng) {
  DenseLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.activation = activation;
  if (init == Init::kZero) {
    layer.weight = params.add(name + ".weight", Matrix::Zero(out_dim, in_dim));
    layer.bias = params.add(name + ".bias", Matrix::Zero(out_dim, 1));
  } else {
    layer.weight = params.add(name + ".weight", fan_in_uniform(out_dim, in_dim, in_dim, rng));
    layer.bias = params.add(name + ".bias", fan_in_uniform(out_dim, 1, in_dim, rng));
  }
  return layer;
}

RecurrentCell make_recurrent(Parameters& params, const std::string& name, int input_dim,
                             int hidden_dim, Init init, std::mt19937_64& rng) {
  RecurrentCell cell;
  cell.input_dim = input_dim;
  cell.hidden_dim = hidden_dim;
  const int gates = 3 * hidden_dim;
  auto make = [&](int rows, int cols) {
    return init == Init::kZero ? Matrix(Matrix::Zero(rows, cols))
                               : fan_in_uniform(rows, cols, hidden_dim, rng);
  };
  cell.input_weight = params.add(name + ".input_weight", make(gates, input_dim));
  cell.hidden_weight = params.add(name + ".hidden_weight", make(gates, hidden_dim));
  cell.input_bias = params.add(name + ".input_bias", make(gates, 1));
  cell.hidden_bias = params.add(name + ".hidden_bias", make(gates, 1));
  return cell;
}

Matrix dense_forward(const Parameters& params, const DenseLayer& layer, const Matrix& input,
                     Tape* tape) {
  check_rows(input, layer.in_dim, "dense_forward input");
  const Matrix& w = params[layer.weight].value;
  const Matrix& b = params[layer.bias].value;
  Matrix out(layer.out_dim, input.cols());
  out.noalias() = w * input;
  out.colwise() += b.col(0);
  switch (layer.activation) {
    case Activation::kReLU:
      out = out.cwiseMax(0.0);
      break;
    case Activation::kTanh:
      out = out.array().tanh().matrix();
      break;
    case Activation::kIdentity:
      break;
  }
  if (tape != nullptr) tape->push(DenseRecord{layer, input, out});
  return out;
}

Matrix dense_backward(const DenseRecord& record, const Matrix& output_grad, Parameters& params) {
  const DenseLayer& layer = record.layer;
  if (output_grad.rows() != layer.out_dim || output_grad.cols() != record.output.cols()) {
    throw ShapeError("dense_backward: gradient shape does not match recorded output");
  }
  Matrix pre_grad;
  switch (layer.activation) {
    case Activation::kReLU:
      pre_grad = (record.output.array() > 0.0).select(output_grad, 0.0);
      break;
    case Activation::kTanh:
      pre_grad = (output_grad.array() * (1.0 - record.output.array().square())).matrix();
      break;
    case Activation::kIdentity:
      pre_grad = output_grad;
      break;
  }
  Tensor& w = params[layer.weight];
  Tensor& b = params[layer.bias];
  if (w.value.rows() != layer.out_dim || w.value.cols() != layer.in_dim) {
    throw ShapeError("dense_backward: tape does not match parameters");
  }
  w.grad.noalias() += pre_grad * record.input.transpose();
  b.grad.col(0) += pre_grad.rowwise().sum();
  Matrix in_grad(layer.in_dim, pre_grad.cols());
  in_grad.noalias() = w.value.transpose() * pre_grad;
  return in_grad;
}

Matrix Tape::backward(const Matrix& output_grad, Parameters& params) const {
  Matrix grad = output_grad;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    const auto* dense = std::get_if<DenseRecord>(&*it);
    if (dense == nullptr) {
      throw ContractViolation("Tape::backward handles dense chains only");
    }
    grad = dense_backward(*dense, grad, params);
  }
  return grad;
}

Matrix rnn_step(const Parameters& params, const RecurrentCell& cell, const Matrix& input,
                const Matrix& hidden, RecurrentRecord* record) {
  const int hd = cell.hidden_dim;
  check_rows(input, cell.input_dim, "rnn_step input");
  check_rows(hidden, hd, "rnn_step hidden");
  if (input.cols() != hidden.cols()) throw ShapeError("rnn_step: batch size mismatch");

  Matrix gx(3 * hd, input.cols());
  gx.noalias() = params[cell.input_weight].value * input;
  gx.colwise() += params[cell.input_bias].value.col(0);
  Matrix gh(3 * hd, input.cols());
  gh.noalias() = params[cell.hidden_weight].value * hidden;
  gh.colwise() += params[cell.hidden_bias].value.col(0);

  Matrix z = sigmoid(gx.topRows(hd) + gh.topRows(hd));
  Matrix r = sigmoid(gx.middleRows(hd, hd) + gh.middleRows(hd, hd));
  Matrix hn = gh.bottomRows(hd);
  Matrix n = (gx.bottomRows(hd).array() + r.array() * hn.array()).tanh().matrix();
  Matrix next = ((1.0 - z.array()) * n.array() + z.array() * hidden.array()).matrix();

  if (record != nullptr) {
    record->cell = cell;
    record->input = input;
    record->hidden = hidden;
    record->update_gate = std::move(z);
    record->reset_gate = std::move(r);
    record->candidate = std::move(n);
    record->hidden_candidate_pre = std::move(hn);
  }
  return next;
}

RecurrentGrads rnn_backward(const RecurrentRecord& rec, const Matrix& hidden_grad,
                            Parameters& params) {
  const RecurrentCell& cell = rec.cell;
  const int hd = cell.hidden_dim;
  if (hidden_grad.rows() != hd || hidden_grad.cols() != rec.hidden.cols()) {
    throw ShapeError("rnn_backward: gradient shape does not match record");
  }
  const auto z = rec.update_gate.array();
  const auto r = rec.reset_gate.array();
  const auto n = rec.candidate.array();
  const auto dh = hidden_grad.array();

  const Eigen::ArrayXXd dn_pre = dh * (1.0 - z) * (1.0 - n.square());
  const Eigen::ArrayXXd dz_pre = dh * (rec.hidden.array() - n) * z * (1.0 - z);
  const Eigen::ArrayXXd dr_pre = dn_pre * rec.hidden_candidate_pre.array() * r * (1.0 - r);

  const auto batch = hidden_grad.cols();
  Matrix dgx(3 * hd, batch);
  dgx.topRows(hd) = dz_pre.matrix();
  dgx.middleRows(hd, hd) = dr_pre.matrix();
  dgx.bottomRows(hd) = dn_pre.matrix();
  Matrix dgh = dgx;
  dgh.bottomRows(hd) = (dn_pre * r).matrix();

  Tensor& wx = params[cell.input_weight];
  Tensor& wh = params[cell.hidden_weight];
  wx.grad.noalias() += dgx * rec.input.transpose();
  wh.grad.noalias() += dgh * rec.hidden.transpose();
  params[cell.input_bias].grad.col(0) += dgx.rowwise().sum();
  params[cell.hidden_bias].grad.col(0) += dgh.rowwise().sum();

  RecurrentGrads out;
  out.input.noalias() = wx.value.transpose() * dgx;
  out.hidden = (dh * z).matrix();
  out.hidden.noalias() += wh.value.transpose() * dgh;
  return out;
}

double clip_grad_norm(Parameters& params, double max_norm) {
  double sq = 0.0;
  for (const auto& t : params) sq += t.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& t : params) t.grad *= scale;
  }
  return norm;
}

void adam_step(Parameters& params, const AdamOptions& opts, int step) {
  if (step < 1) throw ContractViolation("adam_step: step is 1-based");
  for (const auto& t : params) {
    if (!t.grad.allFinite()) {
      throw DivergenceError("non-finite gradient in tensor '" + t.name + "'");
    }
  }
  const double c1 = 1.0 - std::pow(opts.beta1, step);
  const double c2 = 1.0 - std::pow(opts.beta2, step);
  for (auto& t : params) {
    t.adam_m = opts.beta1 * t.adam_m + (1.0 - opts.beta1) * t.grad;
    t.adam_v = opts.beta2 * t.adam_v + (1.0 - opts.beta2) * t.grad.cwiseAbs2();
    auto m_hat = t.adam_m.array() / c1;
    auto v_hat = t.adam_v.array() / c2;
    t.value.array() -=
        opts.lr * (m_hat / (v_hat.sqrt() + opts.eps) + opts.weight_decay * t.value.array());
    t.grad.setZero();
  }
  if (!params.all_finite()) throw DivergenceError("non-finite parameter after Adam step");
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr std::array<char, 8> kMagic = {'H', 'Y', 'T', 'R', 'K', 'C', 'K', 'P'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b.data(), b.size());
}

void put_f64(std::ostream& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  out.write(b.data(), b.size());
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw ParseError("checkpoint", 0, "truncated file");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw ParseError("checkpoint", 0, "truncated file");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void save_checkpoint(const Parameters& params, std::ostream& out) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) put_f64(out, t.value(r, c));
    }
  }
  if (!out) throw Error("checkpoint write failed");
}

void save_checkpoint(const Parameters& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  save_checkpoint(params, out);
}

void load_checkpoint(Parameters& params, std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ParseError("checkpoint", 0, "bad magic bytes");
  }
  const auto version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint", 0, "unsupported schema version " + std::to_string(version));
  }
  const auto count = get_u32(in);
  if (count != params.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                     std::to_string(params.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_u32(in);
    if (len > 4096) throw ParseError("checkpoint", 0, "tensor name too long");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ParseError("checkpoint", 0, "truncated file");
    Tensor& t = params[params.index_of(name)];
    const auto rows = get_u32(in);
    const auto cols = get_u32(in);
    if (rows != t.value.rows() || cols != t.value.cols()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + std::to_string(rows) +
                       "x" + std::to_string(cols));
    }
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) t.value(r, c) = get_f64(in);
    }
  }
  if (!params.all_finite()) throw InvalidValueError("checkpoint contains non-finite values");
}

void load_checkpoint(Parameters& params, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  load_checkpoint(params, in);
}

}  // namespace hybridtrack::nn
