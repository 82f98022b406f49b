#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "hybridtrack/errors.hpp"
#include "hybridtrack/model.hpp"
#include "hybridtrack/nn.hpp"

using namespace hybridtrack;
using namespace hybridtrack::nn;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-by-scalar gated recurrent step (rows: update, reset, candidate).
std::vector<double> gru_oracle(const Matrix& wi, const Matrix& wh, const Matrix& bi,
                               const Matrix& bh, const std::vector<double>& x,
                               const std::vector<double>& h) {
  const std::size_t hd = h.size();
  auto row = [&](const Matrix& w, const Matrix& b, std::size_t r, const std::vector<double>& v) {
    double s = b(static_cast<Eigen::Index>(r), 0);
    for (std::size_t c = 0; c < v.size(); ++c) {
      s += w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * v[c];
    }
    return s;
  };
  std::vector<double> out(hd);
  for (std::size_t j = 0; j < hd; ++j) {
    const double z = sigmoid(row(wi, bi, j, x) + row(wh, bh, j, h));
    const double r = sigmoid(row(wi, bi, hd + j, x) + row(wh, bh, hd + j, h));
    const double n = std::tanh(row(wi, bi, 2 * hd + j, x) + r * row(wh, bh, 2 * hd + j, h));
    out[j] = (1.0 - z) * n + z * h[j];
  }
  return out;
}

}  // namespace

TEST_CASE("dense forward examples") {
  std::mt19937_64 rng(1);
  Parameters p;
  const DenseLayer id = make_dense(p, "id", 2, 2, Activation::kIdentity, Init::kZero, rng);
  const DenseLayer relu = make_dense(p, "relu", 2, 2, Activation::kReLU, Init::kZero, rng);
  p[id.weight].value = Matrix::Identity(2, 2);
  p[relu.weight].value = Matrix::Identity(2, 2);
  Matrix v(2, 1);
  v << -1.0, 2.0;
  CHECK(dense_forward(p, id, v) == v);
  const Matrix r = dense_forward(p, relu, v);
  CHECK(r(0, 0) == 0.0);
  CHECK(r(1, 0) == 2.0);
  CHECK_THROWS_AS(dense_forward(p, id, Matrix::Zero(3, 1)), ShapeError);
}

TEST_CASE("dense forward matches a triple-loop product") {
  std::mt19937_64 rng(42);
  Parameters p;
  const DenseLayer layer = make_dense(p, "l", 2, 3, Activation::kTanh, Init::kUniformFanIn, rng);
  const Matrix& w = p[layer.weight].value;
  const Matrix& b = p[layer.bias].value;
  CHECK(w.rows() == 3);
  CHECK(w.cols() == 2);
  CHECK(w.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(2.0));
  Matrix x(2, 4);
  x << 0.3, -1.2, 2.0, 0.0, 1.5, 0.7, -0.4, 0.1;
  const Matrix y = dense_forward(p, layer, x);
  for (int c = 0; c < 4; ++c) {
    for (int r = 0; r < 3; ++r) {
      double s = b(r, 0);
      for (int k = 0; k < 2; ++k) s += w(r, k) * x(k, c);
      CHECK(y(r, c) == doctest::Approx(std::tanh(s)).epsilon(1e-14));
    }
  }
}

TEST_CASE("recurrent step with zero parameters stays at zero") {
  std::mt19937_64 rng(0);
  Parameters p;
  const RecurrentCell cell = make_recurrent(p, "g", 3, 4, Init::kZero, rng);
  const Matrix h = rnn_step(p, cell, Matrix::Zero(3, 1), Matrix::Zero(4, 1));
  CHECK(h.isZero(0.0));
}

TEST_CASE("recurrent step matches the scalar oracle") {
  std::mt19937_64 rng(5);
  Parameters p;
  const RecurrentCell cell = make_recurrent(p, "g", 3, 4, Init::kUniformFanIn, rng);
  const std::vector<double> x = {0.2, -0.7, 1.1};
  const std::vector<double> h = {0.5, -0.1, 0.0, 0.9};
  Matrix xm(3, 1);
  Matrix hm(4, 1);
  for (int i = 0; i < 3; ++i) xm(i, 0) = x[static_cast<std::size_t>(i)];
  for (int i = 0; i < 4; ++i) hm(i, 0) = h[static_cast<std::size_t>(i)];
  const Matrix got = rnn_step(p, cell, xm, hm);
  const std::vector<double> want =
      gru_oracle(p[cell.input_weight].value, p[cell.hidden_weight].value,
                 p[cell.input_bias].value, p[cell.hidden_bias].value, x, h);
  for (int i = 0; i < 4; ++i) {
    CHECK(got(i, 0) == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-14));
  }
}

TEST_CASE("recurrent iteration with zero input reaches the oracle fixed point") {
  std::mt19937_64 rng(9);
  Parameters p;
  const RecurrentCell cell = make_recurrent(p, "g", 2, 3, Init::kUniformFanIn, rng);
  // Contractive hidden map.
  p[cell.hidden_weight].value *= 0.3;
  const std::vector<double> x = {0.0, 0.0};
  std::vector<double> h_oracle = {0.8, -0.8, 0.4};
  Matrix h(3, 1);
  h << 0.8, -0.8, 0.4;
  for (int it = 0; it < 400; ++it) {
    h = rnn_step(p, cell, Matrix::Zero(2, 1), h);
    h_oracle = gru_oracle(p[cell.input_weight].value, p[cell.hidden_weight].value,
                          p[cell.input_bias].value, p[cell.hidden_bias].value, x, h_oracle);
  }
  const Matrix again = rnn_step(p, cell, Matrix::Zero(2, 1), h);
  CHECK((again - h).cwiseAbs().maxCoeff() < 1e-12);
  for (int i = 0; i < 3; ++i) {
    CHECK(h(i, 0) == doctest::Approx(h_oracle[static_cast<std::size_t>(i)]).epsilon(1e-10));
  }
}

TEST_CASE("backward through an identity layer gives the outer product") {
  std::mt19937_64 rng(2);
  Parameters p;
  const DenseLayer layer = make_dense(p, "d", 3, 2, Activation::kIdentity, Init::kUniformFanIn, rng);
  Matrix x(3, 1);
  x << 1.0, -2.0, 0.5;
  Matrix g(2, 1);
  g << 0.25, 4.0;
  Tape tape;
  dense_forward(p, layer, x, &tape);
  p.zero_grad();
  const Matrix gx = tape.backward(g, p);
  CHECK(p[layer.weight].grad.isApprox(g * x.transpose(), 1e-15));
  CHECK(p[layer.bias].grad.isApprox(g, 1e-15));
  CHECK(gx.isApprox(p[layer.weight].value.transpose() * g, 1e-15));
}

TEST_CASE("zero output gradient leaves accumulated gradients unchanged") {
  std::mt19937_64 rng(3);
  Parameters p;
  const DenseLayer a = make_dense(p, "a", 3, 4, Activation::kReLU, Init::kUniformFanIn, rng);
  const DenseLayer b = make_dense(p, "b", 4, 2, Activation::kTanh, Init::kUniformFanIn, rng);
  for (Tensor& t : p) t.grad.setConstant(0.125);
  Tape tape;
  dense_forward(p, b, dense_forward(p, a, Matrix::Ones(3, 2), &tape), &tape);
  tape.backward(Matrix::Zero(2, 2), p);
  for (const Tensor& t : p) CHECK((t.grad.array() == 0.125).all());
}

TEST_CASE("composite gradients match central differences") {
  std::mt19937_64 rng(17);
  Parameters p;
  const DenseLayer a = make_dense(p, "a", 4, 6, Activation::kTanh, Init::kUniformFanIn, rng);
  const DenseLayer b = make_dense(p, "b", 6, 5, Activation::kReLU, Init::kUniformFanIn, rng);
  const RecurrentCell cell = make_recurrent(p, "g", 5, 3, Init::kUniformFanIn, rng);
  const DenseLayer c = make_dense(p, "c", 3, 2, Activation::kIdentity, Init::kUniformFanIn, rng);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix x(4, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
  Matrix h0(3, 3);
  for (Eigen::Index i = 0; i < h0.size(); ++i) h0.data()[i] = 0.5 * n01(rng);
  Matrix weights(2, 3);
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = n01(rng);

  // Two recurrent steps sharing the cell, loss = <weights, output>.
  auto loss = [&](bool grad) {
    Tape front;
    const Matrix e = dense_forward(p, b, dense_forward(p, a, x, &front), &front);
    RecurrentRecord r1;
    RecurrentRecord r2;
    const Matrix h1 = rnn_step(p, cell, e, h0, &r1);
    const Matrix h2 = rnn_step(p, cell, e, h1, &r2);
    Tape back;
    const Matrix y = dense_forward(p, c, h2, &back);
    if (grad) {
      const Matrix gh2 = back.backward(weights, p);
      const RecurrentGrads g2 = rnn_backward(r2, gh2, p);
      const RecurrentGrads g1 = rnn_backward(r1, g2.hidden, p);
      front.backward(g1.input + g2.input, p);
    }
    return (weights.array() * y.array()).sum();
  };

  p.zero_grad();
  loss(true);
  std::vector<Matrix> analytic;
  for (const Tensor& t : p) analytic.push_back(t.grad);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t ti = 0; ti < p.size(); ++ti) {
    Matrix& v = p[ti].value;
    for (Eigen::Index e = 0; e < v.size(); ++e) {
      const double saved = v.data()[e];
      v.data()[e] = saved + h;
      const double up = loss(false);
      v.data()[e] = saved - h;
      const double down = loss(false);
      v.data()[e] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a_val = analytic[ti].data()[e];
      const double rel = std::abs(a_val - numeric) / std::max({std::abs(a_val), std::abs(numeric), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("adam step arithmetic") {
  std::mt19937_64 rng(0);
  Parameters p;
  p.add("w", Matrix::Constant(1, 1, 2.0));
  AdamOptions o;
  o.weight_decay = 0.0;
  adam_step(p, o, 1);
  CHECK(p[0].value(0, 0) == 2.0);

  p[0].grad(0, 0) = 1.0;
  adam_step(p, o, 1);
  // t = 1: m_hat = g, v_hat = g^2, step = lr * 1 / (1 + eps).
  CHECK(p[0].value(0, 0) == doctest::Approx(2.0 - 0.001 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(p[0].grad(0, 0) == 0.0);

  Parameters q;
  q.add("w", Matrix::Constant(1, 1, 1.0));
  AdamOptions wd;
  adam_step(q, wd, 1);
  // Decoupled decay only: w -= lr * wd * w.
  CHECK(q[0].value(0, 0) == doctest::Approx(1.0 - 1e-3 * 1e-5).epsilon(1e-15));
  CHECK(wd.lr == 1e-3);
  CHECK(wd.weight_decay == 1e-5);

  q[0].grad(0, 0) = std::nan("");
  CHECK_THROWS_AS(adam_step(q, wd, 2), DivergenceError);
}

TEST_CASE("gradient clipping rescales to the joint norm") {
  Parameters p;
  p.add("a", Matrix::Zero(1, 2));
  p.add("b", Matrix::Zero(1, 1));
  p[0].grad << 3.0, 0.0;
  p[1].grad << 4.0;
  CHECK(clip_grad_norm(p, 0.0) == 5.0);
  CHECK(p[0].grad(0, 0) == 3.0);
  CHECK(clip_grad_norm(p, 10.0) == 5.0);
  CHECK(p[1].grad(0, 0) == 4.0);

  CHECK(clip_grad_norm(p, 1.0) == 5.0);
  CHECK(p[0].grad(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(p[1].grad(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(clip_grad_norm(p, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("checkpoint round-trip is exact") {
  const HybridModel a = HybridModel::create({}, 77, HeadInit::kRandom);
  std::stringstream buf;
  save_checkpoint(a.params(), buf);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 8) == "HYTRKCKP");

  HybridModel b = HybridModel::create({}, 1);
  std::stringstream in(bytes);
  load_checkpoint(b.params(), in);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].name == b.params()[i].name);
    CHECK((a.params()[i].value.array() == b.params()[i].value.array()).all());
  }

  std::string corrupt = bytes;
  corrupt[0] = 'X';
  std::stringstream bad(corrupt);
  CHECK_THROWS(load_checkpoint(b.params(), bad));

  ModelShape small;
  small.encoder_width = 16;
  HybridModel c = HybridModel::create(small, 1);
  std::stringstream again(bytes);
  CHECK_THROWS(load_checkpoint(c.params(), again));

  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS(load_checkpoint(b.params(), truncated));
}

TEST_CASE("model creation is seed-deterministic and zero heads give zero outputs") {
  const HybridModel a = HybridModel::create({}, 5);
  const HybridModel b = HybridModel::create({}, 5);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK((a.params()[i].value.array() == b.params()[i].value.array()).all());
  }
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01(0.0, 3.0);
  Matrix in(a.shape().trp_input_dim(), 4);
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = n01(rng);
  CHECK(a.trp_forward(in).isZero(0.0));
  Matrix feats(ModelShape::kGainInputDim, 4);
  for (Eigen::Index i = 0; i < feats.size(); ++i) feats.data()[i] = n01(rng);
  const auto g = a.gain_forward(feats, Matrix::Zero(a.shape().gain_hidden, 4));
  CHECK(g.gains.isZero(0.0));
  CHECK(g.gains.rows() == 49);
}
