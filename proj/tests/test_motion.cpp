#include <doctest.h>

#include <cmath>
#include <random>

#include "hybridtrack/errors.hpp"
#include "hybridtrack/motion.hpp"

using namespace hybridtrack;

namespace {

constexpr int kW = 20;
constexpr int kP = 10;

Eigen::Ref<const Eigen::VectorXd> block(const TrpInput& in, int index) {
  return in.values.segment(7 * index, 7);
}

Trajectory with_posteriors(std::vector<StateVector> states) {
  Trajectory t;
  t.posteriors = std::move(states);
  return t;
}

}  // namespace

TEST_CASE("trp input of a single posterior") {
  const StateVector s{3, -2, 1, 1.8, 4.1, 1.5, 0.7};
  const TrpInput in = assemble_trp_input(with_posteriors({s}), kP, kW);
  CHECK(in.values.size() == (kW + kP + 1) * 7);
  for (int m = 0; m < kW; ++m) {
    const Vec7 expected(0, 0, 0, s.w, s.l, s.h, s.theta);
    CHECK(block(in, m) == expected);
  }
  for (int i = 0; i < kP + 1; ++i) CHECK(block(in, kW + i).isZero(0.0));
}

TEST_CASE("trp input of a constant-velocity history") {
  std::vector<StateVector> states;
  for (int i = 0; i < 3; ++i) states.push_back({static_cast<double>(i), 0, 0, 1, 1, 1, 0});
  const TrpInput in = assemble_trp_input(with_posteriors(states), kP, kW);
  CHECK(block(in, kW)[0] == 1.0);
  CHECK(block(in, kW + 1)[0] == 1.0);
  // Before the oldest posterior the history repeats it: no motion.
  for (int i = 2; i < kP; ++i) CHECK(block(in, kW + i).isZero(0.0));
  // Window positions are relative to the newest state, newest first.
  CHECK(block(in, 0)[0] == 0.0);
  CHECK(block(in, 1)[0] == -1.0);
  CHECK(block(in, 2)[0] == -2.0);
  CHECK(block(in, 19)[0] == -2.0);
}

TEST_CASE("trp input matches direct subtraction on random histories") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int len : {1, 5, 11, 25, 40}) {
    Trajectory t;
    for (int i = 0; i < len; ++i) {
      t.posteriors.push_back({n01(rng) * 10, n01(rng) * 10, n01(rng), 1.5 + 0.1 * n01(rng),
                              4.0 + 0.1 * n01(rng), 1.5, wrap_angle(3.0 * n01(rng))});
    }
    const bool with_virtual = len % 2 == 1;
    if (with_virtual) {
      t.virtual_history = StateVector{-1, -1, -1, 1.2, 3.9, 1.4, -0.5};
    }
    for (int i = 0; i < 7; ++i) t.last_correction[i] = n01(rng);
    const TrpInput in = assemble_trp_input(t, kP, kW);

    // m = 0 is the newest posterior.
    auto state_at = [&](int m) {
      if (m < len) return t.posteriors[static_cast<std::size_t>(len - 1 - m)];
      return with_virtual ? *t.virtual_history : t.posteriors.front();
    };
    const StateVector& newest = t.posteriors.back();
    for (int m = 0; m < kW; ++m) {
      const StateVector s = state_at(m);
      const Vec7 want(s.x - newest.x, s.y - newest.y, s.z - newest.z, s.w, s.l, s.h, s.theta);
      CHECK((block(in, m) - want).cwiseAbs().maxCoeff() < 1e-12);
    }
    for (int i = 1; i <= kP; ++i) {
      const StateVector a = state_at(i - 1);
      const StateVector b = state_at(i);
      Vec7 want(a.x - b.x, a.y - b.y, a.z - b.z, a.w - b.w, a.l - b.l, a.h - b.h, 0.0);
      want[6] = std::remainder(a.theta - b.theta, 2.0 * kPi);
      if (want[6] >= kPi) want[6] -= 2.0 * kPi;
      CHECK((block(in, kW + i - 1) - want).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(block(in, kW + kP) == t.last_correction);
  }
  CHECK_THROWS_AS(assemble_trp_input(Trajectory{}, kP, kW), ContractViolation);
}

TEST_CASE("zero heads predict a zero residual") {
  const HybridModel model = HybridModel::create({}, 4);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01(0.0, 5.0);
  TrpInput in{Eigen::VectorXd(model.shape().trp_input_dim())};
  for (Eigen::Index i = 0; i < in.values.size(); ++i) in.values[i] = n01(rng);
  CHECK(predict_residual(model, in).values.isZero(0.0));
}

TEST_CASE("residual matches a hand-assembled forward pass") {
  const HybridModel model = HybridModel::create({}, 8, HeadInit::kRandom);
  const nn::Parameters& p = model.params();
  auto tensor = [&](const std::string& name) -> const nn::Matrix& {
    return p[p.index_of(name)].value;
  };
  auto dense = [&](const std::string& name, const Eigen::VectorXd& x, bool relu) {
    Eigen::VectorXd y = tensor(name + ".weight") * x + tensor(name + ".bias");
    if (relu) y = y.cwiseMax(0.0);
    return y;
  };
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01(0.0, 1.0);
  TrpInput in{Eigen::VectorXd(model.shape().trp_input_dim())};
  for (Eigen::Index i = 0; i < in.values.size(); ++i) in.values[i] = n01(rng);
  const Eigen::VectorXd e = dense("trp.encoder2", dense("trp.encoder1", in.values, true), true);
  Vec7 want;
  want.segment<3>(0) = dense("trp.head_xyz.out", dense("trp.head_xyz.hidden", e, true), false);
  want.segment<3>(3) = dense("trp.head_wlh.out", dense("trp.head_wlh.hidden", e, true), false);
  want[6] = wrap_angle(dense("trp.head_yaw.out", dense("trp.head_yaw.hidden", e, true), false)[0]);
  const Vec7 got = predict_residual(model, in).values;
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(got[6] >= -kPi);
  CHECK(got[6] < kPi);
}

TEST_CASE("scaling factor arithmetic") {
  TrackerConfig cfg;
  Trajectory t;
  t.birth_frame = 10;
  CHECK(scaling_factor(t, 10, cfg) == 0.0);
  CHECK(scaling_factor(t, 14, cfg) == 0.5);
  CHECK(scaling_factor(t, 18, cfg) == 1.0);
  CHECK(scaling_factor(t, 100, cfg) == 1.0);
  t.miss_count = 11;
  CHECK(scaling_factor(t, 40, cfg) == doctest::Approx(0.4).epsilon(1e-15));
  t.miss_count = 22;
  CHECK(scaling_factor(t, 40, cfg) == 0.1);
  t.miss_count = 30;
  CHECK(scaling_factor(t, 40, cfg) == 0.1);
  CHECK_THROWS_AS(scaling_factor(t, 9, cfg), ContractViolation);
}

TEST_CASE("scaling factor monotonicity") {
  TrackerConfig cfg;
  Trajectory t;
  double last = -1.0;
  for (int k = 0; k < 30; ++k) {
    const double a = scaling_factor(t, k, cfg);
    CHECK(a >= last);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    last = a;
  }
  // Live tracks have kappa < mu_max (they die on reaching it).
  for (int k : {0, 3, 8, 50}) {
    last = 2.0;
    for (int kappa = 0; kappa < cfg.mu_max; ++kappa) {
      t.miss_count = kappa;
      const double a = scaling_factor(t, k, cfg);
      CHECK(a <= last);
      last = a;
    }
    t.miss_count = 0;
  }
}

TEST_CASE("prior composition") {
  const StateVector prev{5, 1, 2, 1.8, 4.0, 1.5, 3.0};
  Vec7 s = Vec7::Zero();
  s[0] = 1.0;
  CHECK(compose_prior(prev, s, 0.0) == prev);
  CHECK(compose_prior(prev, Vec7::Constant(7.3), 0.0) == prev);
  CHECK(compose_prior(prev, s, 1.0).x == 6.0);
  Vec7 turn = Vec7::Zero();
  turn[6] = 0.5;
  CHECK(compose_prior(prev, turn, 1.0).theta == doctest::Approx(3.5 - 2.0 * kPi).epsilon(1e-14));
  Vec7 shrink = Vec7::Zero();
  shrink[3] = -10.0;
  shrink[4] = -10.0;
  shrink[5] = -10.0;
  const StateVector floored = compose_prior(prev, shrink, 1.0);
  CHECK(floored.w == kMinExtent);
  CHECK(floored.l == kMinExtent);
  CHECK(floored.h == kMinExtent);
}

TEST_CASE("predict_prior with zero heads is the identity") {
  const HybridModel model = HybridModel::create({}, 1);
  TrackerConfig cfg;
  Trajectory t;
  t.birth_frame = 0;
  t.posteriors = {{1, 2, 3, 1.5, 4, 1.4, 0.2}, {1.5, 2.1, 3, 1.5, 4, 1.4, 0.25}};
  const StateVector prior = predict_prior(t, model, 9, cfg);
  CHECK(prior == t.posteriors.back());
  CHECK(t.last_prior == prior);
}

TEST_CASE("batched and single predictions agree") {
  const HybridModel model = HybridModel::create({}, 12, HeadInit::kRandom);
  TrackerConfig cfg;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Trajectory> tracks(5);
  for (std::size_t j = 0; j < tracks.size(); ++j) {
    tracks[j].birth_frame = static_cast<int>(j);
    tracks[j].miss_count = static_cast<int>(j % 3);
    for (std::size_t i = 0; i < 3 + 4 * j; ++i) {
      tracks[j].posteriors.push_back({n01(rng), n01(rng), n01(rng), 1.7, 4.1, 1.5,
                                      wrap_angle(n01(rng))});
    }
  }
  std::vector<Trajectory> copies = tracks;
  std::vector<Trajectory*> ptrs;
  for (Trajectory& t : tracks) ptrs.push_back(&t);
  const std::vector<StateVector> batched = predict_priors(ptrs, model, 30, cfg);
  for (std::size_t j = 0; j < copies.size(); ++j) {
    const StateVector single = predict_prior(copies[j], model, 30, cfg);
    CHECK((single.to_vector() - batched[j].to_vector()).cwiseAbs().maxCoeff() < 1e-12);
  }
}
