#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hybridtrack/errors.hpp"
#include "hybridtrack/state.hpp"

using namespace hybridtrack;

TEST_CASE("wrap_angle fixed points") {
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(1.5 * kPi) == doctest::Approx(-0.5 * kPi).epsilon(1e-15));
  CHECK(wrap_angle(-kPi) == -kPi);
  CHECK(wrap_angle(kPi) == -kPi);
  CHECK(wrap_angle(2.0 * kPi) == doctest::Approx(0.0));
  CHECK_THROWS_AS(wrap_angle(std::numeric_limits<double>::quiet_NaN()), InvalidValueError);
  CHECK_THROWS_AS(wrap_angle(std::numeric_limits<double>::infinity()), InvalidValueError);
}

TEST_CASE("wrap_angle is idempotent and stays in range") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 10000; ++i) {
    const double t = u(rng);
    const double w = wrap_angle(t);
    CHECK(w >= -kPi);
    CHECK(w < kPi);
    CHECK(wrap_angle(w) == w);
    // Same angle modulo a full turn.
    CHECK(std::cos(w) == doctest::Approx(std::cos(t)).epsilon(1e-9));
    CHECK(std::sin(w) == doctest::Approx(std::sin(t)).epsilon(1e-9));
  }
}

TEST_CASE("angle_residual examples") {
  CHECK(angle_residual(0.1, -0.1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(angle_residual(kPi - 0.05, -kPi + 0.05) == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(angle_residual(1.234, 1.234) == 0.0);
}

TEST_CASE("angle_residual is antisymmetric away from the seam") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (int i = 0; i < 10000; ++i) {
    const double a = u(rng);
    const double b = u(rng);
    const double r = angle_residual(a, b);
    CHECK(std::abs(r) <= kPi);
    if (r != -kPi) CHECK(angle_residual(b, a) == doctest::Approx(-r).epsilon(1e-12));
  }
}

TEST_CASE("state validation") {
  CHECK_NOTHROW(validate(StateVector{}));
  CHECK_THROWS_AS(validate(StateVector{0, 0, 0, 0.0, 1, 1, 0}), InvalidValueError);
  CHECK_THROWS_AS(validate(StateVector{0, 0, 0, 1, 1, -1, 0}), InvalidValueError);
  CHECK_THROWS_AS(validate(StateVector{0, 0, 0, 1, 1, 1, kPi}), InvalidValueError);
  CHECK_THROWS_AS(validate(StateVector{std::nan(""), 0, 0, 1, 1, 1, 0}), InvalidValueError);
}

TEST_CASE("state_difference wraps yaw") {
  const StateVector a{1, 2, 3, 4, 5, 6, kPi - 0.05};
  const StateVector b{0, 0, 0, 1, 1, 1, -kPi + 0.05};
  const Vec7 d = state_difference(a, b);
  CHECK(d[0] == 1.0);
  CHECK(d[5] == 5.0);
  CHECK(d[6] == doctest::Approx(-0.1).epsilon(1e-12));
}

TEST_CASE("status machine never leaves Dead") {
  const TrackStatus all[] = {TrackStatus::kTentative, TrackStatus::kActive, TrackStatus::kDead};
  int legal = 0;
  for (TrackStatus from : all) {
    for (TrackStatus to : all) {
      if (is_valid_transition(from, to)) ++legal;
    }
  }
  CHECK(legal == 3);
  CHECK(is_valid_transition(TrackStatus::kTentative, TrackStatus::kActive));
  CHECK(is_valid_transition(TrackStatus::kTentative, TrackStatus::kDead));
  CHECK(is_valid_transition(TrackStatus::kActive, TrackStatus::kDead));

  // Every sequence of up to four requested transitions: once Dead, nothing
  // else is accepted.
  for (int code = 0; code < 81; ++code) {
    Trajectory t;
    bool died = false;
    int c = code;
    for (int step = 0; step < 4; ++step, c /= 3) {
      const TrackStatus to = all[c % 3];
      if (is_valid_transition(t.status, to)) {
        t.transition(to);
      } else {
        CHECK_THROWS_AS(t.transition(to), ContractViolation);
      }
      if (t.status == TrackStatus::kDead) died = true;
      if (died) CHECK(t.status == TrackStatus::kDead);
    }
  }
}

TEST_CASE("tracker config defaults and validation") {
  TrackerConfig c;
  CHECK(c.t_max == 8);
  CHECK(c.a_min == 0.1);
  CHECK(c.a_max == 0.9);
  CHECK(c.mu_max == 22);
  CHECK(c.sigma_birth == 5);
  CHECK(c.tau_3d == 1.2);
  CHECK(c.tau_l2 == 3.0);
  CHECK(c.gate() == 1.2);
  c.cost_function = CostFunction::kL2;
  CHECK(c.gate() == 3.0);
  c.cost_function = CostFunction::kCIoU3D;
  CHECK(c.p_window == 10);
  CHECK(c.epsilon_init == 1e-3);
  CHECK(c.cost_function == CostFunction::kCIoU3D);
  CHECK_FALSE(c.report_coasted);
  CHECK_NOTHROW(c.validate());

  TrackerConfig bad = c;
  bad.a_min = 0.9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.t_max = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.mu_max = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.tau_3d = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.tau_l2 = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cost function names round-trip") {
  for (CostFunction f : {CostFunction::kCIoU3D, CostFunction::kL2, CostFunction::kL2PlusSize,
                         CostFunction::kCIoU2D}) {
    CHECK(parse_cost_function(to_string(f)) == f);
  }
  CHECK_THROWS(parse_cost_function("manhattan"));
}
