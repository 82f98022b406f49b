#include <doctest.h>

#include <memory>
#include <vector>

#include "hybridtrack/errors.hpp"
#include "hybridtrack/filters.hpp"
#include "hybridtrack/scenario.hpp"
#include "hybridtrack/tracker.hpp"
#include "support/oracles.hpp"

using namespace hybridtrack;

namespace {

std::shared_ptr<const MotionFilter> untrained_filter() {
  return std::make_shared<HybridFilter>(
      std::make_shared<HybridModel>(HybridModel::create({}, 0)));
}

Detection car(double x, double y, int frame, double score = 1.0) {
  Detection d;
  d.state = {x, y, 0.0, 1.8, 4.2, 1.5, 0.0};
  d.frame = frame;
  d.score = score;
  return d;
}

std::vector<Detection> cars(int frame, std::initializer_list<double> xs) {
  std::vector<Detection> out;
  for (double x : xs) out.push_back(car(x, 0.0, frame));
  return out;
}

void check_conservation(const Tracker& t, int live_after) {
  const StepStats& s = t.last_stats();
  CHECK(s.live_before + s.births - s.deaths == live_after);
  CHECK(s.pairs + s.unmatched_tracks == s.live_before);
  CHECK(s.pairs + s.unmatched_detections == s.detections);
  CHECK(s.births == s.unmatched_detections);
}

}  // namespace

TEST_CASE("first frame births tentative tracks and reports nothing") {
  Tracker tracker({}, untrained_filter());
  const auto dets = cars(0, {0.0, 20.0, 40.0});
  const FrameOutput out = tracker.step(0, dets);
  CHECK(out.tracks.empty());
  REQUIRE(tracker.live().size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const Trajectory& t = tracker.live()[i];
    CHECK(t.status == TrackStatus::kTentative);
    CHECK(t.track_id == static_cast<int>(i));
    CHECK(t.birth_frame == 0);
    CHECK(t.posteriors.size() == 1);
    CHECK(t.posteriors.front() == dets[i].state);
    REQUIRE(t.virtual_history.has_value());
    CHECK(t.virtual_history->x == dets[i].state.x - 1e-3);
    CHECK(t.virtual_history->theta == wrap_angle(-1e-3));
  }
  check_conservation(tracker, 3);

  const FrameOutput second = tracker.step(1, cars(1, {0.0, 20.0, 40.0}));
  REQUIRE(second.tracks.size() == 3);
  for (const TrackOutput& o : second.tracks) CHECK_FALSE(o.coasted);
  for (const Trajectory& t : tracker.live()) CHECK(t.status == TrackStatus::kActive);
  check_conservation(tracker, 3);
}

TEST_CASE("miss counter resets on a match") {
  Tracker tracker({}, untrained_filter());
  tracker.step(0, cars(0, {0.0}));
  tracker.step(1, cars(1, {0.0}));
  tracker.step(2, {});
  tracker.step(3, {});
  CHECK(tracker.live().front().miss_count == 2);
  CHECK(tracker.live().front().posteriors.size() == 4);
  CHECK(tracker.live().front().last_correction.isZero(0.0));
  const FrameOutput out = tracker.step(4, cars(4, {0.0}));
  CHECK(tracker.live().front().miss_count == 0);
  CHECK(out.tracks.size() == 1);
}

TEST_CASE("tentative tracks die after sigma_birth misses") {
  TrackerConfig cfg;
  Tracker tracker(cfg, untrained_filter());
  tracker.step(0, cars(0, {0.0}));
  for (int k = 1; k < cfg.sigma_birth; ++k) {
    tracker.step(k, {});
    CHECK(tracker.live().size() == 1);
  }
  tracker.step(cfg.sigma_birth, {});
  CHECK(tracker.live().empty());
  REQUIRE(tracker.dead().size() == 1);
  CHECK(tracker.dead().front().status == TrackStatus::kDead);
}

TEST_CASE("active tracks die after mu_max misses") {
  TrackerConfig cfg;
  Tracker tracker(cfg, untrained_filter());
  tracker.step(0, cars(0, {0.0}));
  tracker.step(1, cars(1, {0.0}));
  for (int m = 1; m < cfg.mu_max; ++m) {
    tracker.step(1 + m, {});
    CHECK(tracker.live().size() == 1);
  }
  tracker.step(1 + cfg.mu_max, {});
  CHECK(tracker.live().empty());
  CHECK(tracker.last_stats().deaths == 1);
}

TEST_CASE("death time is monotone in mu_max") {
  int last = -1;
  for (int mu : {2, 5, 10, 22, 40}) {
    TrackerConfig cfg;
    cfg.mu_max = mu;
    Tracker tracker(cfg, untrained_filter());
    tracker.step(0, cars(0, {0.0}));
    tracker.step(1, cars(1, {0.0}));
    int k = 2;
    while (!tracker.live().empty()) tracker.step(k++, {});
    CHECK(k > last);
    last = k;
  }
}

TEST_CASE("empty and single-frame sequences") {
  const std::vector<std::vector<Detection>> none;
  CHECK(run_sequence({}, untrained_filter(), none).empty());
  const std::vector<std::vector<Detection>> one{cars(0, {1.0, 30.0})};
  const auto out = run_sequence({}, untrained_filter(), one);
  REQUIRE(out.size() == 1);
  CHECK(out.front().tracks.empty());
}

TEST_CASE("contract violations") {
  Tracker tracker({}, untrained_filter());
  tracker.step(3, {});
  CHECK_THROWS_AS(tracker.step(3, {}), ContractViolation);
  CHECK_THROWS_AS(tracker.step(2, {}), ContractViolation);
  const auto stale = cars(4, {0.0});
  CHECK_THROWS_AS(tracker.step(5, stale), ContractViolation);
  auto bad = cars(6, {0.0});
  bad.front().state.w = -1.0;
  CHECK_THROWS_AS(tracker.step(6, bad), InvalidValueError);
  CHECK_THROWS_AS(Tracker({}, nullptr), ContractViolation);
}

TEST_CASE("low-score detections are ignored") {
  TrackerConfig cfg;
  cfg.min_score = 0.5;
  Tracker tracker(cfg, untrained_filter());
  const std::vector<Detection> dets{car(0, 0, 0, 0.9), car(20, 0, 0, 0.2)};
  tracker.step(0, dets);
  CHECK(tracker.live().size() == 1);
  CHECK(tracker.last_stats().detections == 1);
}

TEST_CASE("coasted tracks are reported only on request") {
  for (bool report : {false, true}) {
    TrackerConfig cfg;
    cfg.report_coasted = report;
    Tracker tracker(cfg, untrained_filter());
    tracker.step(0, cars(0, {0.0}));
    tracker.step(1, cars(1, {0.0}));
    const FrameOutput out = tracker.step(2, {});
    CHECK(out.tracks.size() == (report ? 1U : 0U));
    if (report) CHECK(out.tracks.front().coasted);
  }
}

TEST_CASE("tracking is deterministic and matches the untrained reference") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    ScenarioSpec spec;
    spec.n_frames = 80;
    spec.seed = seed;
    const Scenario sc = generate_scenario(spec);
    TrackerConfig cfg;
    const auto a = run_sequence(cfg, untrained_filter(), sc.detections);
    const auto b = run_sequence(cfg, untrained_filter(), sc.detections);
    const auto want = oracle::untrained_tracker(sc.detections, cfg);
    REQUIRE(a.size() == want.size());
    std::size_t reported = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      REQUIRE(a[k].tracks.size() == b[k].tracks.size());
      REQUIRE(a[k].tracks.size() == want[k].size());
      for (std::size_t i = 0; i < a[k].tracks.size(); ++i) {
        CHECK(a[k].tracks[i].track_id == b[k].tracks[i].track_id);
        CHECK(a[k].tracks[i].state == b[k].tracks[i].state);
        CHECK(a[k].tracks[i].track_id == want[k][i].first);
        CHECK(a[k].tracks[i].state == want[k][i].second);
      }
      reported += a[k].tracks.size();
    }
    CHECK(reported > 0);
  }
}

TEST_CASE("conservation over a scenario") {
  ScenarioSpec spec;
  spec.n_frames = 60;
  spec.seed = 9;
  spec.fp_rate = 0.2;
  const Scenario sc = generate_scenario(spec);
  for (const auto& filter :
       {untrained_filter(),
        std::shared_ptr<const MotionFilter>(std::make_shared<ConstantVelocityFilter>())}) {
    Tracker tracker({}, filter);
    for (std::size_t k = 0; k < sc.detections.size(); ++k) {
      const FrameOutput out = tracker.step(static_cast<int>(k), sc.detections[k]);
      check_conservation(tracker, static_cast<int>(tracker.live().size()));
      for (std::size_t i = 1; i < out.tracks.size(); ++i) {
        CHECK(out.tracks[i - 1].track_id < out.tracks[i].track_id);
      }
      for (const Trajectory& t : tracker.live()) {
        CHECK(t.miss_count < 22);
        CHECK(t.posteriors.size() == static_cast<std::size_t>(k - t.birth_frame + 1));
      }
    }
  }
}
