#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "hybridtrack/dataset.hpp"
#include "hybridtrack/errors.hpp"
#include "hybridtrack/training.hpp"

using namespace hybridtrack;

namespace {

std::vector<StateVector> constant_states(std::size_t n, const StateVector& s) {
  return std::vector<StateVector>(n, s);
}

std::vector<StateVector> path(std::initializer_list<std::pair<double, double>> xy) {
  std::vector<StateVector> out;
  for (const auto& [x, y] : xy) out.push_back({x, y, 0, 1, 1, 1, 0});
  return out;
}

Tracklet constant_tracklet() {
  Tracklet t;
  t.states = constant_states(kTrackletLength, {4, -3, 1, 1.8, 4.2, 1.5, 0.4});
  return t;
}

// Reference losses written directly from their definitions.
double ref_states(const std::vector<StateVector>& gt, const std::vector<StateVector>& pri,
                  const std::vector<StateVector>& post) {
  double sum = 0.0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    for (const StateVector* est : {&pri[k], &post[k]}) {
      const Vec7 d = est->to_vector() - gt[k].to_vector();
      for (int c = 0; c < 6; ++c) sum += std::abs(d[c]);
      sum += std::abs(angle_residual(est->theta, gt[k].theta));
    }
  }
  return sum / static_cast<double>(gt.size());
}

double ref_temporal(const std::vector<StateVector>& p) {
  double sum = 0.0;
  for (std::size_t k = 1; k < p.size(); ++k) {
    sum += std::abs(p[k].x - p[k - 1].x) + std::abs(p[k].y - p[k - 1].y) +
           std::abs(p[k].z - p[k - 1].z);
  }
  return sum / static_cast<double>(p.size() - 1);
}

double ref_direction(const std::vector<StateVector>& p, double eps) {
  std::vector<Eigen::Vector3d> d;
  for (std::size_t k = 1; k < p.size(); ++k) {
    const Eigen::Vector3d v(p[k].x - p[k - 1].x, p[k].y - p[k - 1].y, p[k].z - p[k - 1].z);
    d.push_back(v / (v.norm() + eps));
  }
  double sum = 0.0;
  for (std::size_t k = 1; k < d.size(); ++k) sum += (d[k] - d[k - 1]).norm();
  return sum / static_cast<double>(d.size() - 1);
}

}  // namespace

TEST_CASE("loss examples") {
  const auto gt = constant_states(19, {1, 2, 3, 1, 1, 1, 0.5});
  CHECK(loss_states(gt, gt, gt) == 0.0);
  auto shifted = gt;
  for (StateVector& s : shifted) s.x += 1.0;
  CHECK(loss_states(gt, gt, shifted) == 1.0);

  const auto line = path({{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}});
  CHECK(loss_temporal(line) == 1.0);
  CHECK(loss_direction(line) < 1e-7);
  CHECK(loss_temporal(gt) == 0.0);
  CHECK(loss_direction(gt) == 0.0);

  const auto turns = path({{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}});
  CHECK(loss_direction(turns, 0.0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK(loss_direction(turns) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-7));
}

TEST_CASE("loss errors") {
  const auto gt = constant_states(5, {});
  const auto short_seq = constant_states(4, {});
  CHECK_THROWS_AS(loss_states(gt, short_seq, gt), ShapeError);
  CHECK_THROWS_AS(loss_temporal(constant_states(1, {})), ContractViolation);
  CHECK_THROWS_AS(loss_direction(constant_states(2, {})), ContractViolation);
}

TEST_CASE("losses match scalar re-evaluation") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto random_seq = [&](std::size_t n) {
    std::vector<StateVector> v;
    for (std::size_t i = 0; i < n; ++i) {
      v.push_back({n01(rng), n01(rng), n01(rng), 1 + std::abs(n01(rng)), 1 + std::abs(n01(rng)),
                   1 + std::abs(n01(rng)), wrap_angle(3 * n01(rng))});
    }
    return v;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const auto gt = random_seq(19);
    const auto pri = random_seq(19);
    const auto post = random_seq(19);
    const double s = loss_states(gt, pri, post);
    CHECK(s == doctest::Approx(ref_states(gt, pri, post)).epsilon(1e-12));
    CHECK(loss_temporal(post) == doctest::Approx(ref_temporal(post)).epsilon(1e-12));
    CHECK(loss_direction(post) == doctest::Approx(ref_direction(post, 1e-8)).epsilon(1e-12));
    CHECK(s >= 0.0);
  }
}

TEST_CASE("unroll shape and the constant tracklet") {
  const HybridModel model = HybridModel::create({}, 5);
  const Tracklet t = constant_tracklet();
  const UnrollResult r = unroll_filter(model, t);
  REQUIRE(r.priors.size() == 19);
  REQUIRE(r.posteriors.size() == 19);
  for (std::size_t k = 0; k < 19; ++k) {
    CHECK(r.priors[k] == t.states.front());
    CHECK(r.posteriors[k] == t.states.front());
  }
  CHECK(r.loss.states == 0.0);
  CHECK(r.loss.temporal == 0.0);
  CHECK(r.loss.direction == 0.0);
  CHECK(r.loss.total == 0.0);
}

TEST_CASE("batched unroll agrees with single-tracklet unrolls") {
  const HybridModel model = HybridModel::create({}, 6, HeadInit::kRandom);
  std::vector<Tracklet> ts;
  for (std::uint64_t s = 0; s < 4; ++s) ts.push_back(random_tracklet(s, 0.1, s % 2 ? 7 : 0));
  // Columns are grouped by context length, so mixed contexts exercise the
  // grouping path.
  std::vector<const Tracklet*> batch;
  for (const Tracklet& t : ts) batch.push_back(&t);
  const FilterUnroll u(model, batch, UnrollOptions{});
  double mean_total = 0.0;
  for (std::size_t b = 0; b < ts.size(); ++b) {
    const UnrollResult r = unroll_filter(model, ts[b]);
    for (std::size_t k = 0; k < 19; ++k) {
      const Vec7 want = r.posteriors[k].to_vector();
      CHECK((u.posteriors()[k].col(static_cast<Eigen::Index>(b)) - want).cwiseAbs().maxCoeff() <
            1e-12);
    }
    mean_total += r.loss.total / static_cast<double>(ts.size());
  }
  CHECK(u.loss().total == doctest::Approx(mean_total).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences") {
  HybridModel model = HybridModel::create({}, 21, HeadInit::kRandom);
  for (int context : {0, 12}) {
    std::vector<Tracklet> ts;
    for (std::uint64_t s = 0; s < 3; ++s) ts.push_back(random_tracklet(100 + s, 0.1, context));
    GradCheckOptions opts;
    opts.seed = 4;
    const GradCheckReport rep = gradient_check(model, ts, opts);
    INFO("worst " << rep.worst_tensor << " " << rep.max_relative_error);
    CHECK(rep.passed());
    CHECK(rep.max_relative_error < 1e-4);
  }
}

TEST_CASE("teacher forcing also differentiates correctly") {
  HybridModel model = HybridModel::create({}, 22, HeadInit::kRandom);
  const std::vector<Tracklet> ts{random_tracklet(7, 0.1, 5)};
  GradCheckOptions opts;
  opts.unroll.history = HistorySource::kGroundTruth;
  CHECK(gradient_check(model, ts, opts).passed());
}

TEST_CASE("training on constant tracklets") {
  std::vector<Tracklet> data(16, constant_tracklet());
  TrainOptions opts;
  opts.batch_size = 16;
  opts.iterations = 200;
  HybridModel fresh = HybridModel::create({}, 8);
  const TrainResult z = train(fresh, data, opts);
  CHECK(z.trace.size() == 200);
  CHECK(z.grad_norms.size() == 200);
  CHECK(z.final.total < 1e-3);

  // From random heads the loss has to be trained away.
  HybridModel noisy = HybridModel::create({}, 8, HeadInit::kRandom);
  opts.iterations = 300;
  const TrainResult r = train(noisy, data, opts);
  CHECK(r.initial.total > 1e-2);
  CHECK(r.final.total < 0.5 * r.initial.total);
  double early = 0.0;
  double late = 0.0;
  for (int i = 0; i < 50; ++i) {
    early += r.trace[static_cast<std::size_t>(i)].total;
    late += r.trace[r.trace.size() - 50 + static_cast<std::size_t>(i)].total;
  }
  CHECK(late < early);
}

TEST_CASE("training is seed-deterministic") {
  std::vector<Tracklet> data;
  for (std::uint64_t s = 0; s < 10; ++s) data.push_back(random_tracklet(s, 0.1, 4));
  TrainOptions opts;
  opts.iterations = 5;
  opts.batch_size = 4;
  opts.seed = 3;
  HybridModel a = HybridModel::create({}, 1);
  HybridModel b = HybridModel::create({}, 1);
  const TrainResult ra = train(a, data, opts);
  const TrainResult rb = train(b, data, opts);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].value == b.params()[i].value);
  }
  REQUIRE(ra.trace.size() == 5);
  CHECK(ra.trace.back().total == rb.trace.back().total);

  std::ostringstream csv;
  write_loss_trace(ra.trace, csv);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "iteration,l_states,l_temporal,l_direction,l_total");
  int rows = 0;
  while (std::getline(lines, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 4);
    CHECK(line.rfind(std::to_string(++rows) + ",", 0) == 0);
  }
  CHECK(rows == 5);
}

TEST_CASE("training preconditions") {
  HybridModel model = HybridModel::create({}, 1);
  CHECK_THROWS_AS(train(model, std::span<const Tracklet>(), TrainOptions{}), ContractViolation);
  Tracklet bad = constant_tracklet();
  bad.states.pop_back();
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  const std::vector<Tracklet> one{bad};
  CHECK_THROWS_AS(train(model, one, TrainOptions{}), ContractViolation);
}

TEST_CASE("random tracklets are reproducible") {
  const Tracklet a = random_tracklet(5, 0.1, 3);
  const Tracklet b = random_tracklet(5, 0.1, 3);
  CHECK(a.states == b.states);
  CHECK(a.measurements == b.measurements);
  CHECK(a.context_states.size() == 3);
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("cutting tracklets with context") {
  LabeledSequence seq;
  seq.name = "s";
  for (int k = 0; k < 65; ++k) {
    seq.truth[{k, 1}] = {static_cast<double>(k), 0, 0, 1, 1, 1, 0};
    if (k % 2 == 0) seq.truth[{k, 2}] = {0, static_cast<double>(k), 0, 1, 1, 1, 0};
    if (k != 3) seq.measurements[{k, 1}] = {k + 0.5, 0, 0, 1, 1, 1, 0};
  }
  const TrackletSet all = cut_tracklets(seq);
  // Identity 2 never has 20 consecutive frames.
  REQUIRE(all.tracklets.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const Tracklet& t = all.tracklets[i];
    CHECK(all.sources[i] == TrackletSource{"s", 1, static_cast<int>(20 * i)});
    CHECK(t.states.front().x == 20.0 * static_cast<double>(i));
    CHECK(t.context_states.size() == 20 * i);
    CHECK(t.context_measurements.size() == 20 * i);
    CHECK_NOTHROW(t.validate());
  }
  // Frame 3 has no measurement and falls back to the truth.
  CHECK(all.tracklets[0].measurements[3].x == 3.0);
  CHECK(all.tracklets[0].measurements[4].x == 4.5);

  const TrackletSet capped = cut_tracklets(seq, 10);
  CHECK(capped.tracklets[2].context_states.size() == 10);
  CHECK(capped.tracklets[2].context_states.front().x == 30.0);
  CHECK(cut_tracklets(seq, 0).tracklets[1].context_states.empty());
  CHECK_THROWS_AS(cut_tracklets(seq, -1), InvalidValueError);

  std::ostringstream manifest;
  write_manifest(all.sources, manifest);
  const auto parsed = parse_manifest(manifest.str());
  CHECK(parsed == all.sources);
  const std::vector<TrackletSource> pick{all.sources[1]};
  CHECK(select_tracklets(all, pick).front().states == all.tracklets[1].states);
  const std::vector<TrackletSource> missing{{"s", 9, 0}};
  CHECK_THROWS_AS(select_tracklets(all, missing), ContractViolation);
  CHECK_THROWS_AS(parse_manifest("s 1\n"), ParseError);
}
