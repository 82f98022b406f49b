#include "hybridtrack/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "hybridtrack/errors.hpp"

namespace hybridtrack {

namespace {

constexpr std::string_view kHeader = "# hybridtrack-scenario v1";

struct Agent {
  int id = 0;
  MotionPrimitive motion = MotionPrimitive::kConstantVelocity;
  int start = 0;
  int end = 0;  // exclusive
  double x = 0, y = 0, z = 0, w = 0, l = 0, h = 0, yaw = 0;
  double speed = 0.0;
  double accel = 0.0;
  double yaw_rate = 0.0;
  // lane change: manoeuvre length, pause between manoeuvres, peak rate
  double lc_duration = 4.0;
  double lc_pause = 2.0;
  double lc_peak = 0.1;
  double clock = 0.0;
  double lc_sign = 1.0;
};

double lane_change_rate(const Agent& a) {
  const double cycle = a.lc_duration + a.lc_pause;
  const double t = std::fmod(a.clock, cycle);
  if (t >= a.lc_duration) return 0.0;
  const int n = static_cast<int>(std::floor(a.clock / cycle));
  const double sign = (n % 2 == 0) ? a.lc_sign : -a.lc_sign;
  // Full sine period: heading rises and returns, leaving a lateral offset.
  return sign * a.lc_peak * std::sin(2.0 * kPi * t / a.lc_duration);
}

void advance(Agent& a, double dt) {
  switch (a.motion) {
    case MotionPrimitive::kConstantVelocity:
      break;
    case MotionPrimitive::kConstantAcceleration:
      a.speed = std::clamp(a.speed + a.accel * dt, 0.5, 20.0);
      break;
    case MotionPrimitive::kConstantTurn:
      a.yaw = wrap_angle(a.yaw + a.yaw_rate * dt);
      break;
    case MotionPrimitive::kLaneChange:
      a.yaw = wrap_angle(a.yaw + lane_change_rate(a) * dt);
      break;
  }
  a.x += a.speed * std::cos(a.yaw) * dt;
  a.y += a.speed * std::sin(a.yaw) * dt;
  a.clock += dt;
}

StateVector box_of(const Agent& a) { return {a.x, a.y, a.z, a.w, a.l, a.h, a.yaw}; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double number(std::string_view f, const std::string& source, int line) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v)) {
    throw ParseError(source, line, "bad number '" + std::string(f) + "'");
  }
  return v;
}

long long integer(std::string_view f, const std::string& source, int line) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size()) {
    throw ParseError(source, line, "bad integer '" + std::string(f) + "'");
  }
  return v;
}

std::vector<std::string_view> words(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t s = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > s) out.push_back(line.substr(s, i - s));
  }
  return out;
}

MotionPrimitive parse_motion(std::string_view s, const std::string& source, int line) {
  for (auto m : {MotionPrimitive::kConstantVelocity, MotionPrimitive::kConstantAcceleration,
                 MotionPrimitive::kConstantTurn, MotionPrimitive::kLaneChange}) {
    if (to_string(m) == s) return m;
  }
  throw ParseError(source, line, "unknown motion '" + std::string(s) + "'");
}

StateVector read_state(const std::vector<std::string_view>& f, std::size_t first,
                       const std::string& source, int line) {
  StateVector s{number(f[first], source, line),     number(f[first + 1], source, line),
                number(f[first + 2], source, line), number(f[first + 3], source, line),
                number(f[first + 4], source, line), number(f[first + 5], source, line),
                number(f[first + 6], source, line)};
  try {
    validate(s);
  } catch (const Error& e) {
    throw ParseError(source, line, e.what());
  }
  return s;
}

std::string state_fields(const StateVector& s) {
  return fmt(s.x) + ' ' + fmt(s.y) + ' ' + fmt(s.z) + ' ' + fmt(s.w) + ' ' + fmt(s.l) + ' ' +
         fmt(s.h) + ' ' + fmt(s.theta);
}

}  // namespace

std::string_view to_string(MotionPrimitive m) {
  switch (m) {
    case MotionPrimitive::kConstantVelocity:
      return "cv";
    case MotionPrimitive::kConstantAcceleration:
      return "ca";
    case MotionPrimitive::kConstantTurn:
      return "ctrv";
    case MotionPrimitive::kLaneChange:
      return "lane";
  }
  return "?";
}

MotionMix parse_motion_mix(std::string_view text) {
  MotionMix mix{0.0, 0.0, 0.0, 0.0};
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    const std::string_view item = text.substr(pos, comma - pos);
    pos = comma + 1;
    const std::size_t colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw ConfigError("motion mix entry '" + std::string(item) + "' is not name:weight");
    }
    const std::string_view name = item.substr(0, colon);
    const std::string_view val = item.substr(colon + 1);
    double w = 0.0;
    const auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), w);
    if (ec != std::errc() || p != val.data() + val.size() || !(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("motion mix weight '" + std::string(val) + "' is invalid");
    }
    if (name == "cv") {
      mix.constant_velocity = w;
    } else if (name == "ca") {
      mix.constant_acceleration = w;
    } else if (name == "ctrv") {
      mix.constant_turn = w;
    } else if (name == "lane") {
      mix.lane_change = w;
    } else {
      throw ConfigError("unknown motion primitive '" + std::string(name) + "'");
    }
  }
  return mix;
}

std::string format_motion_mix(const MotionMix& mix) {
  return "cv:" + fmt(mix.constant_velocity) + ",ca:" + fmt(mix.constant_acceleration) +
         ",ctrv:" + fmt(mix.constant_turn) + ",lane:" + fmt(mix.lane_change);
}

void ScenarioSpec::validate() const {
  auto bad = [](const std::string& what) { throw ConfigError("scenario: " + what); };
  if (n_agents < 0) bad("n_agents must be >= 0");
  if (n_frames < 1) bad("n_frames must be >= 1");
  if (!(dt > 0.0) || !std::isfinite(dt)) bad("dt must be positive");
  if (!(extent > 0.0) || !std::isfinite(extent)) bad("extent must be positive");
  for (double s : {sigma_pos, sigma_dim, sigma_yaw}) {
    if (!(s >= 0.0) || !std::isfinite(s)) bad("noise sigmas must be >= 0");
  }
  if (!(miss_rate >= 0.0 && miss_rate <= 1.0)) bad("miss_rate must lie in [0, 1]");
  if (!(fp_rate >= 0.0 && fp_rate <= 1.0)) bad("fp_rate must lie in [0, 1]");
  const double total =
      mix.constant_velocity + mix.constant_acceleration + mix.constant_turn + mix.lane_change;
  for (double w : {mix.constant_velocity, mix.constant_acceleration, mix.constant_turn,
                   mix.lane_change}) {
    if (!(w >= 0.0) || !std::isfinite(w)) bad("motion weights must be >= 0");
  }
  if (!(total > 0.0)) bad("motion mix has no positive weight");
}

Scenario generate_scenario(const ScenarioSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::discrete_distribution<int> pick_motion({spec.mix.constant_velocity,
                                               spec.mix.constant_acceleration,
                                               spec.mix.constant_turn, spec.mix.lane_change});

  const int n = spec.n_frames;
  std::vector<Agent> agents;
  for (int i = 0; i < spec.n_agents; ++i) {
    Agent a;
    a.id = i;
    a.motion = static_cast<MotionPrimitive>(pick_motion(rng));
    const bool from_start = u01(rng) < 0.3;
    a.start = from_start ? 0 : static_cast<int>(u01(rng) * (n / 2));
    const int life = std::max(1, n / 3 + static_cast<int>(u01(rng) * (n - n / 3)));
    a.end = std::min(n, a.start + life);
    a.x = uniform(-spec.extent, spec.extent);
    a.y = uniform(-spec.extent, spec.extent);
    a.w = uniform(1.6, 2.0);
    a.l = uniform(3.8, 4.8);
    a.h = uniform(1.4, 1.7);
    a.z = 0.5 * a.h + uniform(-0.1, 0.1);
    a.yaw = uniform(-kPi, kPi);
    a.speed = uniform(3.0, 12.0);
    a.accel = uniform(-1.0, 1.5);
    a.yaw_rate = (u01(rng) < 0.5 ? -1.0 : 1.0) * uniform(0.15, 0.5);
    a.lc_duration = uniform(3.0, 5.0);
    a.lc_pause = uniform(1.0, 3.0);
    // Peak heading deviation of 0.12..0.2 rad over one manoeuvre.
    a.lc_peak = uniform(0.12, 0.2) * kPi / a.lc_duration;
    a.lc_sign = u01(rng) < 0.5 ? -1.0 : 1.0;
    agents.push_back(a);
  }

  Scenario s;
  s.spec = spec;
  s.ground_truth.resize(static_cast<std::size_t>(n));
  s.detections.resize(static_cast<std::size_t>(n));
  s.detection_ids.resize(static_cast<std::size_t>(n));
  std::binomial_distribution<int> fp_count(spec.n_agents, spec.fp_rate);

  for (int k = 0; k < n; ++k) {
    std::vector<std::pair<Detection, int>> dets;
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    for (Agent& a : agents) {
      if (k < a.start || k >= a.end) continue;
      if (k > a.start) advance(a, spec.dt);
      const StateVector truth = box_of(a);
      s.ground_truth[static_cast<std::size_t>(k)].push_back({a.id, truth, a.motion});
      lo_x = std::min(lo_x, a.x);
      hi_x = std::max(hi_x, a.x);
      lo_y = std::min(lo_y, a.y);
      hi_y = std::max(hi_y, a.y);
      if (u01(rng) < spec.miss_rate) continue;
      StateVector m = truth;
      m.x += spec.sigma_pos * gauss(rng);
      m.y += spec.sigma_pos * gauss(rng);
      m.z += spec.sigma_pos * gauss(rng);
      m.w = std::max(0.1, m.w + spec.sigma_dim * gauss(rng));
      m.l = std::max(0.1, m.l + spec.sigma_dim * gauss(rng));
      m.h = std::max(0.1, m.h + spec.sigma_dim * gauss(rng));
      m.theta = wrap_angle(m.theta + spec.sigma_yaw * gauss(rng));
      dets.push_back({{m, uniform(0.6, 1.0), k, 0}, a.id});
    }
    if (lo_x > hi_x) {
      lo_x = lo_y = -spec.extent;
      hi_x = hi_y = spec.extent;
    }
    const int fps = fp_count(rng);
    for (int f = 0; f < fps; ++f) {
      StateVector m;
      m.x = uniform(lo_x - 10.0, hi_x + 10.0);
      m.y = uniform(lo_y - 10.0, hi_y + 10.0);
      m.w = uniform(1.4, 2.1);
      m.l = uniform(3.0, 5.0);
      m.h = uniform(1.3, 1.8);
      m.z = 0.5 * m.h + uniform(-0.2, 0.2);
      m.theta = uniform(-kPi, kPi);
      dets.push_back({{m, uniform(0.1, 0.7), k, 0}, -1});
    }
    std::shuffle(dets.begin(), dets.end(), rng);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      dets[i].first.source_id = static_cast<int>(i);
      s.detections[static_cast<std::size_t>(k)].push_back(dets[i].first);
      s.detection_ids[static_cast<std::size_t>(k)].push_back(dets[i].second);
    }
  }
  return s;
}

std::string write_scenario(const Scenario& s) {
  const ScenarioSpec& p = s.spec;
  std::string out(kHeader);
  out += '\n';
  out += "spec n_agents=" + std::to_string(p.n_agents) + " n_frames=" +
         std::to_string(p.n_frames) + " dt=" + fmt(p.dt) + " extent=" + fmt(p.extent) +
         " sigma_pos=" + fmt(p.sigma_pos) + " sigma_dim=" + fmt(p.sigma_dim) +
         " sigma_yaw=" + fmt(p.sigma_yaw) + " miss_rate=" + fmt(p.miss_rate) +
         " fp_rate=" + fmt(p.fp_rate) + " seed=" + std::to_string(p.seed) +
         " mix=" + format_motion_mix(p.mix) + '\n';
  for (std::size_t k = 0; k < s.ground_truth.size(); ++k) {
    for (const GroundTruthBox& g : s.ground_truth[k]) {
      out += "gt " + std::to_string(k) + ' ' + std::to_string(g.track_id) + ' ' +
             std::string(to_string(g.motion)) + ' ' + state_fields(g.state) + '\n';
    }
    for (std::size_t i = 0; i < s.detections[k].size(); ++i) {
      const Detection& d = s.detections[k][i];
      out += "det " + std::to_string(k) + ' ' + std::to_string(s.detection_ids[k][i]) + ' ' +
             fmt(d.score) + ' ' + state_fields(d.state) + '\n';
    }
  }
  return out;
}

Scenario parse_scenario(std::string_view text, const std::string& source) {
  Scenario s;
  bool have_header = false;
  bool have_spec = false;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!have_header) {
      std::string_view trimmed = line;
      while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.back()))) {
        trimmed.remove_suffix(1);
      }
      if (trimmed != kHeader) throw ParseError(source, line_no, "missing scenario header");
      have_header = true;
      continue;
    }
    const auto f = words(line);
    if (f.empty() || f[0].starts_with('#')) continue;
    if (f[0] == "spec") {
      ScenarioSpec& p = s.spec;
      for (std::size_t i = 1; i < f.size(); ++i) {
        const std::size_t eq = f[i].find('=');
        if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected key=value");
        const std::string_view key = f[i].substr(0, eq);
        const std::string_view val = f[i].substr(eq + 1);
        if (key == "n_agents") {
          p.n_agents = static_cast<int>(integer(val, source, line_no));
        } else if (key == "n_frames") {
          p.n_frames = static_cast<int>(integer(val, source, line_no));
        } else if (key == "dt") {
          p.dt = number(val, source, line_no);
        } else if (key == "extent") {
          p.extent = number(val, source, line_no);
        } else if (key == "sigma_pos") {
          p.sigma_pos = number(val, source, line_no);
        } else if (key == "sigma_dim") {
          p.sigma_dim = number(val, source, line_no);
        } else if (key == "sigma_yaw") {
          p.sigma_yaw = number(val, source, line_no);
        } else if (key == "miss_rate") {
          p.miss_rate = number(val, source, line_no);
        } else if (key == "fp_rate") {
          p.fp_rate = number(val, source, line_no);
        } else if (key == "seed") {
          std::uint64_t seed = 0;
          const auto [pp, ec] = std::from_chars(val.data(), val.data() + val.size(), seed);
          if (ec != std::errc() || pp != val.data() + val.size()) {
            throw ParseError(source, line_no, "bad seed");
          }
          p.seed = seed;
        } else if (key == "mix") {
          try {
            p.mix = parse_motion_mix(val);
          } catch (const ConfigError& e) {
            throw ParseError(source, line_no, e.what());
          }
        } else {
          throw ParseError(source, line_no, "unknown spec key '" + std::string(key) + "'");
        }
      }
      try {
        p.validate();
      } catch (const ConfigError& e) {
        throw ParseError(source, line_no, e.what());
      }
      s.ground_truth.assign(static_cast<std::size_t>(p.n_frames), {});
      s.detections.assign(static_cast<std::size_t>(p.n_frames), {});
      s.detection_ids.assign(static_cast<std::size_t>(p.n_frames), {});
      have_spec = true;
      continue;
    }
    if (!have_spec) throw ParseError(source, line_no, "record before the spec line");
    const bool is_gt = f[0] == "gt";
    if (!is_gt && f[0] != "det") {
      throw ParseError(source, line_no, "unknown record '" + std::string(f[0]) + "'");
    }
    if (f.size() != 11) {
      throw ParseError(source, line_no, "expected 11 fields, found " + std::to_string(f.size()));
    }
    const long long frame = integer(f[1], source, line_no);
    if (frame < 0 || frame >= s.spec.n_frames) {
      throw ParseError(source, line_no, "frame out of range");
    }
    const auto k = static_cast<std::size_t>(frame);
    const int id = static_cast<int>(integer(f[2], source, line_no));
    const StateVector st = read_state(f, 4, source, line_no);
    if (is_gt) {
      s.ground_truth[k].push_back({id, st, parse_motion(f[3], source, line_no)});
    } else {
      const double score = number(f[3], source, line_no);
      const int idx = static_cast<int>(s.detections[k].size());
      s.detections[k].push_back({st, score, static_cast<int>(frame), idx});
      s.detection_ids[k].push_back(id);
    }
  }
  if (!have_header) throw ParseError(source, 0, "empty scenario file");
  if (!have_spec) throw ParseError(source, line_no, "missing spec line");
  return s;
}

void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << write_scenario(s);
  if (!out) throw Error("failed writing " + path);
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path);
}

}  // namespace hybridtrack
