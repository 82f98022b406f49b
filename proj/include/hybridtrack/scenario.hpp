#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hybridtrack/state.hpp"

namespace hybridtrack {

/// Relative weights of the motion primitives agents are drawn from.
struct MotionMix {
  double constant_velocity = 0.25;
  double constant_acceleration = 0.25;
  double constant_turn = 0.25;
  double lane_change = 0.25;
};

enum class MotionPrimitive : std::uint8_t {
  kConstantVelocity,
  kConstantAcceleration,
  kConstantTurn,
  kLaneChange,
};

std::string_view to_string(MotionPrimitive m);

/// "cv:0.4,ca:0.2,ctrv:0.2,lane:0.2"; omitted primitives get weight 0.
MotionMix parse_motion_mix(std::string_view text);
std::string format_motion_mix(const MotionMix& mix);

struct ScenarioSpec {
  MotionMix mix;
  int n_agents = 20;
  int n_frames = 200;
  double dt = 0.1;
  /// Agents start uniformly inside [-extent, extent]^2 (meters).
  double extent = 40.0;
  double sigma_pos = 0.15;
  double sigma_dim = 0.05;
  double sigma_yaw = 0.03;
  double miss_rate = 0.1;
  /// Expected false positives per agent and frame.
  double fp_rate = 0.05;
  std::uint64_t seed = 0;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

struct GroundTruthBox {
  int track_id = 0;
  StateVector state;
  MotionPrimitive motion = MotionPrimitive::kConstantVelocity;
};

/// Frames of ground truth and detections. detection_ids[k][i] is the ground
/// truth id behind detections[k][i], or -1 for a false positive.
struct Scenario {
  ScenarioSpec spec;
  std::vector<std::vector<GroundTruthBox>> ground_truth;
  std::vector<std::vector<Detection>> detections;
  std::vector<std::vector<int>> detection_ids;
};

/// Deterministic for a given spec (including its seed).
Scenario generate_scenario(const ScenarioSpec& spec);

/// Text form with round-trip precision. Throws ParseError with line numbers.
std::string write_scenario(const Scenario& s);
Scenario parse_scenario(std::string_view text, const std::string& source = "<input>");
void save_scenario(const Scenario& s, const std::string& path);
Scenario load_scenario(const std::string& path);

}  // namespace hybridtrack
