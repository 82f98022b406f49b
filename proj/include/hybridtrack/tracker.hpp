#pragma once

#include <memory>
#include <span>
#include <vector>

#include "hybridtrack/filters.hpp"
#include "hybridtrack/state.hpp"

namespace hybridtrack {

struct TrackOutput {
  int track_id = 0;
  StateVector state;
  double score = 0.0;
  bool coasted = false;
};

struct FrameOutput {
  int frame = 0;
  std::vector<TrackOutput> tracks;  // ascending track_id
};

/// Counters of the most recent step.
struct StepStats {
  int live_before = 0;
  int detections = 0;
  int pairs = 0;
  int unmatched_tracks = 0;
  int unmatched_detections = 0;
  int births = 0;
  int deaths = 0;
};

/// Frame-by-frame tracking state: predict, associate, update, coast, birth,
/// death, report. One instance per sequence; steps are strictly sequential.
class Tracker {
 public:
  Tracker(TrackerConfig config, std::shared_ptr<const MotionFilter> filter);

  /// Processes `frame`. Frames must strictly increase and every detection
  /// must carry `frame`; violations throw ContractViolation.
  FrameOutput step(int frame, std::span<const Detection> detections);

  const std::vector<Trajectory>& live() const { return live_; }
  const std::vector<Trajectory>& dead() const { return dead_; }
  const TrackerConfig& config() const { return config_; }
  const StepStats& last_stats() const { return stats_; }
  int frame() const { return frame_; }

 private:
  TrackerConfig config_;
  std::shared_ptr<const MotionFilter> filter_;
  std::vector<Trajectory> live_;
  std::vector<Trajectory> dead_;
  int next_track_id_ = 0;
  int frame_ = -1;
  bool started_ = false;
  StepStats stats_;
};

/// Folds Tracker::step over `frames`; frame k of the input is stamped
/// `first_frame + k`.
std::vector<FrameOutput> run_sequence(const TrackerConfig& config,
                                      std::shared_ptr<const MotionFilter> filter,
                                      std::span<const std::vector<Detection>> frames,
                                      int first_frame = 0);

}  // namespace hybridtrack
