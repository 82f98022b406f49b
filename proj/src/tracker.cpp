#include "hybridtrack/tracker.hpp"

#include <algorithm>

#include "hybridtrack/association.hpp"
#include "hybridtrack/errors.hpp"
#include "hybridtrack/motion.hpp"

namespace hybridtrack {

Tracker::Tracker(TrackerConfig config, std::shared_ptr<const MotionFilter> filter)
    : config_(config), filter_(std::move(filter)) {
  config_.validate();
  if (!filter_) throw ContractViolation("Tracker needs a motion filter");
}

FrameOutput Tracker::step(int frame, std::span<const Detection> detections) {
  if (started_ && frame <= frame_) {
    throw ContractViolation("frame " + std::to_string(frame) + " does not follow frame " +
                            std::to_string(frame_));
  }
  for (const Detection& d : detections) {
    if (d.frame != frame) {
      throw ContractViolation("detection stamped with frame " + std::to_string(d.frame) +
                              " passed to frame " + std::to_string(frame));
    }
    validate(d.state);
  }
  started_ = true;
  frame_ = frame;
  stats_ = {};

  std::vector<Detection> dets;
  dets.reserve(detections.size());
  for (const Detection& d : detections) {
    if (d.score >= config_.min_score) dets.push_back(d);
  }
  stats_.live_before = static_cast<int>(live_.size());
  stats_.detections = static_cast<int>(dets.size());

  // 1. predict
  std::vector<Trajectory*> tracks;
  tracks.reserve(live_.size());
  for (Trajectory& t : live_) {
    t.updated_this_frame = false;
    t.age = frame - t.birth_frame;
    tracks.push_back(&t);
  }
  const std::vector<StateVector> priors = filter_->predict(tracks, frame, config_);

  // 2. associate
  const CostMatrix costs = build_cost_matrix(priors, dets, config_.cost_function);
  const MatchResult match = greedy_match(costs, config_.gate());
  stats_.pairs = static_cast<int>(match.pairs.size());
  stats_.unmatched_tracks = static_cast<int>(match.unmatched_rows.size());
  stats_.unmatched_detections = static_cast<int>(match.unmatched_cols.size());

  // 3. update matched pairs
  std::vector<Trajectory*> matched;
  std::vector<const Detection*> matched_dets;
  for (const auto& [row, col] : match.pairs) {
    matched.push_back(tracks[static_cast<std::size_t>(row)]);
    matched_dets.push_back(&dets[static_cast<std::size_t>(col)]);
  }
  filter_->update(matched, matched_dets);
  for (Trajectory* t : matched) {
    if (t->status == TrackStatus::kTentative) t->transition(TrackStatus::kActive);
  }

  // 4. coast unmatched trajectories on their prior
  for (int row : match.unmatched_rows) {
    Trajectory& t = *tracks[static_cast<std::size_t>(row)];
    t.miss_count += 1;
    t.posteriors.push_back(priors[static_cast<std::size_t>(row)]);
    t.last_correction.setZero();
  }

  // 5. deaths, evaluated after this frame's association
  std::vector<Trajectory> survivors;
  survivors.reserve(live_.size() + match.unmatched_cols.size());
  for (Trajectory& t : live_) {
    const bool stale = t.miss_count >= config_.mu_max;
    const bool artifact =
        t.status == TrackStatus::kTentative && t.miss_count >= config_.sigma_birth;
    if (stale || artifact) {
      t.transition(TrackStatus::kDead);
      dead_.push_back(std::move(t));
      stats_.deaths += 1;
    } else {
      survivors.push_back(std::move(t));
    }
  }
  live_ = std::move(survivors);

  // 6. births
  for (int col : match.unmatched_cols) {
    const Detection& d = dets[static_cast<std::size_t>(col)];
    Trajectory t;
    t.track_id = next_track_id_++;
    t.status = TrackStatus::kTentative;
    t.birth_frame = frame;
    t.posteriors.push_back(d.state);
    Vec7 pad = d.state.to_vector() - Vec7::Constant(config_.epsilon_init);
    pad[6] = wrap_angle(pad[6]);
    for (int i = 3; i < 6; ++i) pad[i] = std::max(pad[i], kMinExtent);
    t.virtual_history = StateVector::from_vector(pad);
    t.last_detection = d;
    filter_->initialize(t);
    live_.push_back(std::move(t));
    stats_.births += 1;
  }

  // 7. report
  FrameOutput out;
  out.frame = frame;
  for (const Trajectory& t : live_) {
    if (t.status != TrackStatus::kActive) continue;
    if (t.updated_this_frame) {
      out.tracks.push_back({t.track_id, t.current(), t.last_detection->score, false});
    } else if (config_.report_coasted) {
      out.tracks.push_back({t.track_id, t.current(),
                            t.last_detection ? t.last_detection->score : 0.0, true});
    }
  }
  std::sort(out.tracks.begin(), out.tracks.end(),
            [](const TrackOutput& a, const TrackOutput& b) { return a.track_id < b.track_id; });
  return out;
}

std::vector<FrameOutput> run_sequence(const TrackerConfig& config,
                                      std::shared_ptr<const MotionFilter> filter,
                                      std::span<const std::vector<Detection>> frames,
                                      int first_frame) {
  Tracker tracker(config, std::move(filter));
  std::vector<FrameOutput> out;
  out.reserve(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    out.push_back(tracker.step(first_frame + static_cast<int>(k), frames[k]));
  }
  return out;
}

}  // namespace hybridtrack
