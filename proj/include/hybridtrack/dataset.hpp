#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hybridtrack/kitti.hpp"
#include "hybridtrack/scenario.hpp"
#include "hybridtrack/training.hpp"

namespace hybridtrack {

/// Where a tracklet came from: one manifest line.
struct TrackletSource {
  std::string sequence;
  int track_id = 0;
  int start_frame = 0;

  friend bool operator==(const TrackletSource&, const TrackletSource&) = default;
};

struct TrackletSet {
  std::vector<Tracklet> tracklets;
  std::vector<TrackletSource> sources;  // parallel to tracklets

  void append(TrackletSet other);
};

/// Ground truth states of one sequence keyed by (frame, id), with optional
/// measurements for the same keys.
struct LabeledSequence {
  std::string name;
  std::map<std::pair<int, int>, StateVector> truth;
  std::map<std::pair<int, int>, StateVector> measurements;
};

/// Cuts every identity into non-overlapping windows of consecutive frames;
/// shorter remainders are dropped. Frames without a measurement fall back to
/// the ground truth. Windows that do not open a run carry up to
/// `max_context` preceding frames of the same run as burn-in context.
inline constexpr int kDefaultMaxContext = 40;
TrackletSet cut_tracklets(const LabeledSequence& seq, int max_context = kDefaultMaxContext);

/// Scenario truth with its own paired detections as measurements (or the
/// truth alone when `with_measurements` is false).
LabeledSequence labeled_sequence(const Scenario& s, const std::string& name,
                                 bool with_measurements = true);

/// KITTI labels, optionally paired with detector output frame by frame by a
/// minimum-cost assignment on 1 - IoU (pairs need IoU >= min_iou).
LabeledSequence labeled_sequence(const std::vector<KittiObject>& labels,
                                 const std::vector<KittiObject>* detections,
                                 const std::string& name, double min_iou = 0.3);

/// One "<sequence> <track_id> <start_frame>" line per tracklet.
void write_manifest(const std::vector<TrackletSource>& sources, std::ostream& out);
std::vector<TrackletSource> parse_manifest(std::string_view text,
                                           const std::string& source = "<manifest>");

/// Resolves manifest entries against already cut tracklets. Throws
/// ContractViolation when an entry has no matching tracklet.
std::vector<Tracklet> select_tracklets(const TrackletSet& all,
                                       const std::vector<TrackletSource>& wanted);

}  // namespace hybridtrack
