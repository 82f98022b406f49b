#include "hybridtrack/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <ostream>
#include <tuple>

#include "hybridtrack/association.hpp"
#include "hybridtrack/errors.hpp"
#include "hybridtrack/geometry.hpp"

namespace hybridtrack {

void TrackletSet::append(TrackletSet other) {
  for (auto& t : other.tracklets) tracklets.push_back(std::move(t));
  for (auto& s : other.sources) sources.push_back(std::move(s));
}

TrackletSet cut_tracklets(const LabeledSequence& seq, int max_context) {
  if (max_context < 0) throw InvalidValueError("max_context must be non-negative");
  // Frames per identity in ascending order.
  std::map<int, std::vector<int>> frames_of;
  for (const auto& [key, state] : seq.truth) frames_of[key.second].push_back(key.first);

  TrackletSet out;
  for (auto& [id, frames] : frames_of) {
    std::sort(frames.begin(), frames.end());
    std::size_t i = 0;
    while (i < frames.size()) {
      // Extend a run of consecutive frames.
      std::size_t j = i + 1;
      while (j < frames.size() && frames[j] == frames[j - 1] + 1) ++j;
      for (std::size_t s = i; s + kTrackletLength <= j; s += kTrackletLength) {
        Tracklet t;
        bool any_measurement = false;
        const std::size_t c0 = s - std::min(s - i, static_cast<std::size_t>(max_context));
        for (std::size_t k = c0; k < s + kTrackletLength; ++k) {
          const auto key = std::make_pair(frames[k], id);
          const StateVector& truth = seq.truth.at(key);
          const auto m = seq.measurements.find(key);
          any_measurement = any_measurement || m != seq.measurements.end();
          const StateVector& meas = m != seq.measurements.end() ? m->second : truth;
          (k < s ? t.context_states : t.states).push_back(truth);
          (k < s ? t.context_measurements : t.measurements).push_back(meas);
        }
        if (!any_measurement) {
          t.measurements.clear();
          t.context_measurements.clear();
        }
        out.tracklets.push_back(std::move(t));
        out.sources.push_back({seq.name, id, frames[s]});
      }
      i = j;
    }
  }
  return out;
}

LabeledSequence labeled_sequence(const Scenario& s, const std::string& name,
                                 bool with_measurements) {
  LabeledSequence seq;
  seq.name = name;
  for (std::size_t k = 0; k < s.ground_truth.size(); ++k) {
    const int frame = static_cast<int>(k);
    for (const GroundTruthBox& g : s.ground_truth[k]) seq.truth[{frame, g.track_id}] = g.state;
    if (!with_measurements) continue;
    for (std::size_t i = 0; i < s.detections[k].size(); ++i) {
      const int id = s.detection_ids[k][i];
      if (id >= 0) seq.measurements[{frame, id}] = s.detections[k][i].state;
    }
  }
  return seq;
}

LabeledSequence labeled_sequence(const std::vector<KittiObject>& labels,
                                 const std::vector<KittiObject>* detections,
                                 const std::string& name, double min_iou) {
  LabeledSequence seq;
  seq.name = name;
  for (const KittiObject& o : labels) {
    if (!seq.truth.emplace(std::make_pair(o.frame, o.track_id), o.to_state()).second) {
      throw ContractViolation(name + ": duplicate label for id " + std::to_string(o.track_id) +
                              " in frame " + std::to_string(o.frame));
    }
  }
  if (detections == nullptr) return seq;

  std::map<int, std::vector<std::pair<int, StateVector>>> gt_frames;
  for (const auto& [key, st] : seq.truth) gt_frames[key.first].emplace_back(key.second, st);
  std::map<int, std::vector<StateVector>> det_frames;
  for (const KittiObject& o : *detections) det_frames[o.frame].push_back(o.to_state());

  for (const auto& [frame, gts] : gt_frames) {
    const auto it = det_frames.find(frame);
    if (it == det_frames.end()) continue;
    const auto& dets = it->second;
    CostMatrix c;
    c.values.resize(static_cast<Eigen::Index>(gts.size()), static_cast<Eigen::Index>(dets.size()));
    for (std::size_t r = 0; r < gts.size(); ++r) {
      const auto a = geometry::RotatedBox3D::from_state(gts[r].second);
      for (std::size_t q = 0; q < dets.size(); ++q) {
        c.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)) =
            1.0 - geometry::iou_3d(a, geometry::RotatedBox3D::from_state(dets[q]));
      }
    }
    for (const auto& [r, q] : hungarian_match(c).pairs) {
      if (1.0 - c(r, q) < min_iou) continue;
      seq.measurements[{frame, gts[static_cast<std::size_t>(r)].first}] =
          dets[static_cast<std::size_t>(q)];
    }
  }
  return seq;
}

void write_manifest(const std::vector<TrackletSource>& sources, std::ostream& out) {
  for (const TrackletSource& s : sources) {
    out << s.sequence << ' ' << s.track_id << ' ' << s.start_frame << '\n';
  }
}

std::vector<TrackletSource> parse_manifest(std::string_view text, const std::string& source) {
  std::vector<TrackletSource> out;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    std::vector<std::string_view> f;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      const std::size_t s = i;
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i > s) f.push_back(line.substr(s, i - s));
    }
    if (f.empty() || f[0].starts_with('#')) continue;
    if (f.size() != 3) {
      throw ParseError(source, line_no, "expected '<sequence> <track_id> <start_frame>'");
    }
    TrackletSource t;
    t.sequence = std::string(f[0]);
    for (auto [field, dest] : {std::pair{f[1], &t.track_id}, std::pair{f[2], &t.start_frame}}) {
      const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), *dest);
      if (ec != std::errc() || p != field.data() + field.size()) {
        throw ParseError(source, line_no, "bad integer '" + std::string(field) + "'");
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Tracklet> select_tracklets(const TrackletSet& all,
                                       const std::vector<TrackletSource>& wanted) {
  std::map<std::tuple<std::string, int, int>, std::size_t> index;
  for (std::size_t i = 0; i < all.sources.size(); ++i) {
    const auto& s = all.sources[i];
    index[{s.sequence, s.track_id, s.start_frame}] = i;
  }
  std::vector<Tracklet> out;
  out.reserve(wanted.size());
  for (const TrackletSource& w : wanted) {
    const auto it = index.find({w.sequence, w.track_id, w.start_frame});
    if (it == index.end()) {
      throw ContractViolation("manifest entry " + w.sequence + " " + std::to_string(w.track_id) +
                              " " + std::to_string(w.start_frame) + " matches no tracklet");
    }
    out.push_back(all.tracklets[it->second]);
  }
  return out;
}

}  // namespace hybridtrack
