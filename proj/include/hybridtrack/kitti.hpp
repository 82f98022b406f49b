#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hybridtrack/state.hpp"
#include "hybridtrack/tracker.hpp"

namespace hybridtrack {

/// One line of a KITTI tracking label or result file. Boxes are kept in the
/// camera frame as written (h w l, bottom-centre x y z, rotation_y); the
/// conversion to the tracker's state happens in to_state / from_state.
struct KittiObject {
  int frame = 0;
  int track_id = -1;
  std::string type;
  double truncated = 0.0;
  int occluded = 0;
  double alpha = -10.0;
  std::array<double, 4> bbox{};  // left top right bottom
  double height = 1.0;
  double width = 1.0;
  double length = 1.0;
  double cam_x = 0.0;
  double cam_y = 0.0;
  double cam_z = 0.0;
  double rotation_y = 0.0;
  std::optional<double> score;

  /// State with z up: x = cam_x, y = -cam_z, z = -cam_y + h/2 (box centre).
  StateVector to_state() const;
  static KittiObject from_state(const StateVector& s);
};

/// Types the tracker consumes.
bool is_tracked_type(std::string_view type);

/// Parses label text (17 or 18 whitespace-separated fields per line; blank
/// lines are skipped). Only Car and Van rows are kept unless `all_types`.
/// Throws ParseError naming `source` and the 1-based line on malformed input.
std::vector<KittiObject> parse_kitti(std::string_view text, const std::string& source = "<input>",
                                     bool all_types = false);
std::vector<KittiObject> read_kitti(const std::string& path, bool all_types = false);

/// One line per object, floats fixed at 6 decimals; the score column is
/// written only when present.
std::string write_kitti(const std::vector<KittiObject>& objects);

/// Tracker output rows: type Car, alpha -10 and an empty 2D box, since the
/// tracker has no camera model.
std::vector<KittiObject> to_kitti(const std::vector<FrameOutput>& frames,
                                  const std::string& type = "Car");

struct LabeledBox {
  int track_id = 0;
  StateVector state;
  double score = 1.0;
};

/// Groups objects per frame for frames [0, n_frames); n_frames < 0 means one
/// past the largest frame present.
std::vector<std::vector<LabeledBox>> group_by_frame(const std::vector<KittiObject>& objects,
                                                    int n_frames = -1);

/// Detections per frame with frame stamps and source ids set.
std::vector<std::vector<Detection>> detections_by_frame(const std::vector<KittiObject>& objects,
                                                        int n_frames = -1);

}  // namespace hybridtrack
