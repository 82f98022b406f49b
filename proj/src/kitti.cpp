#include "hybridtrack/kitti.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hybridtrack/errors.hpp"

namespace hybridtrack {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, const std::string& source, int line, const char* what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError(source, line,
                     std::string("bad ") + what + " '" + std::string(field) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) {
      throw ParseError(source, line, std::string("non-finite ") + what);
    }
  }
  return value;
}

// Fixed 6 decimals without a negative zero.
void put(std::string& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string_view s(buf);
  if (s.starts_with('-') && s.find_first_not_of("-0.") == std::string_view::npos) s.remove_prefix(1);
  out += s;
}

}  // namespace

bool is_tracked_type(std::string_view type) { return type == "Car" || type == "Van"; }

StateVector KittiObject::to_state() const {
  StateVector s;
  s.x = cam_x;
  s.y = -cam_z;
  s.z = -cam_y + 0.5 * height;
  s.w = width;
  s.l = length;
  s.h = height;
  s.theta = wrap_angle(rotation_y);
  return s;
}

KittiObject KittiObject::from_state(const StateVector& s) {
  KittiObject o;
  o.cam_x = s.x;
  o.cam_z = -s.y;
  o.cam_y = -(s.z - 0.5 * s.h);
  o.width = s.w;
  o.length = s.l;
  o.height = s.h;
  o.rotation_y = s.theta;
  return o;
}

std::vector<KittiObject> parse_kitti(std::string_view text, const std::string& source,
                                     bool all_types) {
  std::vector<KittiObject> out;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto f = split_fields(line);
    if (f.empty()) continue;
    if (f.size() != 17 && f.size() != 18) {
      throw ParseError(source, line_no,
                       "expected 17 or 18 fields, found " + std::to_string(f.size()));
    }
    KittiObject o;
    o.frame = parse_number<int>(f[0], source, line_no, "frame");
    o.track_id = parse_number<int>(f[1], source, line_no, "track id");
    o.type = std::string(f[2]);
    o.truncated = parse_number<double>(f[3], source, line_no, "truncation");
    o.occluded = parse_number<int>(f[4], source, line_no, "occlusion");
    o.alpha = parse_number<double>(f[5], source, line_no, "alpha");
    for (int i = 0; i < 4; ++i) o.bbox[i] = parse_number<double>(f[6 + i], source, line_no, "bbox");
    o.height = parse_number<double>(f[10], source, line_no, "height");
    o.width = parse_number<double>(f[11], source, line_no, "width");
    o.length = parse_number<double>(f[12], source, line_no, "length");
    o.cam_x = parse_number<double>(f[13], source, line_no, "x");
    o.cam_y = parse_number<double>(f[14], source, line_no, "y");
    o.cam_z = parse_number<double>(f[15], source, line_no, "z");
    o.rotation_y = parse_number<double>(f[16], source, line_no, "rotation_y");
    if (f.size() == 18) o.score = parse_number<double>(f[17], source, line_no, "score");
    if (o.frame < 0) throw ParseError(source, line_no, "negative frame");
    if (!all_types && !is_tracked_type(o.type)) continue;
    if (is_tracked_type(o.type) && (o.height <= 0 || o.width <= 0 || o.length <= 0)) {
      throw ParseError(source, line_no, "box extents must be positive");
    }
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<KittiObject> read_kitti(const std::string& path, bool all_types) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kitti(ss.str(), path, all_types);
}

std::string write_kitti(const std::vector<KittiObject>& objects) {
  std::string out;
  out.reserve(objects.size() * 128);
  for (const KittiObject& o : objects) {
    out += std::to_string(o.frame);
    out += ' ';
    out += std::to_string(o.track_id);
    out += ' ';
    out += o.type;
    out += ' ';
    put(out, o.truncated);
    out += ' ';
    out += std::to_string(o.occluded);
    for (double v : {o.alpha, o.bbox[0], o.bbox[1], o.bbox[2], o.bbox[3], o.height, o.width,
                     o.length, o.cam_x, o.cam_y, o.cam_z, o.rotation_y}) {
      out += ' ';
      put(out, v);
    }
    if (o.score) {
      out += ' ';
      put(out, *o.score);
    }
    out += '\n';
  }
  return out;
}

std::vector<KittiObject> to_kitti(const std::vector<FrameOutput>& frames, const std::string& type) {
  std::vector<KittiObject> out;
  for (const FrameOutput& f : frames) {
    for (const TrackOutput& t : f.tracks) {
      KittiObject o = KittiObject::from_state(t.state);
      o.frame = f.frame;
      o.track_id = t.track_id;
      o.type = type;
      o.score = t.score;
      out.push_back(std::move(o));
    }
  }
  return out;
}

std::vector<std::vector<LabeledBox>> group_by_frame(const std::vector<KittiObject>& objects,
                                                    int n_frames) {
  int n = n_frames;
  if (n < 0) {
    n = 0;
    for (const KittiObject& o : objects) n = std::max(n, o.frame + 1);
  }
  std::vector<std::vector<LabeledBox>> frames(static_cast<std::size_t>(n));
  for (const KittiObject& o : objects) {
    if (o.frame >= n) continue;
    frames[static_cast<std::size_t>(o.frame)].push_back(
        {o.track_id, o.to_state(), o.score.value_or(1.0)});
  }
  return frames;
}

std::vector<std::vector<Detection>> detections_by_frame(const std::vector<KittiObject>& objects,
                                                        int n_frames) {
  const auto grouped = group_by_frame(objects, n_frames);
  std::vector<std::vector<Detection>> out(grouped.size());
  for (std::size_t k = 0; k < grouped.size(); ++k) {
    int idx = 0;
    for (const LabeledBox& b : grouped[k]) {
      out[k].push_back({b.state, b.score, static_cast<int>(k), idx++});
    }
  }
  return out;
}

}  // namespace hybridtrack
