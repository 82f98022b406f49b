#include "hybridtrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hybridtrack/errors.hpp"

namespace hybridtrack::geometry {

namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Convex polygons here have at most 8 vertices (a quad clipped by 4 edges).
struct Polygon {
  std::array<Point2, 16> pts{};
  int n = 0;
  void push(const Point2& p) { pts[n++] = p; }
};

double polygon_area(const Polygon& poly) {
  if (poly.n < 3) return 0.0;
  double twice = 0.0;
  for (int i = 0; i < poly.n; ++i) {
    const Point2& p = poly.pts[i];
    const Point2& q = poly.pts[(i + 1) % poly.n];
    twice += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(twice);
}

// Keeps the part of `subject` on the left of the directed edge e0 -> e1.
Polygon clip_edge(const Polygon& subject, const Point2& e0, const Point2& e1) {
  Polygon out;
  if (subject.n == 0) return out;
  for (int i = 0; i < subject.n; ++i) {
    const Point2& cur = subject.pts[i];
    const Point2& prev = subject.pts[(i + subject.n - 1) % subject.n];
    const double dc = cross(e0, e1, cur);
    const double dp = cross(e0, e1, prev);
    const bool cur_in = dc >= 0.0;
    const bool prev_in = dp >= 0.0;
    if (cur_in != prev_in) {
      const double t = dp / (dp - dc);
      out.push({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
    }
    if (cur_in) out.push(cur);
  }
  return out;
}

struct Extent3 {
  double lo[3] = {0, 0, 0};
  double hi[3] = {0, 0, 0};
};

Extent3 enclosing(const RotatedBox3D& a, const RotatedBox3D& b) {
  Extent3 e;
  e.lo[0] = e.lo[1] = std::numeric_limits<double>::infinity();
  e.hi[0] = e.hi[1] = -std::numeric_limits<double>::infinity();
  for (const RotatedBox3D* box : {&a, &b}) {
    for (const Point2& p : box->corners()) {
      e.lo[0] = std::min(e.lo[0], p.x);
      e.hi[0] = std::max(e.hi[0], p.x);
      e.lo[1] = std::min(e.lo[1], p.y);
      e.hi[1] = std::max(e.hi[1], p.y);
    }
  }
  e.lo[2] = std::min(a.bottom(), b.bottom());
  e.hi[2] = std::max(a.top(), b.top());
  return e;
}

double consistency_weight(double iou, double v) {
  if (iou < 0.5 || v == 0.0) return 0.0;
  return v / ((1.0 - iou) + v);
}

}  // namespace

RotatedBox3D RotatedBox3D::from_state(const StateVector& s) {
  return {s.x, s.y, s.z, s.l, s.w, s.h, s.theta};
}

std::array<Point2, 4> RotatedBox3D::corners() const {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  const double hl = 0.5 * length;
  const double hw = 0.5 * width;
  // Local (+l,+w), (-l,+w), (-l,-w), (+l,-w) is counterclockwise.
  const std::array<std::array<double, 2>, 4> local = {
      {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Point2, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {cx + c * local[i][0] - s * local[i][1], cy + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

void check_box(const RotatedBox3D& b) {
  const bool finite = std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.cz) &&
                      std::isfinite(b.length) && std::isfinite(b.width) &&
                      std::isfinite(b.height) && std::isfinite(b.yaw);
  if (!finite) throw InvalidValueError("box has non-finite fields");
  if (!(b.length > 0.0 && b.width > 0.0 && b.height > 0.0)) {
    throw InvalidValueError("degenerate box: extents must be positive");
  }
}

double bev_intersection_area(const RotatedBox3D& a, const RotatedBox3D& b) {
  check_box(a);
  check_box(b);
  // Cheap reject on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.length, a.width);
  const double rb = 0.5 * std::hypot(b.length, b.width);
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb) return 0.0;

  Polygon poly;
  for (const Point2& p : a.corners()) poly.push(p);
  const auto clip = b.corners();
  for (int i = 0; i < 4 && poly.n > 0; ++i) {
    poly = clip_edge(poly, clip[i], clip[(i + 1) % 4]);
  }
  return polygon_area(poly);
}

double iou_bev(const RotatedBox3D& a, const RotatedBox3D& b) {
  const double inter = bev_intersection_area(a, b);
  const double uni = a.bev_area() + b.bev_area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const RotatedBox3D& a, const RotatedBox3D& b) {
  check_box(a);
  check_box(b);
  const double dz = std::min(a.top(), b.top()) - std::max(a.bottom(), b.bottom());
  if (dz <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double axis_residual(double yaw_a, double yaw_b) {
  const double r = angle_residual(yaw_a, yaw_b);
  // [-pi, pi) -> [-pi/2, pi/2)
  if (r >= 0.5 * kPi) return r - kPi;
  if (r < -0.5 * kPi) return r + kPi;
  return r;
}

double ciou_3d(const RotatedBox3D& a, const RotatedBox3D& b) {
  const double iou = iou_3d(a, b);
  const Extent3 e = enclosing(a, b);
  double diag2 = 0.0;
  for (int i = 0; i < 3; ++i) diag2 += (e.hi[i] - e.lo[i]) * (e.hi[i] - e.lo[i]);
  const double rho2 = (a.cx - b.cx) * (a.cx - b.cx) + (a.cy - b.cy) * (a.cy - b.cy) +
                      (a.cz - b.cz) * (a.cz - b.cz);
  const double dr = axis_residual(a.yaw, b.yaw);
  const double v = 4.0 / (kPi * kPi) * dr * dr;
  const double result = iou - rho2 / diag2 - consistency_weight(iou, v) * v;
  if (!(result > -1.0 && result <= 1.0 + 1e-12)) {
    throw InvalidValueError("ciou_3d out of (-1, 1]: " + std::to_string(result));
  }
  return result;
}

double ciou_2d(const RotatedBox3D& a, const RotatedBox3D& b) {
  const double iou = iou_bev(a, b);
  const Extent3 e = enclosing(a, b);
  const double diag2 =
      (e.hi[0] - e.lo[0]) * (e.hi[0] - e.lo[0]) + (e.hi[1] - e.lo[1]) * (e.hi[1] - e.lo[1]);
  const double rho2 = (a.cx - b.cx) * (a.cx - b.cx) + (a.cy - b.cy) * (a.cy - b.cy);
  const double da = std::atan(a.length / a.width) - std::atan(b.length / b.width);
  const double v = 4.0 / (kPi * kPi) * da * da;
  const double result = iou - rho2 / diag2 - consistency_weight(iou, v) * v;
  if (!(result > -1.0 && result <= 1.0 + 1e-12)) {
    throw InvalidValueError("ciou_2d out of (-1, 1]: " + std::to_string(result));
  }
  return result;
}

double cost(const StateVector& a, const StateVector& b, CostFunction which) {
  switch (which) {
    case CostFunction::kCIoU3D:
      return 1.0 - ciou_3d(RotatedBox3D::from_state(a), RotatedBox3D::from_state(b));
    case CostFunction::kCIoU2D:
      return 1.0 - ciou_2d(RotatedBox3D::from_state(a), RotatedBox3D::from_state(b));
    case CostFunction::kL2:
    case CostFunction::kL2PlusSize: {
      if (!(a.w > 0 && a.l > 0 && a.h > 0 && b.w > 0 && b.l > 0 && b.h > 0)) {
        throw InvalidValueError("degenerate box: extents must be positive");
      }
      const double d = std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                                 (a.z - b.z) * (a.z - b.z));
      if (which == CostFunction::kL2) return d;
      return d + std::sqrt((a.w - b.w) * (a.w - b.w) + (a.l - b.l) * (a.l - b.l) +
                           (a.h - b.h) * (a.h - b.h));
    }
  }
  throw InvalidValueError("unknown cost function");
}

}  // namespace hybridtrack::geometry
