#pragma once

#include <array>

#include "hybridtrack/state.hpp"

namespace hybridtrack::geometry {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Yaw-rotated box: BEV rectangle (length along the heading, width across it)
/// plus the vertical interval [z - h/2, z + h/2].
struct RotatedBox3D {
  double cx = 0.0;
  double cy = 0.0;
  double cz = 0.0;
  double length = 1.0;
  double width = 1.0;
  double height = 1.0;
  double yaw = 0.0;

  static RotatedBox3D from_state(const StateVector& s);

  double bottom() const { return cz - 0.5 * height; }
  double top() const { return cz + 0.5 * height; }
  double bev_area() const { return length * width; }
  double volume() const { return length * width * height; }

  /// BEV corners in counterclockwise order.
  std::array<Point2, 4> corners() const;
};

/// Throws InvalidValueError unless all extents are positive and finite.
void check_box(const RotatedBox3D& b);

/// Area of the convex BEV intersection (Sutherland-Hodgman clipping).
double bev_intersection_area(const RotatedBox3D& a, const RotatedBox3D& b);

double iou_3d(const RotatedBox3D& a, const RotatedBox3D& b);

/// BEV-only IoU.
double iou_bev(const RotatedBox3D& a, const RotatedBox3D& b);

/// Yaw difference reduced modulo pi into [-pi/2, pi/2): a box and its
/// half-turn are the same solid.
double axis_residual(double yaw_a, double yaw_b);

/// 3D complete IoU: IoU3D - rho^2/d^2 - alpha*v where rho is the centre
/// distance, d the diagonal of the axis-aligned box enclosing both boxes and
/// v = 4/pi^2 * axis_residual^2. alpha = v / ((1 - IoU) + v), zero when
/// IoU < 0.5. Result lies in (-1, 1].
double ciou_3d(const RotatedBox3D& a, const RotatedBox3D& b);

/// Planar complete IoU on the BEV rectangles with the usual aspect-ratio
/// term 4/pi^2 * (atan(l_a/w_a) - atan(l_b/w_b))^2.
double ciou_2d(const RotatedBox3D& a, const RotatedBox3D& b);

/// Association cost between two states.
double cost(const StateVector& a, const StateVector& b, CostFunction which);

}  // namespace hybridtrack::geometry
