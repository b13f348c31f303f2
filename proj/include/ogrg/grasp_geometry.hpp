#pragma once

#include <array>
#include <vector>

#include "ogrg/tensor.hpp"

namespace ogrg {

// Planar 5-DoF parallel-jaw grasp. x is the column, y the row, origin at the
// top-left pixel; theta in radians in (-pi/2, pi/2]; l is the jaw opening in
// pixels.
struct GraspPose {
    double x = 0, y = 0;
    double z = 0;      // meters
    double theta = 0;  // radians
    double l = 0;      // pixels
    double score = 0;  // extraction confidence, not part of the pose
};

using Point = std::array<double, 2>;

// Oriented rectangle: width spans the jaw-closing axis (angle theta), height
// the jaw-thickness axis.
struct GraspRectangle {
    double cx = 0, cy = 0;
    double theta = 0;
    double width = 0;
    double height = 0;

    std::array<Point, 4> corners() const;
    double area() const { return width * height; }
};

// Rectangle rendering of a pose: width = jaw opening, height = half of it
// (the jaw contact length used throughout).
inline GraspRectangle rect_from_pose(const GraspPose& p) {
    return GraspRectangle{p.x, p.y, p.theta, p.l, p.l * 0.5};
}

double polygon_area(const std::vector<Point>& poly);

// Convex clip of subject against the clip polygon (Sutherland-Hodgman, both CCW).
std::vector<Point> convex_clip(const std::vector<Point>& subject, const std::vector<Point>& clip);

// Exact rotated-rectangle IoU via polygon clipping. Degenerate zero-area
// rectangles are rejected.
double rect_iou(const GraspRectangle& a, const GraspRectangle& b);

// Angle difference in degrees folded into [0, 90] (pi-periodic, jaws are
// symmetric).
double angle_diff_deg(double theta1_rad, double theta2_rad);

}  // namespace ogrg
