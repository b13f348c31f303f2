#include "ogrg/grasp_geometry.hpp"

#include <cmath>

namespace ogrg {

std::array<Point, 4> GraspRectangle::corners() const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double hw = width * 0.5, hh = height * 0.5;
    // counter-clockwise in standard orientation
    const std::array<Point, 4> local{{{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}}};
    std::array<Point, 4> out;
    for (int i = 0; i < 4; ++i)
        out[static_cast<std::size_t>(i)] = {cx + c * local[static_cast<std::size_t>(i)][0] - s * local[static_cast<std::size_t>(i)][1],
                                            cy + s * local[static_cast<std::size_t>(i)][0] + c * local[static_cast<std::size_t>(i)][1]};
    return out;
}

double polygon_area(const std::vector<Point>& poly) {
    double acc = 0.0;
    const std::size_t n = poly.size();
    if (n < 3) return 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = poly[i];
        const Point& q = poly[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    return std::abs(acc) * 0.5;
}

std::vector<Point> convex_clip(const std::vector<Point>& subject, const std::vector<Point>& clip) {
    std::vector<Point> output = subject;
    const std::size_t m = clip.size();
    for (std::size_t e = 0; e < m && !output.empty(); ++e) {
        const Point& a = clip[e];
        const Point& b = clip[(e + 1) % m];
        const double ex = b[0] - a[0], ey = b[1] - a[1];
        auto inside = [&](const Point& p) { return ex * (p[1] - a[1]) - ey * (p[0] - a[0]) <= 0.0; };
        auto intersect = [&](const Point& p, const Point& q) -> Point {
            const double dx = q[0] - p[0], dy = q[1] - p[1];
            const double denom = ex * dy - ey * dx;
            const double t = denom != 0.0 ? (ex * (a[1] - p[1]) - ey * (a[0] - p[0])) / denom : 0.0;
            return {p[0] + t * dx, p[1] + t * dy};
        };
        std::vector<Point> input;
        input.swap(output);
        for (std::size_t i = 0; i < input.size(); ++i) {
            const Point& cur = input[i];
            const Point& prev = input[(i + input.size() - 1) % input.size()];
            const bool cur_in = inside(cur), prev_in = inside(prev);
            if (cur_in) {
                if (!prev_in) output.push_back(intersect(prev, cur));
                output.push_back(cur);
            } else if (prev_in) {
                output.push_back(intersect(prev, cur));
            }
        }
    }
    return output;
}

namespace {
// Clip edges must wind the same way inside() expects (cross <= 0 means the
// point lies to the right of a->b, i.e. clockwise order in image coords).
std::vector<Point> clockwise_corners(const GraspRectangle& r) {
    auto c = r.corners();
    std::vector<Point> pts(c.begin(), c.end());
    double signed_area = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Point& p = pts[i];
        const Point& q = pts[(i + 1) % pts.size()];
        signed_area += p[0] * q[1] - q[0] * p[1];
    }
    if (signed_area > 0.0) std::reverse(pts.begin(), pts.end());
    return pts;
}
}  // namespace

double rect_iou(const GraspRectangle& a, const GraspRectangle& b) {
    if (a.area() <= 0.0 || b.area() <= 0.0)
        throw InputError("rect_iou: degenerate zero-area rectangle");
    const std::vector<Point> pa = clockwise_corners(a);
    const std::vector<Point> pb = clockwise_corners(b);
    const double inter = polygon_area(convex_clip(pa, pb));
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double angle_diff_deg(double theta1_rad, double theta2_rad) {
    if (!std::isfinite(theta1_rad) || !std::isfinite(theta2_rad))
        throw NumericError("angle_diff: non-finite angle");
    double d = std::abs(theta1_rad - theta2_rad) * 180.0 / 3.141592653589793;
    d = std::fmod(d, 180.0);
    return std::min(d, 180.0 - d);
}

}  // namespace ogrg
