#pragma once

// 2D geometry for the driving world. World frame is standard math
// convention: x east, y north, headings in radians counterclockwise from
// +x. The ego frame is x-forward / y-right (heading-up), so a left turn
// has negative signed curvature.

#include <array>
#include <cmath>
#include <optional>
#include <vector>

namespace wa {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double c) const { return {x * c, y * c}; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double cross(Vec2 o) const { return x * o.y - y * o.x; }
    double norm() const { return std::hypot(x, y); }
};

struct Pose {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
};

inline double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a < -M_PI) a += 2.0 * M_PI;
    return a;
}

// world offset -> (forward, right) relative to a heading. The matrix is
// its own inverse, so the same formula maps ego offsets back to world.
inline Vec2 world_to_frame(Vec2 delta, double heading) {
    const double c = std::cos(heading), s = std::sin(heading);
    return {c * delta.x + s * delta.y, s * delta.x - c * delta.y};
}

inline Vec2 frame_to_world(Vec2 fwd_right, double heading) {
    const double c = std::cos(heading), s = std::sin(heading);
    return {c * fwd_right.x + s * fwd_right.y, s * fwd_right.x - c * fwd_right.y};
}

// Rectangle given by center, heading along its length, and extents.
struct OrientedRect {
    double cx = 0.0, cy = 0.0;
    double heading = 0.0;
    double length = 0.0, width = 0.0;

    std::array<Vec2, 4> corners() const;
    bool contains(Vec2 p) const;
};

bool rects_overlap(const OrientedRect& a, const OrientedRect& b);

using Polygon = std::vector<Vec2>;

// Even-odd (crossing number) containment test; boundary behavior is
// unspecified and callers keep clearances instead of relying on it.
bool point_in_polygon(const Polygon& poly, Vec2 p);
bool point_in_union(const std::vector<Polygon>& polys, Vec2 p);

// Smallest t >= 0 with origin + t*dir on segment [a, b], if any.
std::optional<double> ray_segment_hit(Vec2 origin, Vec2 dir, Vec2 a, Vec2 b);

// Distance along the ray to the first inside->outside transition of the
// polygon union, capped at t_max. Returns t_max when the ray never leaves.
double ray_union_exit(const std::vector<Polygon>& polys, Vec2 origin, Vec2 dir, double t_max);

// Distance along the ray to the rectangle (0 if the origin is inside).
std::optional<double> ray_rect_hit(const OrientedRect& rect, Vec2 origin, Vec2 dir, double t_max);

// Polyline with precomputed cumulative arc lengths.
class Polyline {
  public:
    Polyline() = default;
    explicit Polyline(std::vector<Vec2> pts);

    const std::vector<Vec2>& points() const { return pts_; }
    double length() const { return cum_.empty() ? 0.0 : cum_.back(); }

    Vec2 point_at(double arc) const;     // clamped to [0, length]
    double heading_at(double arc) const;  // tangent heading of the segment
    // Arc length of the closest point on the polyline.
    double project(Vec2 p) const;
    // Signed lateral offset at the projection, positive to the right of
    // the local tangent.
    double lateral_at(Vec2 p) const;
    // Signed curvature over a centered window, heading-up convention
    // (left turn negative).
    double curvature_at(double arc, double window = 4.0) const;

  private:
    std::vector<Vec2> pts_;
    std::vector<double> cum_;
};

}  // namespace wa
