#include "wa/geometry.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace wa {

std::array<Vec2, 4> OrientedRect::corners() const {
    const double c = std::cos(heading), s = std::sin(heading);
    const Vec2 fwd{c * length * 0.5, s * length * 0.5};
    const Vec2 side{-s * width * 0.5, c * width * 0.5};
    const Vec2 ctr{cx, cy};
    return {ctr + fwd + side, ctr + fwd - side, ctr - fwd - side, ctr - fwd + side};
}

bool OrientedRect::contains(Vec2 p) const {
    const Vec2 local = world_to_frame(p - Vec2{cx, cy}, heading);
    return std::fabs(local.x) <= length * 0.5 && std::fabs(local.y) <= width * 0.5;
}

namespace {

struct Interval {
    double lo, hi;
};

Interval project_onto(const std::array<Vec2, 4>& corners, Vec2 axis) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const Vec2& c : corners) {
        const double v = c.dot(axis);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {lo, hi};
}

}  // namespace

bool rects_overlap(const OrientedRect& a, const OrientedRect& b) {
    const auto ca = a.corners();
    const auto cb = b.corners();
    // separating axis test over each rectangle's two edge normals
    const std::array<Vec2, 4> axes{Vec2{std::cos(a.heading), std::sin(a.heading)},
                                   Vec2{-std::sin(a.heading), std::cos(a.heading)},
                                   Vec2{std::cos(b.heading), std::sin(b.heading)},
                                   Vec2{-std::sin(b.heading), std::cos(b.heading)}};
    for (const Vec2& axis : axes) {
        const Interval ia = project_onto(ca, axis);
        const Interval ib = project_onto(cb, axis);
        if (ia.hi < ib.lo || ib.hi < ia.lo) return false;
    }
    return true;
}

bool point_in_polygon(const Polygon& poly, Vec2 p) {
    bool inside = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2 a = poly[i], b = poly[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if (p.x < x_cross) inside = !inside;
        }
    }
    return inside;
}

bool point_in_union(const std::vector<Polygon>& polys, Vec2 p) {
    for (const Polygon& poly : polys) {
        if (point_in_polygon(poly, p)) return true;
    }
    return false;
}

std::optional<double> ray_segment_hit(Vec2 origin, Vec2 dir, Vec2 a, Vec2 b) {
    const Vec2 seg = b - a;
    const double denom = dir.cross(seg);
    if (std::fabs(denom) < 1e-15) return std::nullopt;  // parallel
    const Vec2 ao = a - origin;
    const double t = ao.cross(seg) / denom;
    const double u = ao.cross(dir) / denom;
    if (t < 0.0 || u < 0.0 || u > 1.0) return std::nullopt;
    return t;
}

double ray_union_exit(const std::vector<Polygon>& polys, Vec2 origin, Vec2 dir, double t_max) {
    std::vector<double> hits;
    for (const Polygon& poly : polys) {
        const std::size_t n = poly.size();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            if (auto t = ray_segment_hit(origin, dir, poly[j], poly[i]); t && *t > 1e-12 && *t < t_max) {
                hits.push_back(*t);
            }
        }
    }
    std::sort(hits.begin(), hits.end());
    // edge crossings partition the ray; the union state can only change
    // there, so test one interior point per interval
    double prev = 0.0;
    for (double t : hits) {
        const double mid = 0.5 * (prev + t);
        if (!point_in_union(polys, origin + dir * mid)) return prev;
        prev = t;
    }
    const double mid = 0.5 * (prev + t_max);
    if (!point_in_union(polys, origin + dir * mid)) return prev;
    return t_max;
}

std::optional<double> ray_rect_hit(const OrientedRect& rect, Vec2 origin, Vec2 dir, double t_max) {
    if (rect.contains(origin)) return 0.0;
    const auto corners = rect.corners();
    double best = t_max;
    bool found = false;
    for (int i = 0; i < 4; ++i) {
        if (auto t = ray_segment_hit(origin, dir, corners[static_cast<std::size_t>(i)],
                                     corners[static_cast<std::size_t>((i + 1) % 4)]);
            t && *t < best) {
            best = *t;
            found = true;
        }
    }
    if (!found) return std::nullopt;
    return best;
}

Polyline::Polyline(std::vector<Vec2> pts) : pts_(std::move(pts)) {
    if (pts_.size() < 2) throw std::invalid_argument("polyline needs at least two points");
    cum_.resize(pts_.size());
    cum_[0] = 0.0;
    for (std::size_t i = 1; i < pts_.size(); ++i) {
        cum_[i] = cum_[i - 1] + (pts_[i] - pts_[i - 1]).norm();
    }
}

Vec2 Polyline::point_at(double arc) const {
    if (arc <= 0.0) return pts_.front();
    if (arc >= length()) return pts_.back();
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), arc);
    const std::size_t i = static_cast<std::size_t>(it - cum_.begin());
    const double seg = cum_[i] - cum_[i - 1];
    const double u = seg > 0.0 ? (arc - cum_[i - 1]) / seg : 0.0;
    return pts_[i - 1] + (pts_[i] - pts_[i - 1]) * u;
}

double Polyline::heading_at(double arc) const {
    const double clamped = std::clamp(arc, 0.0, length());
    auto it = std::upper_bound(cum_.begin(), cum_.end(), clamped);
    std::size_t i = static_cast<std::size_t>(it - cum_.begin());
    if (i >= pts_.size()) i = pts_.size() - 1;
    if (i == 0) i = 1;
    const Vec2 d = pts_[i] - pts_[i - 1];
    return std::atan2(d.y, d.x);
}

double Polyline::project(Vec2 p) const {
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_arc = 0.0;
    for (std::size_t i = 1; i < pts_.size(); ++i) {
        const Vec2 a = pts_[i - 1], b = pts_[i];
        const Vec2 ab = b - a;
        const double len2 = ab.dot(ab);
        const double u = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        const Vec2 q = a + ab * u;
        const double d2 = (p - q).dot(p - q);
        if (d2 < best_d2) {
            best_d2 = d2;
            best_arc = cum_[i - 1] + std::sqrt(len2) * u;
        }
    }
    return best_arc;
}

double Polyline::lateral_at(Vec2 p) const {
    const double arc = project(p);
    const Vec2 q = point_at(arc);
    const Vec2 local = world_to_frame(p - q, heading_at(arc));
    return local.y;
}

double Polyline::curvature_at(double arc, double window) const {
    const double half = window * 0.5;
    const double s0 = std::clamp(arc - half, 0.0, length());
    const double s1 = std::clamp(arc + half, 0.0, length());
    if (s1 - s0 < 1e-9) return 0.0;
    const double dtheta = wrap_angle(heading_at(s1) - heading_at(s0));
    // heading-up sign: counterclockwise world turn (left) is negative
    return -dtheta / (s1 - s0);
}

}  // namespace wa
