#include "wa/scenario_gen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "wa/metrics.hpp"
#include "wa/rng.hpp"

namespace wa {
namespace {

constexpr double kRoadHalfWidth = 5.0;
constexpr double kRouteSampleStep = 1.0;
constexpr int kMaxAttempts = 64;
constexpr int kMinPlanHorizon = 8;  // horizon_steps must cover the planning window

// Knobs that relax as validation attempts fail: wider gaps, lower speeds.
struct Margins {
    double gap = 1.0;
    double speed = 1.0;
};

std::vector<Vec2> straight_points(Vec2 from, Vec2 dir, double length) {
    std::vector<Vec2> pts;
    const int n = static_cast<int>(std::ceil(length / kRouteSampleStep));
    for (int i = 0; i <= n; ++i) {
        const double s = std::min(length, i * kRouteSampleStep);
        pts.push_back(from + dir * s);
    }
    return pts;
}

Polygon rect_polygon(double x0, double x1, double y0, double y1) {
    return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

// Quarter-turn ring sector around `center` between radii r_in and r_out.
Polygon sector_polygon(Vec2 center, double r_in, double r_out, double phi0, double phi1) {
    Polygon poly;
    const int n = 24;
    for (int i = 0; i <= n; ++i) {
        const double phi = phi0 + (phi1 - phi0) * i / n;
        poly.push_back(center + Vec2{std::sin(phi), -std::cos(phi)} * r_out);
    }
    for (int i = n; i >= 0; --i) {
        const double phi = phi0 + (phi1 - phi0) * i / n;
        poly.push_back(center + Vec2{std::sin(phi), -std::cos(phi)} * r_in);
    }
    return poly;
}

AgentScript parked_agent(Rng& rng, double arc_lo, double arc_hi) {
    AgentScript agent;
    const double x = rng.uniform(arc_lo, arc_hi);
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double lat = side * rng.uniform(3.4, 3.9);
    agent.path = {{x, lat}, {x + 6.0, lat}};
    agent.speed = 0.0;
    return agent;
}

AgentScript oncoming_agent(Rng& rng, double road_len) {
    AgentScript agent;
    const double x0 = rng.uniform(0.55, 0.9) * road_len;
    agent.path = {{x0, -3.5}, {x0 - (road_len + 40.0), -3.5}};
    agent.speed = rng.uniform(4.0, 6.5);
    return agent;
}

// All kinds are built in a local frame with the route starting at the
// origin along +x, then rotated and translated as a whole.
ScenarioSpec build_candidate(std::uint64_t seed, ScenarioKind kind, int attempt) {
    Rng rng(mix64(hash_combine(seed, static_cast<std::uint64_t>(kind) + 1)) ^
            mix64(0x5CEA1E5ULL + static_cast<std::uint64_t>(attempt)));
    const Margins margins{1.0 + 0.12 * attempt, 1.0 / (1.0 + 0.05 * attempt)};

    ScenarioSpec spec;
    spec.seed = seed;
    spec.kind = kind;
    spec.horizon_steps = kDefaultHorizon;
    spec.dt = kDefaultDt;

    const bool mirrored = kind == ScenarioKind::right_turn;
    switch (kind) {
        case ScenarioKind::straight: {
            const double len = 120.0;
            spec.route = straight_points({0, 0}, {1, 0}, len);
            spec.drivable = {rect_polygon(-12.0, len + 12.0, -kRoadHalfWidth, kRoadHalfWidth)};
            spec.cruise_speed = rng.uniform(6.5, 8.5) * margins.speed;
            const int parked = rng.uniform_int(0, 2);
            for (int i = 0; i < parked; ++i) spec.agents.push_back(parked_agent(rng, 18.0, 60.0));
            if (rng.uniform() < 0.5) spec.agents.push_back(oncoming_agent(rng, len));
            break;
        }
        case ScenarioKind::left_turn:
        case ScenarioKind::right_turn: {
            const double entry = 30.0;
            const double radius = rng.uniform(14.0, 22.0);
            const double exit = 45.0;
            std::vector<Vec2> route = straight_points({0, 0}, {1, 0}, entry);
            const Vec2 center{entry, radius};
            const int arc_n = static_cast<int>(std::ceil(radius * M_PI_2 / kRouteSampleStep));
            for (int i = 1; i <= arc_n; ++i) {
                const double phi = M_PI_2 * i / arc_n;
                route.push_back(center + Vec2{std::sin(phi), -std::cos(phi)} * radius);
            }
            const Vec2 exit_start{entry + radius, radius};
            for (int i = 1; i <= static_cast<int>(exit); ++i) {
                route.push_back(exit_start + Vec2{0, 1} * static_cast<double>(i));
            }
            spec.drivable = {
                rect_polygon(-12.0, entry, -kRoadHalfWidth, kRoadHalfWidth),
                sector_polygon(center, radius - kRoadHalfWidth, radius + kRoadHalfWidth, 0.0, M_PI_2),
                rect_polygon(entry + radius - kRoadHalfWidth, entry + radius + kRoadHalfWidth, radius,
                             radius + exit + 12.0),
            };
            spec.route = route;
            spec.cruise_speed = rng.uniform(5.5, 7.0) * margins.speed;
            if (rng.uniform() < 0.4) spec.agents.push_back(parked_agent(rng, 10.0, entry - 8.0));
            if (mirrored) {
                for (Vec2& p : spec.route) p.y = -p.y;
                for (Polygon& poly : spec.drivable) {
                    for (Vec2& p : poly) p.y = -p.y;
                }
                for (AgentScript& a : spec.agents) {
                    for (Vec2& p : a.path) p.y = -p.y;
                }
            }
            break;
        }
        case ScenarioKind::lead_brake: {
            const double len = 130.0;
            spec.route = straight_points({0, 0}, {1, 0}, len);
            spec.drivable = {rect_polygon(-12.0, len + 12.0, -kRoadHalfWidth, kRoadHalfWidth)};
            spec.cruise_speed = rng.uniform(6.0, 8.0) * margins.speed;
            AgentScript lead;
            const double gap0 = rng.uniform(22.0, 30.0) * margins.gap;
            lead.path = straight_points({2.0 + gap0, 0}, {1, 0}, len);
            lead.speed = spec.cruise_speed * rng.uniform(0.9, 1.05);
            lead.brake_step = rng.uniform_int(2, 5);
            lead.brake_decel = rng.uniform(1.6, 2.4) / margins.gap;
            spec.agents.push_back(lead);
            if (rng.uniform() < 0.4) spec.agents.push_back(oncoming_agent(rng, len));
            break;
        }
        case ScenarioKind::crossing: {
            const double len = 120.0;
            spec.route = straight_points({0, 0}, {1, 0}, len);
            const double x_cross = rng.uniform(26.0, 36.0);
            spec.drivable = {
                rect_polygon(-12.0, len + 12.0, -kRoadHalfWidth, kRoadHalfWidth),
                rect_polygon(x_cross - kRoadHalfWidth, x_cross + kRoadHalfWidth, -50.0, 50.0),
            };
            spec.cruise_speed = rng.uniform(6.0, 7.5) * margins.speed;
            AgentScript crosser;
            const double v_a = rng.uniform(4.5, 7.0);
            const double from_below = rng.uniform() < 0.5 ? 1.0 : -1.0;
            // ego reaches the conflict point around this step at cruise
            const double ego_eta = (x_cross - 2.0) / (spec.cruise_speed * spec.dt);
            const bool cross_early = rng.uniform() < 0.65;
            double conflict_step;
            if (cross_early) {
                conflict_step = std::max(2.0, ego_eta - rng.uniform(4.0, 7.0) * margins.gap);
            } else {
                conflict_step = ego_eta + rng.uniform(3.5, 6.0) * margins.gap;
            }
            const double d0 = v_a * conflict_step * spec.dt;
            crosser.path = {{x_cross, -from_below * d0}, {x_cross, from_below * 60.0}};
            crosser.speed = v_a;
            spec.agents.push_back(crosser);
            break;
        }
        case ScenarioKind::congestion: {
            const double len = 130.0;
            spec.route = straight_points({0, 0}, {1, 0}, len);
            spec.drivable = {rect_polygon(-12.0, len + 12.0, -kRoadHalfWidth, kRoadHalfWidth)};
            spec.cruise_speed = rng.uniform(6.0, 7.5) * margins.speed;
            const int leads = rng.uniform_int(2, 3);
            double ahead = rng.uniform(16.0, 22.0) * margins.gap;
            for (int i = 0; i < leads; ++i) {
                AgentScript lead;
                lead.path = straight_points({2.0 + ahead, 0}, {1, 0}, len);
                lead.speed = rng.uniform(2.5, 4.0);
                spec.agents.push_back(lead);
                ahead += rng.uniform(14.0, 20.0) * margins.gap;
            }
            if (rng.uniform() < 0.5) spec.agents.push_back(oncoming_agent(rng, len));
            break;
        }
    }

    // start a little into the route, at or below the cruise target
    const Polyline route(spec.route);
    const double start_arc = 2.0;
    const Vec2 start = route.point_at(start_arc);
    spec.ego_init = {start.x, start.y, route.heading_at(start_arc)};
    spec.ego_speed0 = spec.cruise_speed * rng.uniform(0.8, 0.95);
    if (kind == ScenarioKind::congestion) spec.ego_speed0 = std::min(spec.ego_speed0, 5.0);

    // global rigid transform so no kind is axis-aligned by construction
    const double rot = rng.uniform(-M_PI, M_PI);
    const Vec2 shift{rng.uniform(-60.0, 60.0), rng.uniform(-60.0, 60.0)};
    const auto move = [&](Vec2 p) {
        const double c = std::cos(rot), s = std::sin(rot);
        return Vec2{c * p.x - s * p.y, s * p.x + c * p.y} + shift;
    };
    for (Vec2& p : spec.route) p = move(p);
    for (Polygon& poly : spec.drivable) {
        for (Vec2& p : poly) p = move(p);
    }
    for (AgentScript& a : spec.agents) {
        for (Vec2& p : a.path) p = move(p);
    }
    const Vec2 ego_moved = move({spec.ego_init.x, spec.ego_init.y});
    spec.ego_init = {ego_moved.x, ego_moved.y, wrap_angle(spec.ego_init.heading + rot)};

    return spec;
}

bool structural_ok(const ScenarioSpec& spec) {
    if (spec.dt <= 0.0 || spec.horizon_steps < kMinPlanHorizon) return false;
    if (spec.route.size() < 2 || spec.drivable.empty()) return false;
    const OrientedRect ego_fp = ego_rect(spec.ego_init.x, spec.ego_init.y, spec.ego_init.heading);
    for (const Vec2& corner : ego_fp.corners()) {
        if (!point_in_union(spec.drivable, corner)) return false;
    }
    for (const AgentScript& agent : spec.agents) {
        if (agent.path.size() < 2) return false;
    }
    return true;
}

}  // namespace

bool scenario_is_valid(const ScenarioSpec& spec) {
    if (!structural_ok(spec)) return false;
    const WorldState start = init_world(spec);
    const std::vector<WorldState> states = expert_rollout_states(spec, start, spec.horizon_steps);
    std::vector<Vec2> executed;
    executed.reserve(static_cast<std::size_t>(spec.horizon_steps));
    for (int t = 1; t <= spec.horizon_steps; ++t) {
        executed.push_back({states[static_cast<std::size_t>(t)].ego.x, states[static_cast<std::size_t>(t)].ego.y});
    }
    const SubScores sub = score_scenario(executed, spec, states);
    if (sub.nc != 1.0 || sub.dac != 1.0 || sub.ttc != 1.0 || sub.comf != 1.0 || sub.ep != 1.0) {
        return false;
    }
    // also require non-at-fault contacts to be absent: the expert must not
    // be hit at all, so labels come from genuinely clean episodes
    for (int t = 1; t <= spec.horizon_steps; ++t) {
        const WorldState& ws = states[static_cast<std::size_t>(t)];
        const OrientedRect ego_fp = ego_rect(ws.ego.x, ws.ego.y, ws.ego.heading);
        for (std::size_t a = 0; a < spec.agents.size(); ++a) {
            if (rects_overlap(ego_fp, agent_rect(spec.agents[a], ws.agents[a]))) return false;
        }
    }
    return true;
}

ScenarioSpec generate_scenario(std::uint64_t seed, ScenarioKind kind) {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        ScenarioSpec spec = build_candidate(seed, kind, attempt);
        if (scenario_is_valid(spec)) return spec;
    }
    throw std::runtime_error(std::string("generate_scenario: no valid candidate for kind ") +
                             kind_name(kind) + " seed " + std::to_string(seed));
}

}  // namespace wa
