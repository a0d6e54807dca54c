#include "wa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wa {
namespace {

double lerp(double a, double b, double u) { return a + (b - a) * u; }

double lerp_angle(double a, double b, double u) { return a + wrap_angle(b - a) * u; }

Vec2 lerp_vec(Vec2 a, Vec2 b, double u) { return {lerp(a.x, b.x, u), lerp(a.y, b.y, u)}; }

bool corners_inside(const std::vector<Polygon>& drivable, const OrientedRect& rect) {
    for (const Vec2& corner : rect.corners()) {
        if (!point_in_union(drivable, corner)) return false;
    }
    return true;
}

}  // namespace

double pdms(const SubScores& sub, const PDMSWeights& weights) {
    const double wsum = weights.w_ttc + weights.w_comf + weights.w_ep;
    const double inner = (weights.w_ttc * sub.ttc + weights.w_comf * sub.comf + weights.w_ep * sub.ep) / wsum;
    return sub.nc * sub.dac * inner;
}

std::vector<double> displacement_headings(const std::vector<Vec2>& points, double initial_heading) {
    std::vector<double> headings(points.size(), initial_heading);
    for (std::size_t i = 1; i < points.size(); ++i) {
        const Vec2 d = points[i] - points[i - 1];
        headings[i] = d.norm() > 1e-9 ? std::atan2(d.y, d.x) : headings[i - 1];
    }
    return headings;
}

SubScores score_scenario(const std::vector<Vec2>& executed_world, const ScenarioSpec& spec,
                         const std::vector<WorldState>& trace) {
    const int steps = static_cast<int>(executed_world.size());
    if (steps < 1) throw std::invalid_argument("score_scenario: empty executed trajectory");
    if (static_cast<int>(trace.size()) < steps + 1) {
        throw std::invalid_argument("score_scenario: trace shorter than executed horizon");
    }
    const double dt = spec.dt;
    const int n_agents = static_cast<int>(spec.agents.size());

    // ego samples: initial pose plus one point per executed step
    std::vector<Vec2> pos(static_cast<std::size_t>(steps) + 1);
    pos[0] = {spec.ego_init.x, spec.ego_init.y};
    for (int t = 0; t < steps; ++t) pos[static_cast<std::size_t>(t) + 1] = executed_world[static_cast<std::size_t>(t)];
    const std::vector<double> headings = displacement_headings(pos, spec.ego_init.heading);

    std::vector<double> speed(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
        speed[static_cast<std::size_t>(t)] = (pos[static_cast<std::size_t>(t) + 1] - pos[static_cast<std::size_t>(t)]).norm() / dt;
    }

    SubScores sub;

    // comfort on the native step grid
    for (int t = 0; t + 1 < steps; ++t) {
        const double accel = (speed[static_cast<std::size_t>(t) + 1] - speed[static_cast<std::size_t>(t)]) / dt;
        if (std::fabs(accel) > kComfAccelMax) sub.comf = 0.0;
    }
    for (int t = 0; t + 2 < steps; ++t) {
        const double a0 = (speed[static_cast<std::size_t>(t) + 1] - speed[static_cast<std::size_t>(t)]) / dt;
        const double a1 = (speed[static_cast<std::size_t>(t) + 2] - speed[static_cast<std::size_t>(t) + 1]) / dt;
        if (std::fabs((a1 - a0) / dt) > kComfJerkMax) sub.comf = 0.0;
    }
    for (int t = 0; t < steps; ++t) {
        const double yaw_rate = wrap_angle(headings[static_cast<std::size_t>(t) + 1] - headings[static_cast<std::size_t>(t)]) / dt;
        if (std::fabs(yaw_rate) > kComfYawRateMax) sub.comf = 0.0;
    }

    // geometry on the interpolated substep grid
    const int n_sub = std::max(1, static_cast<int>(std::lround(dt / kMetricSubstep)));
    for (int t = 0; t < steps; ++t) {
        const Vec2 ego_vel = (pos[static_cast<std::size_t>(t) + 1] - pos[static_cast<std::size_t>(t)]) * (1.0 / dt);
        const WorldState& s0 = trace[static_cast<std::size_t>(t)];
        const WorldState& s1 = trace[static_cast<std::size_t>(t) + 1];
        const int last_sub = (t == steps - 1) ? n_sub : n_sub - 1;
        for (int j = 0; j <= last_sub; ++j) {
            const double u = static_cast<double>(j) / n_sub;
            const Vec2 ego_p = lerp_vec(pos[static_cast<std::size_t>(t)], pos[static_cast<std::size_t>(t) + 1], u);
            const double ego_h = lerp_angle(headings[static_cast<std::size_t>(t)], headings[static_cast<std::size_t>(t) + 1], u);
            const OrientedRect ego_fp = ego_rect(ego_p.x, ego_p.y, ego_h);

            if (!corners_inside(spec.drivable, ego_fp)) sub.dac = 0.0;

            for (int a = 0; a < n_agents; ++a) {
                const AgentState& a0 = s0.agents[static_cast<std::size_t>(a)];
                const AgentState& a1 = s1.agents[static_cast<std::size_t>(a)];
                const Vec2 agent_p = lerp_vec(a0.pos, a1.pos, u);
                const double agent_h = lerp_angle(a0.heading, a1.heading, u);
                const Vec2 agent_vel = (a1.pos - a0.pos) * (1.0 / dt);
                const OrientedRect agent_fp{agent_p.x, agent_p.y, agent_h,
                                            spec.agents[static_cast<std::size_t>(a)].length,
                                            spec.agents[static_cast<std::size_t>(a)].width};

                if (rects_overlap(ego_fp, agent_fp)) {
                    // at fault only when moving toward the contact
                    const Vec2 toward = agent_p - ego_p;
                    if (ego_vel.dot(toward) > 0.0) sub.nc = 0.0;
                }

                for (double tau = kTtcSampleStep; tau <= kTtcWindow + 1e-9; tau += kTtcSampleStep) {
                    const Vec2 ego_proj = ego_p + ego_vel * tau;
                    const Vec2 agent_proj = agent_p + agent_vel * tau;
                    const OrientedRect ego_fp_proj = ego_rect(ego_proj.x, ego_proj.y, ego_h);
                    const OrientedRect agent_fp_proj{agent_proj.x, agent_proj.y, agent_h,
                                                     agent_fp.length, agent_fp.width};
                    if (rects_overlap(ego_fp_proj, agent_fp_proj)) sub.ttc = 0.0;
                }
            }
        }
    }

    // progress along the route relative to the expert over the same horizon
    const Polyline route(spec.route);
    const double arc_start = route.project(pos[0]);
    const double progress = std::max(0.0, route.project(pos[static_cast<std::size_t>(steps)]) - arc_start);
    const std::vector<WorldState> expert_states = expert_rollout_states(spec, init_world(spec), steps);
    const Vec2 expert_end{expert_states.back().ego.x, expert_states.back().ego.y};
    const double expert_progress = std::max(0.0, route.project(expert_end) - arc_start);
    sub.ep = expert_progress < 1e-9 ? 1.0 : std::clamp(progress / expert_progress, 0.0, 1.0);

    return sub;
}

OpenLoopMetrics open_loop_metrics(const Trajectory& pred, const Trajectory& gt, const ScenarioSpec& spec,
                                  const std::vector<WorldState>& trace, const Pose& frame) {
    if (pred.points.size() != gt.points.size()) {
        throw std::invalid_argument("open_loop_metrics: horizon mismatch");
    }
    const int steps_per_s = static_cast<int>(std::lround(1.0 / spec.dt));
    const int idx_3s = 3 * steps_per_s - 1;
    if (static_cast<int>(pred.points.size()) < idx_3s + 1) {
        throw std::invalid_argument("open_loop_metrics: horizon shorter than 3 s");
    }
    if (static_cast<int>(trace.size()) < 3 * steps_per_s + 1) {
        throw std::invalid_argument("open_loop_metrics: trace shorter than 3 s");
    }

    OpenLoopMetrics out;
    const auto l2_at = [&](int k) {
        const std::size_t idx = static_cast<std::size_t>(k * steps_per_s - 1);
        return (pred.points[idx] - gt.points[idx]).norm();
    };
    out.l2_1s = l2_at(1);
    out.l2_2s = l2_at(2);
    out.l2_3s = l2_at(3);
    out.l2_avg = (out.l2_1s + out.l2_2s + out.l2_3s) / 3.0;

    std::vector<Vec2> world = trajectory_to_world(frame, pred);
    std::vector<Vec2> chain(world.size() + 1);
    chain[0] = {frame.x, frame.y};
    std::copy(world.begin(), world.end(), chain.begin() + 1);
    const std::vector<double> headings = displacement_headings(chain, frame.heading);

    const auto collision_up_to = [&](int k) {
        for (int s = 1; s <= k * steps_per_s; ++s) {
            const OrientedRect ego_fp =
                ego_rect(chain[static_cast<std::size_t>(s)].x, chain[static_cast<std::size_t>(s)].y,
                         headings[static_cast<std::size_t>(s)]);
            const WorldState& ws = trace[static_cast<std::size_t>(s)];
            for (std::size_t a = 0; a < spec.agents.size(); ++a) {
                const OrientedRect agent_fp = agent_rect(spec.agents[a], ws.agents[a]);
                if (rects_overlap(ego_fp, agent_fp)) return 1.0;
            }
        }
        return 0.0;
    };
    out.col_1s = collision_up_to(1);
    out.col_2s = collision_up_to(2);
    out.col_3s = collision_up_to(3);
    out.col_avg = (out.col_1s + out.col_2s + out.col_3s) / 3.0;
    return out;
}

}  // namespace wa
