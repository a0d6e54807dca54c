#include "wa/sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wa {
namespace {

// Expert tuning. Comfort headroom is deliberate: scoring allows 3 m/s^2
// accel, 6 m/s^3 jerk and 0.6 rad/s yaw rate, the expert stays below.
constexpr double kExpertAccelMax = 2.0;
constexpr double kExpertDecelMax = 2.6;
constexpr double kExpertJerkStep = 1.0;   // max |accel change| per step (jerk 2 m/s^3 at 2 Hz)
constexpr double kExpertYawRateMax = 0.5;
constexpr double kExpertLatAccelMax = 1.8;
constexpr double kIdmAccel = 1.5;
constexpr double kIdmBrake = 2.0;
constexpr double kIdmMinGap = 4.0;
constexpr double kIdmHeadway = 2.0;
constexpr double kCorridorHalfWidth = 2.2;
constexpr double kCommandLookahead = 15.0;
constexpr double kCommandTurnThreshold = 0.25;

}  // namespace

const char* kind_name(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::straight: return "straight";
        case ScenarioKind::left_turn: return "left_turn";
        case ScenarioKind::right_turn: return "right_turn";
        case ScenarioKind::lead_brake: return "lead_brake";
        case ScenarioKind::crossing: return "crossing";
        case ScenarioKind::congestion: return "congestion";
    }
    throw std::logic_error("unknown scenario kind");
}

ScenarioKind kind_from_name(const std::string& name) {
    for (int i = 0; i < kNumKinds; ++i) {
        const auto kind = static_cast<ScenarioKind>(i);
        if (name == kind_name(kind)) return kind;
    }
    throw std::invalid_argument("unknown scenario kind '" + name + "'");
}

WorldState init_world(const ScenarioSpec& spec) {
    WorldState state;
    state.time_step = 0;
    state.ego.x = spec.ego_init.x;
    state.ego.y = spec.ego_init.y;
    state.ego.heading = spec.ego_init.heading;
    state.ego.speed = spec.ego_speed0;
    state.agents.reserve(spec.agents.size());
    for (const AgentScript& script : spec.agents) {
        state.agents.push_back(agent_state_at(script, script.start_arc, script.speed));
    }
    return state;
}

EgoState step_ego(const EgoState& ego, Control control, double dt, bool* clamped) {
    bool hit_bound = false;
    double a = control.accel;
    double steer = control.steer;
    if (std::fabs(a) > kAccelMax) {
        a = std::clamp(a, -kAccelMax, kAccelMax);
        hit_bound = true;
    }
    if (std::fabs(steer) > kSteerMax) {
        steer = std::clamp(steer, -kSteerMax, kSteerMax);
        hit_bound = true;
    }
    if (clamped != nullptr) *clamped = hit_bound;

    EgoState next = ego;
    next.x = ego.x + ego.speed * std::cos(ego.heading) * dt;
    next.y = ego.y + ego.speed * std::sin(ego.heading) * dt;
    next.heading = wrap_angle(ego.heading + ego.speed * std::tan(steer) / kWheelbase * dt);
    next.speed = std::max(0.0, ego.speed + a * dt);
    next.accel = a;
    next.yaw_rate = ego.speed * std::tan(steer) / kWheelbase;
    return next;
}

AgentState agent_state_at(const AgentScript& script, double arc, double speed) {
    const Polyline path(script.path);
    AgentState state;
    state.arc = std::clamp(arc, 0.0, path.length());
    state.speed = speed;
    state.pos = path.point_at(state.arc);
    state.heading = path.heading_at(state.arc);
    return state;
}

void step_agents(const ScenarioSpec& spec, WorldState& state) {
    for (std::size_t i = 0; i < spec.agents.size(); ++i) {
        const AgentScript& script = spec.agents[i];
        AgentState& agent = state.agents[i];
        if (script.brake_step >= 0 && state.time_step >= script.brake_step) {
            agent.speed = std::max(0.0, agent.speed - script.brake_decel * spec.dt);
        } else {
            agent.speed = script.speed;
        }
        const Polyline path(script.path);
        agent.arc = std::clamp(agent.arc + agent.speed * spec.dt, 0.0, path.length());
        agent.pos = path.point_at(agent.arc);
        agent.heading = path.heading_at(agent.arc);
    }
}

WorldState step_world(const ScenarioSpec& spec, const WorldState& state, Control control, bool* clamped) {
    WorldState next = state;
    next.ego = step_ego(state.ego, control, spec.dt, clamped);
    step_agents(spec, next);
    next.time_step = state.time_step + 1;
    return next;
}

OrientedRect agent_rect(const AgentScript& script, const AgentState& state) {
    return {state.pos.x, state.pos.y, state.heading, script.length, script.width};
}

OrientedRect ego_rect(double x, double y, double heading) {
    return {x, y, heading, kEgoLength, kEgoWidth};
}

OccupancyGrid render_bev_in_frame(const ScenarioSpec& spec, const WorldState& state, const Pose& frame,
                                  int h, int w, double resolution) {
    if (h <= 0 || w <= 0 || resolution <= 0.0) {
        throw std::invalid_argument("render_bev: grid dimensions must be positive");
    }
    OccupancyGrid grid;
    grid.h = h;
    grid.w = w;
    grid.resolution = resolution;
    grid.drivable.assign(static_cast<std::size_t>(h) * w, 0.0);
    grid.agents.assign(static_cast<std::size_t>(h) * w, 0.0);
    grid.ego.assign(static_cast<std::size_t>(h) * w, 0.0);

    std::vector<OrientedRect> agent_rects;
    agent_rects.reserve(spec.agents.size());
    for (std::size_t i = 0; i < spec.agents.size(); ++i) {
        agent_rects.push_back(agent_rect(spec.agents[i], state.agents[i]));
    }
    const OrientedRect ego_fp = ego_rect(state.ego.x, state.ego.y, state.ego.heading);

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const Vec2 local{(h * 0.5 - r - 0.5) * resolution, (c + 0.5 - w * 0.5) * resolution};
            const Vec2 world = world_from_ego_frame(frame, local);
            const std::size_t idx = static_cast<std::size_t>(r) * w + c;
            if (point_in_union(spec.drivable, world)) grid.drivable[idx] = 1.0;
            for (const OrientedRect& rect : agent_rects) {
                if (rect.contains(world)) {
                    grid.agents[idx] = 1.0;
                    break;
                }
            }
            if (ego_fp.contains(world)) grid.ego[idx] = 1.0;
        }
    }
    return grid;
}

OccupancyGrid render_bev(const ScenarioSpec& spec, const WorldState& state, int h, int w,
                         double resolution) {
    return render_bev_in_frame(spec, state, Pose{state.ego.x, state.ego.y, state.ego.heading}, h, w,
                               resolution);
}

std::vector<double> raycast_ranges(const ScenarioSpec& spec, const WorldState& state, int n_rays) {
    if (n_rays < 1) throw std::invalid_argument("raycast_ranges: n_rays must be at least 1");
    std::vector<double> ranges(static_cast<std::size_t>(n_rays), kRayMax);
    const Vec2 origin{state.ego.x, state.ego.y};
    for (int i = 0; i < n_rays; ++i) {
        const double angle = state.ego.heading + 2.0 * M_PI * i / n_rays;
        const Vec2 dir{std::cos(angle), std::sin(angle)};
        double best = ray_union_exit(spec.drivable, origin, dir, kRayMax);
        for (std::size_t a = 0; a < spec.agents.size(); ++a) {
            const OrientedRect rect = agent_rect(spec.agents[a], state.agents[a]);
            if (auto t = ray_rect_hit(rect, origin, dir, kRayMax); t && *t < best) best = *t;
        }
        ranges[static_cast<std::size_t>(i)] = best;
    }
    return ranges;
}

DriveCommand route_command(const ScenarioSpec& spec, const EgoState& ego) {
    const Polyline route(spec.route);
    const double arc = route.project({ego.x, ego.y});
    const double ahead = std::min(arc + kCommandLookahead, route.length());
    const double dtheta = wrap_angle(route.heading_at(ahead) - route.heading_at(arc));
    if (dtheta > kCommandTurnThreshold) return DriveCommand::left;
    if (dtheta < -kCommandTurnThreshold) return DriveCommand::right;
    return DriveCommand::keep;
}

EgoStatus ego_status(const ScenarioSpec& spec, const WorldState& state) {
    EgoStatus status;
    status.speed = state.ego.speed;
    status.accel = state.ego.accel;
    status.yaw_rate = state.ego.yaw_rate;
    status.command = route_command(spec, state.ego);
    return status;
}

ExpertController::ExpertController(const ScenarioSpec& spec) : spec_(spec), route_(spec.route) {}

Control ExpertController::act(const WorldState& state) {
    const EgoState& ego = state.ego;
    const Vec2 pos{ego.x, ego.y};
    const double arc = route_.project(pos);
    const double v = ego.speed;

    // pure pursuit toward a speed-scaled lookahead point
    const double lookahead = std::clamp(0.9 * v + 2.0, 3.0, 10.0);
    const Vec2 target = route_.point_at(std::min(arc + lookahead, route_.length()));
    const double alpha = wrap_angle(std::atan2(target.y - pos.y, target.x - pos.x) - ego.heading);
    double steer = std::atan2(2.0 * kWheelbase * std::sin(alpha), lookahead);
    steer = std::clamp(steer, -kSteerMax, kSteerMax);
    if (v > 0.3) {
        // keep the induced yaw rate v*tan(steer)/L under the comfort cap
        const double steer_cap = std::atan(kExpertYawRateMax * kWheelbase / v);
        steer = std::clamp(steer, -steer_cap, steer_cap);
    }

    // desired speed: cruise, capped by upcoming curvature and route end
    double v_des = spec_.cruise_speed;
    for (double probe : {2.0, 5.0, 9.0, 14.0}) {
        const double kappa = std::fabs(route_.curvature_at(arc + probe));
        if (kappa > 1e-6) {
            v_des = std::min(v_des, std::sqrt(kExpertLatAccelMax / kappa));
            v_des = std::min(v_des, kExpertYawRateMax / kappa);
        }
    }
    const double remaining = route_.length() - arc - 5.0;
    v_des = std::min(v_des, std::sqrt(2.0 * kIdmBrake * std::max(0.0, remaining)));

    // nearest agent blocking the route corridor ahead
    double lead_gap = 1e9;
    double lead_speed = 0.0;
    for (std::size_t i = 0; i < spec_.agents.size(); ++i) {
        const AgentState& agent = state.agents[i];
        const double lat = route_.lateral_at(agent.pos);
        if (std::fabs(lat) > kCorridorHalfWidth + spec_.agents[i].width * 0.5) continue;
        const double agent_arc = route_.project(agent.pos);
        const double gap =
            agent_arc - arc - 0.5 * kEgoLength - 0.5 * spec_.agents[i].length;
        if (gap <= 0.0 || gap > 60.0) continue;
        if (gap < lead_gap) {
            lead_gap = gap;
            const double along = std::cos(wrap_angle(agent.heading - route_.heading_at(agent_arc)));
            lead_speed = std::max(0.0, agent.speed * along);
        }
    }

    // IDM-style longitudinal control
    double accel;
    if (v_des < 0.1) {
        accel = -kIdmBrake;
    } else {
        const double free_term = 1.0 - std::pow(v / v_des, 4.0);
        double interaction = 0.0;
        if (lead_gap < 1e8) {
            const double closing = v - lead_speed;
            const double s_star = kIdmMinGap + v * kIdmHeadway +
                                  v * closing / (2.0 * std::sqrt(kIdmAccel * kIdmBrake));
            const double ratio = std::max(0.0, s_star) / std::max(lead_gap, 0.5);
            interaction = ratio * ratio;
        }
        accel = kIdmAccel * (free_term - interaction);
    }
    accel = std::clamp(accel, -kExpertDecelMax, kExpertAccelMax);
    accel = std::clamp(accel, prev_accel_ - kExpertJerkStep, prev_accel_ + kExpertJerkStep);
    prev_accel_ = accel;

    return {accel, steer};
}

std::vector<WorldState> expert_rollout_states(const ScenarioSpec& spec, const WorldState& start,
                                              int steps) {
    std::vector<WorldState> states;
    states.push_back(start);
    ExpertController expert(spec);
    WorldState state = start;
    for (int k = 0; k < steps; ++k) {
        state = step_world(spec, state, expert.act(state));
        states.push_back(state);
    }
    return states;
}

FutureRollout rollout_future(const ScenarioSpec& spec, const WorldState& start, int t_wm, int grid_h,
                             int grid_w, double resolution) {
    if (t_wm < 1) throw std::invalid_argument("rollout_future: need at least one step");
    FutureRollout out;
    out.states = expert_rollout_states(spec, start, t_wm);
    const Pose frame{start.ego.x, start.ego.y, start.ego.heading};
    for (int k = 1; k <= t_wm; ++k) {
        const WorldState& state = out.states[static_cast<std::size_t>(k)];
        out.grids.push_back(render_bev_in_frame(spec, state, frame, grid_h, grid_w, resolution));
        out.expert.points.push_back(ego_frame_offset(frame, {state.ego.x, state.ego.y}));
    }
    return out;
}

std::vector<WorldState> agent_trace(const ScenarioSpec& spec, const WorldState& start, int steps) {
    std::vector<WorldState> trace;
    trace.push_back(start);
    WorldState state = start;
    for (int k = 0; k < steps; ++k) {
        step_agents(spec, state);
        state.time_step += 1;
        trace.push_back(state);
    }
    return trace;
}

Vec2 ego_frame_offset(const Pose& frame, Vec2 world_point) {
    return world_to_frame(world_point - Vec2{frame.x, frame.y}, frame.heading);
}

Vec2 world_from_ego_frame(const Pose& frame, Vec2 fwd_right) {
    return Vec2{frame.x, frame.y} + frame_to_world(fwd_right, frame.heading);
}

std::vector<Vec2> trajectory_to_world(const Pose& frame, const Trajectory& traj) {
    std::vector<Vec2> out;
    out.reserve(traj.points.size());
    for (const Vec2& p : traj.points) out.push_back(world_from_ego_frame(frame, p));
    return out;
}

// ---- scenario JSON ----

namespace {

nlohmann::json points_to_json(const std::vector<Vec2>& pts) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Vec2& p : pts) arr.push_back({p.x, p.y});
    return arr;
}

std::vector<Vec2> points_from_json(const nlohmann::json& arr) {
    std::vector<Vec2> pts;
    for (const auto& p : arr) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return pts;
}

}  // namespace

std::string scenario_to_json(const ScenarioSpec& spec) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["seed"] = spec.seed;
    j["kind"] = kind_name(spec.kind);
    nlohmann::json drivable = nlohmann::json::array();
    for (const Polygon& poly : spec.drivable) drivable.push_back(points_to_json(poly));
    j["drivable"] = drivable;
    j["route"] = points_to_json(spec.route);
    j["ego_init"] = {{"x", spec.ego_init.x},
                     {"y", spec.ego_init.y},
                     {"heading", spec.ego_init.heading},
                     {"speed", spec.ego_speed0}};
    j["cruise_speed"] = spec.cruise_speed;
    nlohmann::json agents = nlohmann::json::array();
    for (const AgentScript& a : spec.agents) {
        agents.push_back({{"path", points_to_json(a.path)},
                          {"speed", a.speed},
                          {"start_arc", a.start_arc},
                          {"brake_step", a.brake_step},
                          {"brake_decel", a.brake_decel},
                          {"length", a.length},
                          {"width", a.width}});
    }
    j["agents"] = agents;
    j["horizon_steps"] = spec.horizon_steps;
    j["dt"] = spec.dt;
    return j.dump(2);
}

ScenarioSpec scenario_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("format_version").get<int>() != 1) {
        throw std::runtime_error("scenario file: unsupported format_version");
    }
    ScenarioSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.kind = kind_from_name(j.at("kind").get<std::string>());
    for (const auto& poly : j.at("drivable")) spec.drivable.push_back(points_from_json(poly));
    spec.route = points_from_json(j.at("route"));
    spec.ego_init.x = j.at("ego_init").at("x").get<double>();
    spec.ego_init.y = j.at("ego_init").at("y").get<double>();
    spec.ego_init.heading = j.at("ego_init").at("heading").get<double>();
    spec.ego_speed0 = j.at("ego_init").at("speed").get<double>();
    spec.cruise_speed = j.at("cruise_speed").get<double>();
    for (const auto& a : j.at("agents")) {
        AgentScript script;
        script.path = points_from_json(a.at("path"));
        script.speed = a.at("speed").get<double>();
        script.start_arc = a.at("start_arc").get<double>();
        script.brake_step = a.at("brake_step").get<int>();
        script.brake_decel = a.at("brake_decel").get<double>();
        script.length = a.at("length").get<double>();
        script.width = a.at("width").get<double>();
        spec.agents.push_back(std::move(script));
    }
    spec.horizon_steps = j.at("horizon_steps").get<int>();
    spec.dt = j.at("dt").get<double>();
    return spec;
}

}  // namespace wa
