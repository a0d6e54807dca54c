#pragma once

// Deterministic 2D driving world: scripted non-reactive agents, a kinematic
// bicycle ego, occupancy-grid rendering, range scanning, and a privileged
// expert controller used as the label source.

#include <cstdint>
#include <string>
#include <vector>

#include "wa/geometry.hpp"

namespace wa {

inline constexpr double kWheelbase = 2.7;       // m
inline constexpr double kSteerMax = 0.61;       // rad
inline constexpr double kAccelMax = 4.0;        // m/s^2 (hard actuator bound)
inline constexpr double kEgoLength = 4.5;       // m
inline constexpr double kEgoWidth = 2.0;        // m
inline constexpr double kRayMax = 50.0;         // m
inline constexpr int kGridSize = 64;            // cells per side
inline constexpr double kGridResolution = 0.5;  // m per cell
inline constexpr int kDefaultHorizon = 16;      // steps
inline constexpr double kDefaultDt = 0.5;       // s (2 Hz)

enum class ScenarioKind { straight, left_turn, right_turn, lead_brake, crossing, congestion };

const char* kind_name(ScenarioKind kind);
ScenarioKind kind_from_name(const std::string& name);
inline constexpr int kNumKinds = 6;

enum class DriveCommand { keep, left, right };

// One background vehicle: follows its waypoint path at the scripted speed,
// optionally decelerating from brake_step on, and holds position once the
// path is exhausted. speed 0 with start_arc places a parked vehicle.
struct AgentScript {
    std::vector<Vec2> path;
    double speed = 0.0;
    double start_arc = 0.0;
    int brake_step = -1;
    double brake_decel = 0.0;
    double length = 4.5;
    double width = 2.0;
};

struct ScenarioSpec {
    std::uint64_t seed = 0;
    ScenarioKind kind = ScenarioKind::straight;
    std::vector<Polygon> drivable;
    std::vector<Vec2> route;  // centerline polyline, world frame
    Pose ego_init;
    double ego_speed0 = 0.0;
    double cruise_speed = 8.0;  // expert target speed
    std::vector<AgentScript> agents;
    int horizon_steps = kDefaultHorizon;
    double dt = kDefaultDt;
};

std::string scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const std::string& text);

struct EgoState {
    double x = 0.0, y = 0.0, heading = 0.0;
    double speed = 0.0;
    double accel = 0.0;     // most recent applied acceleration
    double yaw_rate = 0.0;  // most recent heading rate
};

struct AgentState {
    double arc = 0.0;
    double speed = 0.0;
    Vec2 pos;
    double heading = 0.0;
};

struct WorldState {
    int time_step = 0;
    EgoState ego;
    std::vector<AgentState> agents;
};

struct Control {
    double accel = 0.0;
    double steer = 0.0;
};

struct OccupancyGrid {
    int h = kGridSize, w = kGridSize;
    double resolution = kGridResolution;
    std::vector<double> drivable, agents, ego;  // h*w each, values 0/1

    int cells() const { return h * w; }
};

struct EgoStatus {
    double speed = 0.0;
    double accel = 0.0;
    double yaw_rate = 0.0;
    DriveCommand command = DriveCommand::keep;
};

// Planner output and expert label: T_f waypoints in the frame of the ego
// pose at planning time (x forward, y right), spaced dt apart.
struct Trajectory {
    std::vector<Vec2> points;
};

WorldState init_world(const ScenarioSpec& spec);

// Kinematic bicycle Euler step; out-of-bound controls are clamped and
// reported through `clamped` when provided. Speed never goes negative.
EgoState step_ego(const EgoState& ego, Control control, double dt, bool* clamped = nullptr);

// Advances every agent one step of spec.dt; braking applies from the
// scripted trigger step onward. Does not touch the ego or the clock.
void step_agents(const ScenarioSpec& spec, WorldState& state);

// step_ego + step_agents + clock advance.
WorldState step_world(const ScenarioSpec& spec, const WorldState& state, Control control,
                      bool* clamped = nullptr);

AgentState agent_state_at(const AgentScript& script, double arc, double speed);
OrientedRect agent_rect(const AgentScript& script, const AgentState& state);
OrientedRect ego_rect(double x, double y, double heading);

// Ego-centered heading-up rasterization of drivable area, agents and ego.
OccupancyGrid render_bev(const ScenarioSpec& spec, const WorldState& state, int h = kGridSize,
                         int w = kGridSize, double resolution = kGridResolution);
// Same, but centered on an arbitrary frame pose (used for future frames
// rendered in the planning-time ego frame).
OccupancyGrid render_bev_in_frame(const ScenarioSpec& spec, const WorldState& state, const Pose& frame,
                                  int h = kGridSize, int w = kGridSize,
                                  double resolution = kGridResolution);

// Ranges from the ego center to the nearest agent or drivable-boundary
// hit; ray i points at heading + 2*pi*i/n_rays, capped at kRayMax.
std::vector<double> raycast_ranges(const ScenarioSpec& spec, const WorldState& state, int n_rays);

// Route command from upcoming centerline geometry at the ego position.
DriveCommand route_command(const ScenarioSpec& spec, const EgoState& ego);
EgoStatus ego_status(const ScenarioSpec& spec, const WorldState& state);

// Privileged route follower: pure pursuit steering plus an IDM-style gap
// controller, with comfort headroom relative to the scoring bounds.
class ExpertController {
  public:
    explicit ExpertController(const ScenarioSpec& spec);

    Control act(const WorldState& state);

  private:
    const ScenarioSpec& spec_;
    Polyline route_;
    double prev_accel_ = 0.0;
};

struct FutureRollout {
    std::vector<OccupancyGrid> grids;      // step k rendered in the t=0 ego frame
    Trajectory expert;                     // ego positions, t=0 ego frame
    std::vector<WorldState> states;        // start state plus each stepped state
};

// Simulates t_wm expert-controlled steps from `start` and renders every
// stepped state in the starting ego frame.
FutureRollout rollout_future(const ScenarioSpec& spec, const WorldState& start, int t_wm,
                             int grid_h = kGridSize, int grid_w = kGridSize,
                             double resolution = kGridResolution);

// Expert-controlled simulation without rendering: start state plus each
// stepped state.
std::vector<WorldState> expert_rollout_states(const ScenarioSpec& spec, const WorldState& start,
                                              int steps);

// Scripted agent states only (the ego is ignored): returns start state
// plus `steps` stepped states. Background traffic is non-reactive, so this
// is the environment any executed trajectory is scored against.
std::vector<WorldState> agent_trace(const ScenarioSpec& spec, const WorldState& start, int steps);

Vec2 ego_frame_offset(const Pose& frame, Vec2 world_point);
Vec2 world_from_ego_frame(const Pose& frame, Vec2 fwd_right);

// Converts waypoints from the planning-time ego frame into world points.
std::vector<Vec2> trajectory_to_world(const Pose& frame, const Trajectory& traj);

}  // namespace wa
