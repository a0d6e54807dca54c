#pragma once

// Closed-loop driving scores and open-loop trajectory metrics. Geometry
// checks (collision, drivable area, time-to-collision) run on a fixed
// 0.05 s interpolated time grid; kinematic comfort checks run on the
// trajectory's native step grid via finite differences.

#include <vector>

#include "wa/geometry.hpp"
#include "wa/sim.hpp"

namespace wa {

inline constexpr double kMetricSubstep = 0.05;   // s, geometry sampling
inline constexpr double kTtcWindow = 1.0;        // s, constant-velocity projection
inline constexpr double kTtcSampleStep = 0.1;    // s, projection sampling
inline constexpr double kComfAccelMax = 3.0;     // m/s^2
inline constexpr double kComfJerkMax = 6.0;      // m/s^3
inline constexpr double kComfYawRateMax = 0.6;   // rad/s

struct SubScores {
    double nc = 1.0;    // no at-fault collision (binary)
    double dac = 1.0;   // drivable-area compliance (binary)
    double ttc = 1.0;   // time-to-collision clear (binary)
    double comf = 1.0;  // comfort bounds respected (binary)
    double ep = 1.0;    // ego progress ratio in [0,1]
};

struct PDMSWeights {
    double w_ttc = 5.0;
    double w_comf = 2.0;
    double w_ep = 5.0;
};

// nc * dac * weighted mean of (ttc, comf, ep).
double pdms(const SubScores& sub, const PDMSWeights& weights = {});

// Scores an executed ego path (world-frame waypoints, one per dt) against
// the scenario's scripted agents. `trace` must hold the start state plus
// at least one state per waypoint; expert progress for the EP ratio is
// recomputed internally over the same horizon.
SubScores score_scenario(const std::vector<Vec2>& executed_world, const ScenarioSpec& spec,
                         const std::vector<WorldState>& trace);

struct OpenLoopMetrics {
    double l2_1s = 0.0, l2_2s = 0.0, l2_3s = 0.0, l2_avg = 0.0;
    double col_1s = 0.0, col_2s = 0.0, col_3s = 0.0, col_avg = 0.0;
};

// Predicted vs ground-truth waypoints in the same planning frame, plus
// collision checks of the predicted footprint against agents at matched
// coarse steps. Horizons must match and cover 3 s.
OpenLoopMetrics open_loop_metrics(const Trajectory& pred, const Trajectory& gt,
                                  const ScenarioSpec& spec, const std::vector<WorldState>& trace,
                                  const Pose& frame);

// Shared helper: headings reconstructed from successive displacements,
// carrying the previous heading through standstills.
std::vector<double> displacement_headings(const std::vector<Vec2>& points, double initial_heading);

}  // namespace wa
