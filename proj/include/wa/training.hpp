#pragma once

// Losses, the two-phase optimization procedure (current-frame planner
// first, future-feature stage attached afterwards with the world model
// frozen), and the binary checkpoint format.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wa/encoder.hpp"
#include "wa/model.hpp"
#include "wa/planner.hpp"
#include "wa/world_model.hpp"

namespace wa {

struct TrainConfig {
    ModelConfig model;
    double lambda1 = 1.0;  // BEV auxiliary weight
    double lambda2 = 1.0;  // trajectory + score weight
    double lr = 1e-4;
    int phase1_epochs = 40;
    int phase2_epochs = 10;
    int batch_size = 8;
    std::uint64_t seed = 0;
    int t_d = 100;
    DenoiseSchedule schedule;
    WmKind wm_kind = WmKind::oracle;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct LossBreakdown {
    double total = 0.0, l_bev = 0.0, l_traj = 0.0, l_score = 0.0;
};

// Winner-takes-all trajectory loss: the mode with least mean L2 to the
// target receives a smooth-L1 waypoint loss (x and y summed per waypoint,
// averaged over steps); the score head is trained to classify that mode.
// Returns (l_traj, l_score) and reports the winner index.
std::pair<Tensor, Tensor> loss_traj(const PlanOutput& pred, const Trajectory& gt, int* winner_out);

// Mean per-cell binary cross-entropy of auxiliary logits against a target
// in the same patch-major layout.
Tensor loss_bev(const Tensor& logits, const Tensor& target_patches);

// lambda1 * l_bev + lambda2 * (l_traj + l_score)
Tensor total_loss(const Tensor& l_bev, const Tensor& l_traj, const Tensor& l_score,
                  const TrainConfig& cfg);

// One precomputed training example: observation at the scenario start,
// ground-truth future grids for the oracle world model, the expert
// trajectory label, and the rasterized agents target for the auxiliary
// head.
struct TrainSample {
    ScenarioSpec spec;
    CurrentObservation obs;
    std::vector<OccupancyGrid> future_grids;
    Trajectory gt;          // T_f expert waypoints, planning frame
    Tensor bev_target;      // n_patches x p*p agents occupancy
    Tensor pooled_current;  // 1 x C_wm clean pooled encoding
    std::vector<double> cond;
};

TrainSample build_train_sample(const ScenarioSpec& spec, const ModelConfig& cfg,
                               const Tensor& projection);
std::vector<TrainSample> build_dataset(const std::vector<ScenarioSpec>& specs, const ModelConfig& cfg,
                                       const Tensor& projection);

struct TrainLogRow {
    long step = 0;
    LossBreakdown loss;
};

struct TrainResult {
    ParamMap params;
    std::vector<TrainLogRow> log;
    bool diverged = false;  // params hold the last epoch-boundary snapshot
};

// Forward pass + losses for one sample under the given parameters (used by
// both phases; `use_wm` enables the future stage when attached).
LossBreakdown sample_losses(const TrainSample& sample, const ParamMap& params, const TrainConfig& cfg,
                            const Tensor& projection, Rng& noise, bool use_wm);

// Phase 1: current-frame planner only; future-stage parameters must be
// absent. Deterministic in (config, dataset).
TrainResult train_phase1(const TrainConfig& cfg, const std::vector<TrainSample>& dataset);

// Phase 2: attaches the future stage with zero-initialized output
// projections and trains everything except the world model itself. For the
// learned lightweight predictor, its parameters are fitted up front and
// then frozen; the audit guarantees zero drift.
TrainResult train_phase2(const TrainConfig& cfg, const ParamMap& phase1_params,
                         const std::vector<TrainSample>& dataset);

// Names under the world-model registry (frozen during phase 2).
bool is_wm_param(const std::string& name);

// -- checkpoint io -----------------------------------------------------------

struct LoadedCheckpoint {
    ParamMap params;
    std::string config_json;
    std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const ParamMap& params, const std::string& config_json,
                     std::uint64_t seed);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace wa
