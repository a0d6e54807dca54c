#pragma once

// Trajectory decoder: learnable (mode, step) state queries cross-attend to
// current-frame tokens, then to a query-compressed view of imagined future
// features, and a shared per-token head emits waypoint offsets that
// cumulative-sum into multi-mode trajectories with learned mode scores.

#include <vector>

#include "wa/encoder.hpp"
#include "wa/model.hpp"
#include "wa/sim.hpp"
#include "wa/world_model.hpp"

namespace wa {

enum class WmKind { none, oracle, simple };
const char* wm_kind_name(WmKind kind);
WmKind wm_kind_from_name(const std::string& name);

struct CompressedFuture {
    Tensor tokens;  // (T_wm * N_wm) x C, frame-major rows
    std::vector<int> frame_times;
};

struct PlanOutput {
    std::vector<Trajectory> trajectories;  // M entries, ego-frame waypoints
    std::vector<double> mode_scores;       // M logits
    int selected = 0;                      // argmax score, lowest index on ties
    Tensor waypoints;                      // (M * T_f) x 2, autodiff-visible
    Tensor score_logits;                   // M x 1, autodiff-visible
};

// Stage-1 planner parameters: state queries, current-frame cross
// attention, trajectory and score heads (plus the BEV auxiliary head).
void init_planner_params(ParamMap& params, Rng& rng, const ModelConfig& cfg);

// Phase-2 attachment: future-feature compressor and the second decode
// stage. Output projections start at zero so outputs are unchanged until
// training moves them.
void attach_wm_stage(ParamMap& params, Rng& rng, const ModelConfig& cfg);
bool has_wm_stage(const ParamMap& params);

// Spatial stage: per frame, learnable queries (+ frame time embedding)
// cross-attend to that frame's feature tokens. Temporal stage: per query
// index, self-attention across frames. One pre-norm block each.
CompressedFuture wm_qformer(const FutureFeatures& future, const ParamMap& params,
                            const ModelConfig& cfg);

// Cross-attention of the flattened M*T_f state queries over current
// tokens, then (when a compressed future is supplied) over future tokens
// with additive time embeddings on both sides.
Tensor factorized_decode(const Tensor& queries, const CurrentFeatures& current,
                         const CompressedFuture* future, const ParamMap& params,
                         const ModelConfig& cfg);

PlanOutput decode_trajectories(const Tensor& refined, const ParamMap& params, const ModelConfig& cfg);

const Trajectory& select_mode(const PlanOutput& out);

struct PlanSettings {
    WmKind wm = WmKind::none;
    int t_d = 100;
    DenoiseSchedule schedule;
};

// Full inference composition over one observation. `projection` is the
// frozen grid encoder; `noise` drives the oracle corruption draw.
PlanOutput plan(const ScenarioSpec& spec, const WorldState& state, const ParamMap& params,
                const ModelConfig& cfg, const PlanSettings& settings, const Tensor& projection,
                Rng& noise);

// BEV auxiliary logits from current patch tokens (one value per grid cell,
// patch-major layout matching channel_to_patches).
Tensor bev_head_logits(const CurrentFeatures& current, const ParamMap& params, const ModelConfig& cfg);

}  // namespace wa
