#pragma once

// Current-frame encoder: turns the ego-centric occupancy grid, range scan
// and ego status into a token sequence (patch tokens, one range token, one
// ego token) refined by a small pre-norm transformer.

#include <vector>

#include "wa/model.hpp"
#include "wa/sim.hpp"

namespace wa {

struct CurrentObservation {
    OccupancyGrid grid;
    std::vector<double> ranges;
    EgoStatus ego;
};

struct CurrentFeatures {
    Tensor tokens;  // n_tokens x C; patch tokens first, then range, then ego
    int n_patch_tokens = 0;
};

// Gathers the planner inputs at the current world state.
CurrentObservation observe(const ScenarioSpec& spec, const WorldState& state, const ModelConfig& cfg);

// command one-hot (keep, left, right) + normalized speed and yaw rate
std::vector<double> condition_vector(const EgoStatus& ego);

// p x p patches of all three grid channels, one row per patch
// (row-major over the patch grid), columns = p*p*3 flattened values.
Tensor grid_to_patches(const OccupancyGrid& grid, int patch);
// Same patch layout for a single channel (used as rasterized targets).
Tensor channel_to_patches(const std::vector<double>& channel, int h, int w, int patch);

void init_encoder_params(ParamMap& params, Rng& rng, const ModelConfig& cfg);

CurrentFeatures encode_current(const CurrentObservation& obs, const ParamMap& params,
                               const ModelConfig& cfg);

}  // namespace wa
