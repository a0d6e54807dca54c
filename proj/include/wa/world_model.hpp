#pragma once

// Future-feature source. The oracle mode encodes ground-truth future
// occupancy grids with a frozen seeded projection and corrupts them with
// schedule-controlled Gaussian noise: the denoising step t_d dials
// residual noise from sigma_max (t_d = 0) down to zero (t_d = T_total),
// standing in for reading out a generative world model mid-sampling. A
// learned two-layer predictor per future step provides the lightweight
// comparison model.

#include <cstdint>
#include <vector>

#include "wa/encoder.hpp"
#include "wa/model.hpp"
#include "wa/sim.hpp"

namespace wa {

struct DenoiseSchedule {
    enum class Shape { linear, cosine };
    int t_total = 100;
    double sigma_max = 1.0;
    Shape shape = Shape::linear;
};

double noise_sigma(int t_d, const DenoiseSchedule& schedule);

struct FutureFeatures {
    std::vector<Tensor> frames;   // T_wm entries, each (H'*W') x C_wm
    std::vector<int> frame_times; // strictly increasing from 1
    int t_d = 0;
};

// Frozen random projection from flattened p*p*3 patches to C_wm channels;
// fully determined by the seed and never trained.
Tensor frozen_grid_projection(std::uint64_t seed, int patch, int c_wm);

// One grid -> (H'*W') x C_wm feature map through the frozen projection.
Tensor encode_grid(const OccupancyGrid& grid, const Tensor& projection, int patch);

// Noise draws are taken before scaling, so a fixed `noise` stream yields
// the same epsilon for every t_d and the corruption shrinks monotonically.
FutureFeatures imagine_from_grids(const std::vector<OccupancyGrid>& grids, int t_d,
                                  const DenoiseSchedule& schedule, const Tensor& projection,
                                  int patch, Rng& noise);

// Oracle imagination: expert-rollout the scenario t_wm steps from `start`,
// encode each rendered future frame, add sigma(t_d)-scaled noise.
FutureFeatures imagine_future(const ScenarioSpec& spec, const WorldState& start, int t_wm, int t_d,
                              const DenoiseSchedule& schedule, const Tensor& projection,
                              const ModelConfig& cfg, Rng& noise);

// -- learned lightweight predictor ------------------------------------------

struct SimpleWmSample {
    Tensor pooled_current;              // 1 x C_wm mean-pooled clean encoding
    std::vector<double> cond;           // condition_vector of the ego status
    std::vector<Tensor> target_frames;  // clean future encodings
};

SimpleWmSample make_simple_wm_sample(const ScenarioSpec& spec, const WorldState& start,
                                     const Tensor& projection, const ModelConfig& cfg);

void init_simple_wm_params(ParamMap& params, Rng& rng, const ModelConfig& cfg);

// Deterministic prediction of all future frames from the pooled current
// encoding plus the condition vector.
FutureFeatures simple_wm_predict(const Tensor& pooled_current, const std::vector<double>& cond,
                                 const ParamMap& params, const ModelConfig& cfg);

// Squared-error fit with AdamW; returns the trained predictor parameters.
ParamMap simple_wm_fit(const std::vector<SimpleWmSample>& dataset, const ModelConfig& cfg,
                       std::uint64_t seed, int epochs, double lr = 1e-3);

double simple_wm_dataset_mse(const std::vector<SimpleWmSample>& dataset, const ParamMap& params,
                             const ModelConfig& cfg);

}  // namespace wa
