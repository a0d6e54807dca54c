#include "wa/encoder.hpp"

#include <stdexcept>
#include <string>

namespace wa {

CurrentObservation observe(const ScenarioSpec& spec, const WorldState& state, const ModelConfig& cfg) {
    CurrentObservation obs;
    obs.grid = render_bev(spec, state, cfg.grid_h, cfg.grid_w);
    obs.ranges = raycast_ranges(spec, state, cfg.n_rays);
    obs.ego = ego_status(spec, state);
    return obs;
}

std::vector<double> condition_vector(const EgoStatus& ego) {
    std::vector<double> cond(5, 0.0);
    cond[static_cast<std::size_t>(ego.command)] = 1.0;
    cond[3] = ego.speed / 10.0;
    cond[4] = ego.yaw_rate;
    return cond;
}

Tensor channel_to_patches(const std::vector<double>& channel, int h, int w, int patch) {
    if (h % patch != 0 || w % patch != 0) {
        throw std::invalid_argument("grid dims not divisible by patch size");
    }
    const int ph = h / patch, pw = w / patch;
    std::vector<double> out;
    out.reserve(channel.size());
    for (int pr = 0; pr < ph; ++pr) {
        for (int pc = 0; pc < pw; ++pc) {
            for (int r = 0; r < patch; ++r) {
                for (int c = 0; c < patch; ++c) {
                    out.push_back(channel[static_cast<std::size_t>((pr * patch + r) * w + pc * patch + c)]);
                }
            }
        }
    }
    return Tensor({ph * pw, patch * patch}, std::move(out));
}

Tensor grid_to_patches(const OccupancyGrid& grid, int patch) {
    const Tensor drivable = channel_to_patches(grid.drivable, grid.h, grid.w, patch);
    const Tensor agents = channel_to_patches(grid.agents, grid.h, grid.w, patch);
    const Tensor ego = channel_to_patches(grid.ego, grid.h, grid.w, patch);
    return concat_cols({drivable, agents, ego});
}

void init_encoder_params(ParamMap& params, Rng& rng, const ModelConfig& cfg) {
    const int c = cfg.c;
    init_linear(params, rng, "enc/patch", cfg.patch * cfg.patch * 3, c);
    params.emplace("enc/pos", init_normal(rng, {cfg.n_patches(), c}, 0.02));
    init_linear(params, rng, "enc/range", cfg.n_rays, c);
    init_linear(params, rng, "enc/ego", 6, c);
    for (int b = 0; b < cfg.enc_blocks; ++b) {
        const std::string prefix = "enc/blk" + std::to_string(b);
        init_attention(params, rng, prefix + "/attn", c);
        init_mlp_block(params, rng, prefix + "/mlp", c);
    }
}

CurrentFeatures encode_current(const CurrentObservation& obs, const ParamMap& params,
                               const ModelConfig& cfg) {
    if (obs.grid.h != cfg.grid_h || obs.grid.w != cfg.grid_w) {
        throw std::invalid_argument("encode_current: grid size does not match config");
    }
    if (static_cast<int>(obs.ranges.size()) != cfg.n_rays) {
        throw std::invalid_argument("encode_current: ray count does not match config");
    }

    const Tensor patches = grid_to_patches(obs.grid, cfg.patch);
    Tensor patch_tokens = add(linear(patches, params, "enc/patch"), param(params, "enc/pos"));

    std::vector<double> normalized(obs.ranges.size());
    for (std::size_t i = 0; i < obs.ranges.size(); ++i) normalized[i] = obs.ranges[i] / kRayMax;
    const Tensor range_in(std::vector<int>{1, cfg.n_rays}, std::move(normalized));
    const Tensor range_token = linear(range_in, params, "enc/range");

    std::vector<double> ego_in = condition_vector(obs.ego);
    ego_in.push_back(obs.ego.accel / kAccelMax);
    const Tensor ego_token = linear(Tensor({1, 6}, std::move(ego_in)), params, "enc/ego");

    Tensor tokens = concat_rows({patch_tokens, range_token, ego_token});
    for (int b = 0; b < cfg.enc_blocks; ++b) {
        const std::string prefix = "enc/blk" + std::to_string(b);
        tokens = self_attention_block(tokens, params, prefix + "/attn", cfg.heads);
        tokens = mlp_block(tokens, params, prefix + "/mlp");
    }

    CurrentFeatures out;
    out.tokens = tokens;
    out.n_patch_tokens = cfg.n_patches();
    return out;
}

}  // namespace wa
