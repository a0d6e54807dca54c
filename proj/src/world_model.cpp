#include "wa/world_model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wa {

double noise_sigma(int t_d, const DenoiseSchedule& schedule) {
    if (t_d < 0 || t_d > schedule.t_total) {
        throw std::invalid_argument("noise_sigma: denoising step out of range");
    }
    const double frac = static_cast<double>(t_d) / schedule.t_total;
    switch (schedule.shape) {
        case DenoiseSchedule::Shape::linear:
            return schedule.sigma_max * (1.0 - frac);
        case DenoiseSchedule::Shape::cosine: {
            const double c = std::cos(M_PI * frac / 2.0);
            return schedule.sigma_max * c * c;
        }
    }
    throw std::logic_error("noise_sigma: unknown schedule shape");
}

Tensor frozen_grid_projection(std::uint64_t seed, int patch, int c_wm) {
    Rng rng(mix64(seed ^ 0xF07E9D2ULL));
    const int in_dim = patch * patch * 3;
    return init_normal(rng, {in_dim, c_wm}, 1.0 / std::sqrt(static_cast<double>(in_dim)));
}

Tensor encode_grid(const OccupancyGrid& grid, const Tensor& projection, int patch) {
    if (grid.h % patch != 0 || grid.w % patch != 0) {
        throw std::invalid_argument("encode_grid: grid dims not divisible by patch size");
    }
    return matmul(grid_to_patches(grid, patch), projection);
}

FutureFeatures imagine_from_grids(const std::vector<OccupancyGrid>& grids, int t_d,
                                  const DenoiseSchedule& schedule, const Tensor& projection,
                                  int patch, Rng& noise) {
    if (grids.empty()) throw std::invalid_argument("imagine_from_grids: no future grids");
    const double sigma = noise_sigma(t_d, schedule);
    FutureFeatures out;
    out.t_d = t_d;
    int t = 1;
    for (const OccupancyGrid& grid : grids) {
        Tensor clean = encode_grid(grid, projection, patch);
        auto& values = clean.values();
        // epsilon is drawn unconditionally so the stream position does not
        // depend on t_d
        for (auto& v : values) v += sigma * noise.normal();
        out.frames.push_back(clean);
        out.frame_times.push_back(t++);
    }
    return out;
}

FutureFeatures imagine_future(const ScenarioSpec& spec, const WorldState& start, int t_wm, int t_d,
                              const DenoiseSchedule& schedule, const Tensor& projection,
                              const ModelConfig& cfg, Rng& noise) {
    const FutureRollout roll = rollout_future(spec, start, t_wm, cfg.grid_h, cfg.grid_w);
    return imagine_from_grids(roll.grids, t_d, schedule, projection, cfg.patch, noise);
}

SimpleWmSample make_simple_wm_sample(const ScenarioSpec& spec, const WorldState& start,
                                     const Tensor& projection, const ModelConfig& cfg) {
    SimpleWmSample sample;
    const OccupancyGrid current = render_bev(spec, start, cfg.grid_h, cfg.grid_w);
    const Tensor encoded = encode_grid(current, projection, cfg.patch);
    sample.pooled_current = mean_blocks(encoded, encoded.shape()[0]);
    sample.cond = condition_vector(ego_status(spec, start));
    const FutureRollout roll = rollout_future(spec, start, cfg.t_wm, cfg.grid_h, cfg.grid_w);
    for (const OccupancyGrid& grid : roll.grids) {
        sample.target_frames.push_back(encode_grid(grid, projection, cfg.patch));
    }
    return sample;
}

namespace {

constexpr int kSimpleWmHidden = 64;

Tensor simple_wm_input(const Tensor& pooled_current, const std::vector<double>& cond) {
    std::vector<double> in = pooled_current.values();
    in.insert(in.end(), cond.begin(), cond.end());
    const int width = static_cast<int>(in.size());
    return Tensor({1, width}, std::move(in));
}

}  // namespace

void init_simple_wm_params(ParamMap& params, Rng& rng, const ModelConfig& cfg) {
    const int in_dim = cfg.c_wm + 5;
    const int out_dim = cfg.n_patches() * cfg.c_wm;
    for (int k = 0; k < cfg.t_wm; ++k) {
        const std::string prefix = "simple_wm/step" + std::to_string(k);
        init_linear(params, rng, prefix + "/fc1", in_dim, kSimpleWmHidden);
        init_linear(params, rng, prefix + "/fc2", kSimpleWmHidden, out_dim);
    }
}

FutureFeatures simple_wm_predict(const Tensor& pooled_current, const std::vector<double>& cond,
                                 const ParamMap& params, const ModelConfig& cfg) {
    const Tensor in = simple_wm_input(pooled_current, cond);
    FutureFeatures out;
    out.t_d = -1;  // not a denoised readout
    for (int k = 0; k < cfg.t_wm; ++k) {
        const std::string prefix = "simple_wm/step" + std::to_string(k);
        const Tensor hidden = gelu(linear(in, params, prefix + "/fc1"));
        const Tensor flat = linear(hidden, params, prefix + "/fc2");
        out.frames.push_back(flat.reshaped({cfg.n_patches(), cfg.c_wm}));
        out.frame_times.push_back(k + 1);
    }
    return out;
}

ParamMap simple_wm_fit(const std::vector<SimpleWmSample>& dataset, const ModelConfig& cfg,
                       std::uint64_t seed, int epochs, double lr) {
    if (dataset.empty()) throw std::invalid_argument("simple_wm_fit: empty dataset");
    Rng rng(mix64(seed ^ 0x51A91EULL));
    ParamMap params;
    init_simple_wm_params(params, rng, cfg);

    AdamWHyper hp;
    hp.lr = lr;
    AdamW opt(hp);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (const SimpleWmSample& sample : dataset) {
            Tape tape;
            ParamMap live = bind_params(tape, params);
            const FutureFeatures pred = simple_wm_predict(sample.pooled_current, sample.cond, live, cfg);
            std::vector<Tensor> losses;
            for (int k = 0; k < cfg.t_wm; ++k) {
                losses.push_back(mse_mean(pred.frames[static_cast<std::size_t>(k)],
                                          sample.target_frames[static_cast<std::size_t>(k)]));
            }
            Tensor loss = losses[0];
            for (std::size_t k = 1; k < losses.size(); ++k) loss = add(loss, losses[k]);
            loss = scale(loss, 1.0 / static_cast<double>(losses.size()));
            if (!loss.all_finite()) throw std::runtime_error("simple_wm_fit: non-finite loss");
            tape.backward(loss);
            opt.step(params, collect_grads(tape, live));
        }
    }
    return params;
}

double simple_wm_dataset_mse(const std::vector<SimpleWmSample>& dataset, const ParamMap& params,
                             const ModelConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("simple_wm_dataset_mse: empty dataset");
    double total = 0.0;
    long count = 0;
    for (const SimpleWmSample& sample : dataset) {
        const FutureFeatures pred = simple_wm_predict(sample.pooled_current, sample.cond, params, cfg);
        for (int k = 0; k < cfg.t_wm; ++k) {
            const auto& p = pred.frames[static_cast<std::size_t>(k)].values();
            const auto& t = sample.target_frames[static_cast<std::size_t>(k)].values();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double d = p[i] - t[i];
                total += d * d;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace wa
