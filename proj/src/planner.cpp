#include "wa/planner.hpp"

#include <stdexcept>
#include <string>

namespace wa {

const char* wm_kind_name(WmKind kind) {
    switch (kind) {
        case WmKind::none: return "none";
        case WmKind::oracle: return "oracle";
        case WmKind::simple: return "simple";
    }
    throw std::logic_error("wm_kind_name: bad kind");
}

WmKind wm_kind_from_name(const std::string& name) {
    if (name == "none") return WmKind::none;
    if (name == "oracle") return WmKind::oracle;
    if (name == "simple") return WmKind::simple;
    throw std::invalid_argument("unknown world-model kind: " + name);
}

void init_planner_params(ParamMap& params, Rng& rng, const ModelConfig& cfg) {
    params.emplace("plan/qs", init_normal(rng, {cfg.m * cfg.t_f, cfg.c}, 0.02));
    init_attention(params, rng, "plan/s1/attn", cfg.c);
    init_mlp_block(params, rng, "plan/s1/mlp", cfg.c);
    init_linear(params, rng, "traj/fc1", cfg.c, cfg.c);
    init_linear(params, rng, "traj/fc2", cfg.c, 2);
    init_linear(params, rng, "score", cfg.c, 1);
    init_linear(params, rng, "bev/head", cfg.c, cfg.patch * cfg.patch);
}

void attach_wm_stage(ParamMap& params, Rng& rng, const ModelConfig& cfg) {
    if (has_wm_stage(params)) throw std::runtime_error("attach_wm_stage: already attached");
    init_linear(params, rng, "qf/in", cfg.c_wm, cfg.c);
    params.emplace("qf/queries", init_normal(rng, {cfg.n_wm, cfg.c}, 0.02));
    init_attention(params, rng, "qf/spat/attn", cfg.c, /*zero_out=*/true);
    init_mlp_block(params, rng, "qf/spat/mlp", cfg.c, /*zero_out=*/true);
    init_attention(params, rng, "qf/temp/attn", cfg.c, /*zero_out=*/true);
    init_mlp_block(params, rng, "qf/temp/mlp", cfg.c, /*zero_out=*/true);
    init_attention(params, rng, "plan/s2/attn", cfg.c, /*zero_out=*/true);
    init_mlp_block(params, rng, "plan/s2/mlp", cfg.c, /*zero_out=*/true);
}

bool has_wm_stage(const ParamMap& params) { return params.count("plan/s2/attn/ln_g") != 0; }

namespace {

Tensor tile_rows(const Tensor& row, int copies) {
    std::vector<Tensor> rows(static_cast<std::size_t>(copies), row);
    return concat_rows(rows);
}

}  // namespace

CompressedFuture wm_qformer(const FutureFeatures& future, const ParamMap& params,
                            const ModelConfig& cfg) {
    if (future.frames.empty()) throw std::invalid_argument("wm_qformer: no future frames");
    const Tensor& queries = param(params, "qf/queries");
    const int n_wm = queries.shape()[0];
    const int t_wm = static_cast<int>(future.frames.size());

    // spatial stage: per frame, queries (+ frame time embedding) attend to
    // the frame's projected feature tokens
    std::vector<Tensor> spatial;
    spatial.reserve(static_cast<std::size_t>(t_wm));
    for (int k = 0; k < t_wm; ++k) {
        const Tensor kv = linear(future.frames[static_cast<std::size_t>(k)], params, "qf/in");
        const Tensor e_wm = tile_rows(
            sinusoidal_embedding(future.frame_times[static_cast<std::size_t>(k)], cfg.c).reshaped({1, cfg.c}),
            n_wm);
        Tensor x = attention_block(queries, kv, params, "qf/spat/attn", cfg.heads, &e_wm);
        x = mlp_block(x, params, "qf/spat/mlp");
        spatial.push_back(x);
    }

    // temporal stage: per query index, self-attention across frames
    std::vector<Tensor> temporal;
    temporal.reserve(static_cast<std::size_t>(n_wm));
    for (int j = 0; j < n_wm; ++j) {
        std::vector<Tensor> track;
        track.reserve(static_cast<std::size_t>(t_wm));
        for (int k = 0; k < t_wm; ++k) {
            track.push_back(slice_rows(spatial[static_cast<std::size_t>(k)], j, j + 1));
        }
        Tensor x = concat_rows(track);
        x = self_attention_block(x, params, "qf/temp/attn", cfg.heads);
        x = mlp_block(x, params, "qf/temp/mlp");
        temporal.push_back(x);
    }

    // reassemble frame-major: frame k holds rows (k, j) for j = 0..N_wm-1
    std::vector<Tensor> frames;
    frames.reserve(static_cast<std::size_t>(t_wm));
    for (int k = 0; k < t_wm; ++k) {
        std::vector<Tensor> rows;
        rows.reserve(static_cast<std::size_t>(n_wm));
        for (int j = 0; j < n_wm; ++j) {
            rows.push_back(slice_rows(temporal[static_cast<std::size_t>(j)], k, k + 1));
        }
        frames.push_back(concat_rows(rows));
    }

    CompressedFuture out;
    out.tokens = concat_rows(frames);
    out.frame_times = future.frame_times;
    return out;
}

Tensor factorized_decode(const Tensor& queries, const CurrentFeatures& current,
                         const CompressedFuture* future, const ParamMap& params,
                         const ModelConfig& cfg) {
    if (queries.shape()[1] != current.tokens.shape()[1]) {
        throw std::invalid_argument("factorized_decode: query/feature width mismatch");
    }
    const int t_f = cfg.t_f;
    const int m = queries.shape()[0] / t_f;
    if (m * t_f != queries.shape()[0]) {
        throw std::invalid_argument("factorized_decode: query rows not divisible by horizon");
    }

    // stage 1: attend to the current frame
    Tensor x = attention_block(queries, current.tokens, params, "plan/s1/attn", cfg.heads);
    x = mlp_block(x, params, "plan/s1/mlp");

    // stage 2: attend to the compressed future with time embeddings
    if (future != nullptr) {
        if (future->tokens.shape()[1] != queries.shape()[1]) {
            throw std::invalid_argument("factorized_decode: future width mismatch");
        }
        const Tensor e_s = tile_rows(time_embedding_rows(t_f, cfg.c), m).reshaped({m * t_f, cfg.c});
        std::vector<Tensor> ewm_rows;
        const int n_wm = future->tokens.shape()[0] / static_cast<int>(future->frame_times.size());
        for (int t : future->frame_times) {
            ewm_rows.push_back(tile_rows(sinusoidal_embedding(t, cfg.c).reshaped({1, cfg.c}), n_wm));
        }
        const Tensor e_wm = concat_rows(ewm_rows);
        x = attention_block(x, future->tokens, params, "plan/s2/attn", cfg.heads, &e_s, &e_wm);
        x = mlp_block(x, params, "plan/s2/mlp");
    }
    return x;
}

PlanOutput decode_trajectories(const Tensor& refined, const ParamMap& params, const ModelConfig& cfg) {
    const int t_f = cfg.t_f;
    const int m = refined.shape()[0] / t_f;
    const Tensor hidden = gelu(linear(refined, params, "traj/fc1"));
    const Tensor offsets = linear(hidden, params, "traj/fc2");
    const Tensor waypoints = cumsum_blocks(offsets, t_f);
    const Tensor pooled = mean_blocks(refined, t_f);
    const Tensor logits = linear(pooled, params, "score");

    PlanOutput out;
    out.waypoints = waypoints;
    out.score_logits = logits;
    for (int mode = 0; mode < m; ++mode) {
        Trajectory traj;
        for (int t = 0; t < t_f; ++t) {
            const int row = mode * t_f + t;
            traj.points.push_back({waypoints.at(row, 0), waypoints.at(row, 1)});
        }
        out.trajectories.push_back(std::move(traj));
        out.mode_scores.push_back(logits.at(mode, 0));
    }
    out.selected = 0;
    for (int mode = 1; mode < m; ++mode) {
        if (out.mode_scores[static_cast<std::size_t>(mode)] >
            out.mode_scores[static_cast<std::size_t>(out.selected)]) {
            out.selected = mode;
        }
    }
    return out;
}

const Trajectory& select_mode(const PlanOutput& out) {
    if (out.trajectories.empty()) throw std::invalid_argument("select_mode: no modes");
    return out.trajectories[static_cast<std::size_t>(out.selected)];
}

PlanOutput plan(const ScenarioSpec& spec, const WorldState& state, const ParamMap& params,
                const ModelConfig& cfg, const PlanSettings& settings, const Tensor& projection,
                Rng& noise) {
    const CurrentObservation obs = observe(spec, state, cfg);
    const CurrentFeatures current = encode_current(obs, params, cfg);

    const bool use_wm = settings.wm != WmKind::none && has_wm_stage(params);
    CompressedFuture compressed;
    if (use_wm) {
        FutureFeatures future;
        if (settings.wm == WmKind::oracle) {
            future = imagine_future(spec, state, cfg.t_wm, settings.t_d, settings.schedule, projection,
                                    cfg, noise);
        } else {
            const Tensor encoded = encode_grid(obs.grid, projection, cfg.patch);
            const Tensor pooled = mean_blocks(encoded, encoded.shape()[0]);
            future = simple_wm_predict(pooled, condition_vector(obs.ego), params, cfg);
        }
        compressed = wm_qformer(future, params, cfg);
    }

    const Tensor refined = factorized_decode(param(params, "plan/qs"), current,
                                             use_wm ? &compressed : nullptr, params, cfg);
    return decode_trajectories(refined, params, cfg);
}

Tensor bev_head_logits(const CurrentFeatures& current, const ParamMap& params, const ModelConfig& cfg) {
    const Tensor patch_tokens = slice_rows(current.tokens, 0, cfg.n_patches());
    return linear(patch_tokens, params, "bev/head");
}

}  // namespace wa
