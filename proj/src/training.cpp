#include "wa/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace wa {

std::string train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["model"] = {{"grid_h", cfg.model.grid_h}, {"grid_w", cfg.model.grid_w},
                  {"patch", cfg.model.patch},   {"n_rays", cfg.model.n_rays},
                  {"c", cfg.model.c},           {"c_wm", cfg.model.c_wm},
                  {"m", cfg.model.m},           {"t_f", cfg.model.t_f},
                  {"t_wm", cfg.model.t_wm},     {"n_wm", cfg.model.n_wm},
                  {"heads", cfg.model.heads},   {"enc_blocks", cfg.model.enc_blocks}};
    j["lambda1"] = cfg.lambda1;
    j["lambda2"] = cfg.lambda2;
    j["lr"] = cfg.lr;
    j["phase1_epochs"] = cfg.phase1_epochs;
    j["phase2_epochs"] = cfg.phase2_epochs;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["t_d"] = cfg.t_d;
    j["schedule"] = {{"t_total", cfg.schedule.t_total},
                     {"sigma_max", cfg.schedule.sigma_max},
                     {"shape", cfg.schedule.shape == DenoiseSchedule::Shape::linear ? "linear" : "cosine"}};
    j["wm_kind"] = wm_kind_name(cfg.wm_kind);
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    TrainConfig cfg;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        cfg.model.grid_h = m.value("grid_h", cfg.model.grid_h);
        cfg.model.grid_w = m.value("grid_w", cfg.model.grid_w);
        cfg.model.patch = m.value("patch", cfg.model.patch);
        cfg.model.n_rays = m.value("n_rays", cfg.model.n_rays);
        cfg.model.c = m.value("c", cfg.model.c);
        cfg.model.c_wm = m.value("c_wm", cfg.model.c_wm);
        cfg.model.m = m.value("m", cfg.model.m);
        cfg.model.t_f = m.value("t_f", cfg.model.t_f);
        cfg.model.t_wm = m.value("t_wm", cfg.model.t_wm);
        cfg.model.n_wm = m.value("n_wm", cfg.model.n_wm);
        cfg.model.heads = m.value("heads", cfg.model.heads);
        cfg.model.enc_blocks = m.value("enc_blocks", cfg.model.enc_blocks);
    }
    cfg.lambda1 = j.value("lambda1", cfg.lambda1);
    cfg.lambda2 = j.value("lambda2", cfg.lambda2);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.phase1_epochs = j.value("phase1_epochs", cfg.phase1_epochs);
    cfg.phase2_epochs = j.value("phase2_epochs", cfg.phase2_epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.t_d = j.value("t_d", cfg.t_d);
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        cfg.schedule.t_total = s.value("t_total", cfg.schedule.t_total);
        cfg.schedule.sigma_max = s.value("sigma_max", cfg.schedule.sigma_max);
        cfg.schedule.shape = s.value("shape", std::string("linear")) == "cosine"
                                 ? DenoiseSchedule::Shape::cosine
                                 : DenoiseSchedule::Shape::linear;
    }
    cfg.wm_kind = wm_kind_from_name(j.value("wm_kind", std::string("oracle")));
    return cfg;
}

std::pair<Tensor, Tensor> loss_traj(const PlanOutput& pred, const Trajectory& gt, int* winner_out) {
    const int m = static_cast<int>(pred.trajectories.size());
    const int t_f = static_cast<int>(gt.points.size());
    if (m < 1) throw std::invalid_argument("loss_traj: no modes");
    if (static_cast<int>(pred.trajectories[0].points.size()) != t_f) {
        throw std::invalid_argument("loss_traj: horizon mismatch");
    }

    int winner = 0;
    double best = 1e300;
    for (int mode = 0; mode < m; ++mode) {
        double dist = 0.0;
        for (int t = 0; t < t_f; ++t) {
            const Vec2 d = pred.trajectories[static_cast<std::size_t>(mode)].points[static_cast<std::size_t>(t)] -
                           gt.points[static_cast<std::size_t>(t)];
            dist += d.norm();
        }
        if (dist < best) {
            best = dist;
            winner = mode;
        }
    }
    if (winner_out != nullptr) *winner_out = winner;

    std::vector<double> target;
    target.reserve(static_cast<std::size_t>(t_f) * 2);
    for (const Vec2& p : gt.points) {
        target.push_back(p.x);
        target.push_back(p.y);
    }
    const Tensor gt_rows({t_f, 2}, std::move(target));
    const Tensor winner_rows = slice_rows(pred.waypoints, winner * t_f, (winner + 1) * t_f);
    // per-waypoint x and y terms summed, averaged over steps
    const Tensor l_traj = scale(smooth_l1_mean(winner_rows, gt_rows), 2.0);
    const Tensor l_score = cross_entropy_index(pred.score_logits, winner);
    return {l_traj, l_score};
}

Tensor loss_bev(const Tensor& logits, const Tensor& target_patches) {
    if (logits.shape() != target_patches.shape()) {
        throw std::invalid_argument("loss_bev: logits/target shape mismatch");
    }
    return bce_logits_mean(logits, target_patches);
}

Tensor total_loss(const Tensor& l_bev, const Tensor& l_traj, const Tensor& l_score,
                  const TrainConfig& cfg) {
    return add(scale(l_bev, cfg.lambda1), scale(add(l_traj, l_score), cfg.lambda2));
}

TrainSample build_train_sample(const ScenarioSpec& spec, const ModelConfig& cfg,
                               const Tensor& projection) {
    TrainSample sample;
    sample.spec = spec;
    const WorldState start = init_world(spec);
    sample.obs = observe(spec, start, cfg);
    const int steps = std::max(cfg.t_f, cfg.t_wm);
    const FutureRollout roll = rollout_future(spec, start, steps, cfg.grid_h, cfg.grid_w);
    sample.future_grids.assign(roll.grids.begin(), roll.grids.begin() + cfg.t_wm);
    sample.gt.points.assign(roll.expert.points.begin(), roll.expert.points.begin() + cfg.t_f);
    sample.bev_target = channel_to_patches(sample.obs.grid.agents, cfg.grid_h, cfg.grid_w, cfg.patch);
    const Tensor encoded = encode_grid(sample.obs.grid, projection, cfg.patch);
    sample.pooled_current = mean_blocks(encoded, encoded.shape()[0]);
    sample.cond = condition_vector(sample.obs.ego);
    return sample;
}

std::vector<TrainSample> build_dataset(const std::vector<ScenarioSpec>& specs, const ModelConfig& cfg,
                                       const Tensor& projection) {
    std::vector<TrainSample> dataset;
    dataset.reserve(specs.size());
    for (const ScenarioSpec& spec : specs) dataset.push_back(build_train_sample(spec, cfg, projection));
    return dataset;
}

bool is_wm_param(const std::string& name) { return name.rfind("simple_wm/", 0) == 0; }

namespace {

struct ForwardLosses {
    Tensor total, l_bev, l_traj, l_score;
};

ForwardLosses forward_losses(const TrainSample& sample, const ParamMap& params, const TrainConfig& cfg,
                             const Tensor& projection, Rng& noise, bool use_wm) {
    const CurrentFeatures current = encode_current(sample.obs, params, cfg.model);
    const Tensor bev_logits = bev_head_logits(current, params, cfg.model);
    const Tensor l_bev = loss_bev(bev_logits, sample.bev_target);

    CompressedFuture compressed;
    const CompressedFuture* future_ptr = nullptr;
    if (use_wm) {
        FutureFeatures future;
        if (cfg.wm_kind == WmKind::simple) {
            future = simple_wm_predict(sample.pooled_current, sample.cond, params, cfg.model);
        } else {
            future = imagine_from_grids(sample.future_grids, cfg.t_d, cfg.schedule, projection,
                                        cfg.model.patch, noise);
        }
        compressed = wm_qformer(future, params, cfg.model);
        future_ptr = &compressed;
    }

    const Tensor refined = factorized_decode(param(params, "plan/qs"), current, future_ptr, params,
                                             cfg.model);
    const PlanOutput pred = decode_trajectories(refined, params, cfg.model);
    auto [l_traj, l_score] = loss_traj(pred, sample.gt, nullptr);
    const Tensor total = total_loss(l_bev, l_traj, l_score, cfg);
    return {total, l_bev, l_traj, l_score};
}

// Shared minibatch loop for both phases. `trainable` receives optimizer
// updates; `frozen` participates in the forward pass only.
TrainResult run_training(const TrainConfig& cfg, int epochs, ParamMap trainable, ParamMap frozen,
                         const std::vector<TrainSample>& dataset, const Tensor& projection,
                         bool use_wm) {
    if (dataset.empty()) throw std::invalid_argument("training: empty dataset");
    if (cfg.batch_size < 1) throw std::invalid_argument("training: batch size must be positive");

    AdamWHyper hp;
    hp.lr = cfg.lr;
    AdamW opt(hp);

    TrainResult result;
    ParamMap last_good = clone_params(trainable);
    long step = 0;
    const int n = static_cast<int>(dataset.size());

    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (int begin = 0; begin < n; begin += cfg.batch_size) {
            const int end = std::min(n, begin + cfg.batch_size);
            Tape tape;
            ParamMap live = bind_params(tape, trainable);
            for (const auto& [name, tensor] : frozen) live.emplace(name, tape.leaf(tensor));

            Tensor batch_total;
            LossBreakdown sums;
            for (int i = begin; i < end; ++i) {
                Rng noise(mix64(hash_combine(cfg.seed, 0x9E11ULL + static_cast<std::uint64_t>(step) * 4096 +
                                                           static_cast<std::uint64_t>(i - begin))));
                const ForwardLosses fl = forward_losses(dataset[static_cast<std::size_t>(i)], live, cfg,
                                                        projection, noise, use_wm);
                batch_total = (i == begin) ? fl.total : add(batch_total, fl.total);
                sums.l_bev += fl.l_bev.value();
                sums.l_traj += fl.l_traj.value();
                sums.l_score += fl.l_score.value();
                sums.total += fl.total.value();
            }
            const double inv = 1.0 / static_cast<double>(end - begin);
            batch_total = scale(batch_total, inv);

            TrainLogRow row;
            row.step = step;
            row.loss = {sums.total * inv, sums.l_bev * inv, sums.l_traj * inv, sums.l_score * inv};
            result.log.push_back(row);

            if (!batch_total.all_finite() || !std::isfinite(row.loss.total)) {
                result.diverged = true;
                result.params = std::move(last_good);
                return result;
            }

            tape.backward(batch_total);
            auto grads = collect_grads(tape, live);
            for (const auto& [name, tensor] : frozen) grads.erase(name);
            opt.step(trainable, grads);
            ++step;

            // a finite loss can still produce an overflowing update
            for (const auto& [name, tensor] : trainable) {
                if (!tensor.all_finite()) {
                    result.diverged = true;
                    result.params = std::move(last_good);
                    return result;
                }
            }
        }
        last_good = clone_params(trainable);
    }

    result.params = std::move(trainable);
    for (auto& [name, tensor] : frozen) result.params.emplace(name, tensor);
    return result;
}

}  // namespace

LossBreakdown sample_losses(const TrainSample& sample, const ParamMap& params, const TrainConfig& cfg,
                            const Tensor& projection, Rng& noise, bool use_wm) {
    const ForwardLosses fl = forward_losses(sample, params, cfg, projection, noise, use_wm);
    return {fl.total.value(), fl.l_bev.value(), fl.l_traj.value(), fl.l_score.value()};
}

TrainResult train_phase1(const TrainConfig& cfg, const std::vector<TrainSample>& dataset) {
    Rng rng(mix64(cfg.seed ^ 0x9A5E1ULL));
    ParamMap params;
    init_encoder_params(params, rng, cfg.model);
    init_planner_params(params, rng, cfg.model);
    if (has_wm_stage(params)) throw std::logic_error("train_phase1: future stage must be absent");
    const Tensor projection = frozen_grid_projection(cfg.seed, cfg.model.patch, cfg.model.c_wm);
    return run_training(cfg, cfg.phase1_epochs, std::move(params), {}, dataset, projection,
                        /*use_wm=*/false);
}

TrainResult train_phase2(const TrainConfig& cfg, const ParamMap& phase1_params,
                         const std::vector<TrainSample>& dataset) {
    if (has_wm_stage(phase1_params)) {
        throw std::invalid_argument("train_phase2: input already carries the future stage");
    }
    ParamMap params = clone_params(phase1_params);
    Rng rng(mix64(cfg.seed ^ 0x9A5E2ULL));
    attach_wm_stage(params, rng, cfg.model);
    const Tensor projection = frozen_grid_projection(cfg.seed, cfg.model.patch, cfg.model.c_wm);

    ParamMap frozen;
    if (cfg.wm_kind == WmKind::simple) {
        std::vector<SimpleWmSample> wm_data;
        wm_data.reserve(dataset.size());
        for (const TrainSample& sample : dataset) {
            SimpleWmSample s;
            s.pooled_current = sample.pooled_current;
            s.cond = sample.cond;
            for (const OccupancyGrid& grid : sample.future_grids) {
                s.target_frames.push_back(encode_grid(grid, projection, cfg.model.patch));
            }
            wm_data.push_back(std::move(s));
        }
        frozen = simple_wm_fit(wm_data, cfg.model, cfg.seed, /*epochs=*/20);
    }

    const ParamMap frozen_before = clone_params(frozen);
    TrainResult result = run_training(cfg, cfg.phase2_epochs, std::move(params), frozen, dataset,
                                      projection, /*use_wm=*/cfg.wm_kind != WmKind::none);

    if (!frozen_before.empty()) {
        ParamMap frozen_after;
        for (const auto& [name, tensor] : result.params) {
            if (is_wm_param(name)) frozen_after.emplace(name, tensor);
        }
        if (total_abs_difference(frozen_before, frozen_after) != 0.0) {
            throw std::logic_error("train_phase2: frozen world-model parameters drifted");
        }
    }
    return result;
}

// -- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[7] = {'W', 'A', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(out, bits);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& in) {
    const std::uint64_t bits = read_u64(in);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamMap& params, const std::string& config_json,
                     std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    write_u64(out, seed);
    write_u32(out, static_cast<std::uint32_t>(config_json.size()));
    out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {  // std::map: name-sorted
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(tensor.ndim()));
        for (int d : tensor.shape()) write_u32(out, static_cast<std::uint32_t>(d));
        for (double v : tensor.values()) write_f64(out, v);
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[sizeof(kMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint format: bad magic");
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint format: unsupported version " + std::to_string(version));
    }
    LoadedCheckpoint ckpt;
    ckpt.seed = read_u64(in);
    const std::uint32_t config_len = read_u32(in);
    ckpt.config_json.resize(config_len);
    if (config_len > 0 && !in.read(ckpt.config_json.data(), config_len)) {
        throw std::runtime_error("checkpoint truncated");
    }
    const std::uint32_t count = read_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw std::runtime_error("checkpoint truncated");
        const std::uint32_t ndim = read_u32(in);
        std::vector<int> shape;
        int size = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape.push_back(static_cast<int>(read_u32(in)));
            size *= shape.back();
        }
        std::vector<double> values(static_cast<std::size_t>(size));
        for (auto& v : values) v = read_f64(in);
        ckpt.params.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return ckpt;
}

}  // namespace wa
