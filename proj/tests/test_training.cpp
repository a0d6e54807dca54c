#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "wa/scenario_gen.hpp"
#include "wa/training.hpp"

using namespace wa;

namespace {

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.model.c = 32;
    cfg.model.c_wm = 16;
    cfg.model.enc_blocks = 1;
    cfg.model.m = 2;
    cfg.model.t_f = 4;
    cfg.model.t_wm = 2;
    cfg.model.n_wm = 2;
    cfg.batch_size = 8;
    cfg.seed = 3;
    return cfg;
}

std::vector<TrainSample> small_dataset(const TrainConfig& cfg, int count) {
    std::vector<ScenarioSpec> specs;
    const ScenarioKind kinds[] = {ScenarioKind::straight, ScenarioKind::lead_brake,
                                  ScenarioKind::crossing};
    for (int i = 0; i < count; ++i) {
        specs.push_back(generate_scenario(100 + static_cast<std::uint64_t>(i), kinds[i % 3]));
    }
    const Tensor projection = frozen_grid_projection(cfg.seed, cfg.model.patch, cfg.model.c_wm);
    return build_dataset(specs, cfg.model, projection);
}

// hand-built two-mode prediction where each mode tracks gt plus a constant
// per-waypoint offset
PlanOutput offset_modes(const Trajectory& gt, Vec2 offset_a, Vec2 offset_b, double score_a,
                        double score_b) {
    PlanOutput out;
    const int t_f = static_cast<int>(gt.points.size());
    std::vector<double> wp;
    for (const Vec2 off : {offset_a, offset_b}) {
        Trajectory traj;
        for (const Vec2& p : gt.points) {
            traj.points.push_back({p.x + off.x, p.y + off.y});
            wp.push_back(p.x + off.x);
            wp.push_back(p.y + off.y);
        }
        out.trajectories.push_back(std::move(traj));
    }
    out.waypoints = Tensor({2 * t_f, 2}, std::move(wp));
    out.score_logits = Tensor({2, 1}, {score_a, score_b});
    out.mode_scores = {score_a, score_b};
    out.selected = score_b > score_a ? 1 : 0;
    return out;
}

Trajectory straight_gt(int t_f) {
    Trajectory gt;
    for (int t = 1; t <= t_f; ++t) gt.points.push_back({3.0 * t, 0.1 * t});
    return gt;
}

ParamMap phase1_style_init(const TrainConfig& cfg) {
    Rng rng(mix64(cfg.seed ^ 0x9A5E1ULL));
    ParamMap params;
    init_encoder_params(params, rng, cfg.model);
    init_planner_params(params, rng, cfg.model);
    return params;
}

}  // namespace

TEST_CASE("train config survives a json round trip") {
    TrainConfig cfg;
    cfg.model.c = 48;
    cfg.model.t_f = 6;
    cfg.model.t_wm = 7;
    cfg.model.m = 3;
    cfg.lambda1 = 0.25;
    cfg.lambda2 = 2.5;
    cfg.lr = 5e-4;
    cfg.phase1_epochs = 11;
    cfg.phase2_epochs = 4;
    cfg.batch_size = 3;
    cfg.seed = 99;
    cfg.t_d = 42;
    cfg.schedule.sigma_max = 0.7;
    cfg.schedule.shape = DenoiseSchedule::Shape::cosine;
    cfg.wm_kind = WmKind::simple;

    const TrainConfig back = train_config_from_json(train_config_to_json(cfg));
    CHECK(back.model.c == 48);
    CHECK(back.model.t_f == 6);
    CHECK(back.model.t_wm == 7);
    CHECK(back.model.m == 3);
    CHECK(back.lambda1 == 0.25);
    CHECK(back.lambda2 == 2.5);
    CHECK(back.lr == 5e-4);
    CHECK(back.phase1_epochs == 11);
    CHECK(back.phase2_epochs == 4);
    CHECK(back.batch_size == 3);
    CHECK(back.seed == 99);
    CHECK(back.t_d == 42);
    CHECK(back.schedule.sigma_max == 0.7);
    CHECK(back.schedule.shape == DenoiseSchedule::Shape::cosine);
    CHECK(back.wm_kind == WmKind::simple);

    // an empty object falls back to defaults
    const TrainConfig defaults = train_config_from_json("{}");
    CHECK(defaults.model.c == 64);
    CHECK(defaults.wm_kind == WmKind::oracle);
}

TEST_CASE("trajectory loss picks the closest mode and scores it") {
    const Trajectory gt = straight_gt(4);

    // mode 0 sits exactly on the target
    const PlanOutput exact = offset_modes(gt, {0, 0}, {2, 0}, 0.3, 0.9);
    int winner = -1;
    auto [l_traj, l_score] = loss_traj(exact, gt, &winner);
    CHECK(winner == 0);
    CHECK(l_traj.value() == 0.0);
    // cross entropy of logits (0.3, 0.9) at index 0
    const double expect_ce = -0.3 + std::log(std::exp(0.3) + std::exp(0.9));
    CHECK(l_score.value() == doctest::Approx(expect_ce).epsilon(1e-12));

    // constant offsets of 1 m and 2 m: the closer mode wins with loss 0.5
    const PlanOutput near_far = offset_modes(gt, {1, 0}, {2, 0}, 0.0, 0.0);
    auto [l1, s1] = loss_traj(near_far, gt, &winner);
    CHECK(winner == 0);
    CHECK(l1.value() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s1.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const PlanOutput far_near = offset_modes(gt, {2, 0}, {1, 0}, 0.0, 0.0);
    auto [l2, s2] = loss_traj(far_near, gt, &winner);
    CHECK(winner == 1);
    CHECK(l2.value() == doctest::Approx(0.5).epsilon(1e-12));

    Trajectory short_gt = gt;
    short_gt.points.pop_back();
    CHECK_THROWS_AS(loss_traj(near_far, short_gt, nullptr), std::invalid_argument);
}

TEST_CASE("single-mode score loss is exactly zero") {
    const Trajectory gt = straight_gt(3);
    PlanOutput solo;
    std::vector<double> wp;
    Trajectory traj;
    for (const Vec2& p : gt.points) {
        traj.points.push_back({p.x + 0.5, p.y});
        wp.push_back(p.x + 0.5);
        wp.push_back(p.y);
    }
    solo.trajectories.push_back(traj);
    solo.waypoints = Tensor({3, 2}, std::move(wp));
    solo.score_logits = Tensor({1, 1}, {1.7});
    solo.mode_scores = {1.7};
    auto [l_traj, l_score] = loss_traj(solo, gt, nullptr);
    CHECK(l_score.value() == 0.0);
    CHECK(l_traj.value() > 0.0);
}

TEST_CASE("rasterization loss matches a naive per-cell computation") {
    Rng rng(20);
    const int rows = 16, cols = 64;
    std::vector<double> lvals(static_cast<std::size_t>(rows * cols));
    std::vector<double> tvals(static_cast<std::size_t>(rows * cols));
    for (auto& v : lvals) v = rng.normal() * 2.0;
    for (auto& v : tvals) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const Tensor logits({rows, cols}, lvals);
    const Tensor target({rows, cols}, tvals);

    double naive = 0.0;
    for (std::size_t i = 0; i < lvals.size(); ++i) {
        const double x = lvals[i], y = tvals[i];
        naive += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::fabs(x)));
    }
    naive /= static_cast<double>(lvals.size());
    CHECK(loss_bev(logits, target).value() == doctest::Approx(naive).epsilon(1e-12));

    // confident correct logits drive the loss to zero; zero logits give ln 2
    std::vector<double> strong(lvals.size());
    for (std::size_t i = 0; i < strong.size(); ++i) strong[i] = tvals[i] > 0.5 ? 20.0 : -20.0;
    CHECK(loss_bev(Tensor({rows, cols}, strong), target).value() < 1e-6);
    CHECK(loss_bev(Tensor::zeros({rows, cols}), target).value() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(loss_bev(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("total loss is the weighted sum of its parts") {
    TrainConfig cfg;
    cfg.lambda1 = 0.7;
    cfg.lambda2 = 1.3;
    const Tensor bev = Tensor::scalar(0.3);
    const Tensor traj = Tensor::scalar(0.5);
    const Tensor score = Tensor::scalar(0.2);
    CHECK(std::fabs(total_loss(bev, traj, score, cfg).value() - (0.7 * 0.3 + 1.3 * (0.5 + 0.2))) <=
          1e-12);

    cfg.lambda1 = 0.0;
    CHECK(std::fabs(total_loss(bev, traj, score, cfg).value() - 1.3 * 0.7) <= 1e-12);
    cfg.lambda1 = 1.0;
    cfg.lambda2 = 0.0;
    CHECK(total_loss(bev, traj, score, cfg).value() == 0.3);
}

TEST_CASE("training samples carry consistently sized pieces") {
    const TrainConfig cfg = small_config();
    const auto dataset = small_dataset(cfg, 1);
    const TrainSample& s = dataset[0];
    CHECK(static_cast<int>(s.future_grids.size()) == cfg.model.t_wm);
    CHECK(static_cast<int>(s.gt.points.size()) == cfg.model.t_f);
    CHECK(s.bev_target.shape() == std::vector<int>{cfg.model.n_patches(),
                                                   cfg.model.patch * cfg.model.patch});
    CHECK(s.pooled_current.shape() == std::vector<int>{1, cfg.model.c_wm});
    CHECK(s.cond.size() == 5);
    // the auxiliary target really is the agents channel
    double ones = 0.0;
    for (double v : s.bev_target.values()) ones += v;
    double grid_ones = 0.0;
    for (double v : s.obs.grid.agents) grid_ones += v;
    CHECK(ones == grid_ones);
}

TEST_CASE("only the winning mode receives waypoint gradient") {
    const TrainConfig cfg = small_config();
    ParamMap params = phase1_style_init(cfg);
    const auto dataset = small_dataset(cfg, 1);

    Tape tape;
    ParamMap bound = bind_params(tape, params);
    const CurrentFeatures current = encode_current(dataset[0].obs, bound, cfg.model);
    const Tensor refined = factorized_decode(param(bound, "plan/qs"), current, nullptr, bound, cfg.model);
    const PlanOutput pred = decode_trajectories(refined, bound, cfg.model);

    int winner = -1;
    auto [l_traj, l_score] = loss_traj(pred, dataset[0].gt, &winner);
    tape.backward(l_traj);  // trajectory term only

    REQUIRE(tape.has_grad(pred.waypoints));
    const auto& g = tape.grad_of(pred.waypoints);
    const int t_f = cfg.model.t_f;
    double winner_mass = 0.0, loser_mass = 0.0;
    for (int mode = 0; mode < cfg.model.m; ++mode) {
        for (int t = 0; t < t_f; ++t) {
            for (int c = 0; c < 2; ++c) {
                const double val = std::fabs(g[static_cast<std::size_t>((mode * t_f + t) * 2 + c)]);
                if (mode == winner) {
                    winner_mass += val;
                } else {
                    CHECK(val == 0.0);
                    loser_mass += val;
                }
            }
        }
    }
    CHECK(winner_mass > 0.0);
    CHECK(loser_mass == 0.0);
}

TEST_CASE("the current-frame phase overfits a single scenario") {
    TrainConfig cfg = small_config();
    cfg.phase1_epochs = 200;
    cfg.lr = 1e-3;
    const auto dataset = small_dataset(cfg, 1);

    const TrainResult result = train_phase1(cfg, dataset);
    CHECK_FALSE(result.diverged);
    REQUIRE(result.log.size() == 200);
    const double first = result.log.front().loss.l_traj;
    const double last = result.log.back().loss.l_traj;
    CHECK(last * 10.0 <= first);
    CHECK(last < first);
}

TEST_CASE("training is bit-deterministic in the config") {
    TrainConfig cfg = small_config();
    cfg.phase1_epochs = 3;
    const auto dataset = small_dataset(cfg, 2);

    const TrainResult a = train_phase1(cfg, dataset);
    const TrainResult b = train_phase1(cfg, dataset);
    CHECK(total_abs_difference(a.params, b.params) == 0.0);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].loss.total == b.log[i].loss.total);
    }
}

TEST_CASE("zero training epochs returns the seeded initialization") {
    TrainConfig cfg = small_config();
    cfg.phase1_epochs = 0;
    const auto dataset = small_dataset(cfg, 1);
    const TrainResult result = train_phase1(cfg, dataset);
    CHECK(result.log.empty());
    CHECK(total_abs_difference(result.params, phase1_style_init(cfg)) == 0.0);
}

TEST_CASE("attaching the future stage leaves step-zero losses bit-identical") {
    TrainConfig cfg = small_config();
    cfg.phase1_epochs = 2;
    const auto dataset = small_dataset(cfg, 2);
    const TrainResult phase1 = train_phase1(cfg, dataset);
    REQUIRE_FALSE(has_wm_stage(phase1.params));

    TrainConfig cfg2 = cfg;
    cfg2.phase2_epochs = 0;
    const TrainResult attached = train_phase2(cfg2, phase1.params, dataset);
    REQUIRE(has_wm_stage(attached.params));

    const Tensor projection = frozen_grid_projection(cfg.seed, cfg.model.patch, cfg.model.c_wm);
    for (const TrainSample& sample : dataset) {
        Rng noise_a(7), noise_b(7);
        const LossBreakdown before = sample_losses(sample, phase1.params, cfg, projection, noise_a,
                                                   /*use_wm=*/false);
        const LossBreakdown after = sample_losses(sample, attached.params, cfg2, projection, noise_b,
                                                  /*use_wm=*/true);
        CHECK(before.total == after.total);
        CHECK(before.l_bev == after.l_bev);
        CHECK(before.l_traj == after.l_traj);
        CHECK(before.l_score == after.l_score);
    }

    // the inherited parameters themselves are untouched by the attachment
    ParamMap inherited;
    for (const auto& [name, tensor] : attached.params) {
        if (phase1.params.count(name) != 0) inherited.emplace(name, tensor);
    }
    CHECK(total_abs_difference(inherited, phase1.params) == 0.0);

    // re-attachment of an already attached set is rejected
    CHECK_THROWS_AS(train_phase2(cfg2, attached.params, dataset), std::invalid_argument);
}

TEST_CASE("the lightweight predictor stays frozen through the second phase") {
    TrainConfig cfg = small_config();
    cfg.phase1_epochs = 1;
    cfg.phase2_epochs = 1;
    cfg.wm_kind = WmKind::simple;
    const auto dataset = small_dataset(cfg, 2);

    const TrainResult phase1 = train_phase1(cfg, dataset);
    const TrainResult phase2 = train_phase2(cfg, phase1.params, dataset);
    CHECK_FALSE(phase2.diverged);
    CHECK(has_wm_stage(phase2.params));

    // refit independently: the frozen copy in the result must match exactly
    const Tensor projection = frozen_grid_projection(cfg.seed, cfg.model.patch, cfg.model.c_wm);
    std::vector<SimpleWmSample> wm_data;
    for (const TrainSample& sample : dataset) {
        SimpleWmSample s;
        s.pooled_current = sample.pooled_current;
        s.cond = sample.cond;
        for (const OccupancyGrid& grid : sample.future_grids) {
            s.target_frames.push_back(encode_grid(grid, projection, cfg.model.patch));
        }
        wm_data.push_back(std::move(s));
    }
    const ParamMap refit = simple_wm_fit(wm_data, cfg.model, cfg.seed, 20);
    ParamMap carried;
    for (const auto& [name, tensor] : phase2.params) {
        if (is_wm_param(name)) carried.emplace(name, tensor);
    }
    REQUIRE_FALSE(carried.empty());
    CHECK(total_abs_difference(carried, refit) == 0.0);

    CHECK(is_wm_param("simple_wm/step0/fc1/w"));
    CHECK_FALSE(is_wm_param("plan/qs"));
}

TEST_CASE("divergence truncates the log and reports the last stable snapshot") {
    TrainConfig cfg = small_config();
    cfg.phase1_epochs = 8;
    cfg.lr = 1e30;  // guaranteed blow-up within a few steps
    const auto dataset = small_dataset(cfg, 1);

    const TrainResult result = train_phase1(cfg, dataset);
    CHECK(result.diverged);
    CHECK(result.log.size() < 8);
    for (const auto& [name, tensor] : result.params) CHECK(tensor.all_finite());
}

TEST_CASE("checkpoints round trip bit-exactly") {
    const TrainConfig cfg = small_config();
    ParamMap params = phase1_style_init(cfg);
    const std::string config_json = train_config_to_json(cfg);
    const std::string path_a = "ckpt_roundtrip_a.bin";
    const std::string path_b = "ckpt_roundtrip_b.bin";

    save_checkpoint(path_a, params, config_json, 123);
    const LoadedCheckpoint loaded = load_checkpoint(path_a);
    CHECK(loaded.seed == 123);
    CHECK(loaded.config_json == config_json);
    CHECK(total_abs_difference(loaded.params, params) == 0.0);
    for (const auto& [name, tensor] : params) {
        REQUIRE(loaded.params.count(name) == 1);
        CHECK(loaded.params.at(name).shape() == tensor.shape());
    }

    save_checkpoint(path_b, loaded.params, loaded.config_json, loaded.seed);
    std::ifstream fa(path_a, std::ios::binary), fb(path_b, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);
    CHECK_FALSE(bytes_a.empty());

    std::remove(path_a.c_str());
    std::remove(path_b.c_str());
}

TEST_CASE("checkpoint loading rejects malformed files") {
    const std::string good = "ckpt_malform.bin";
    ParamMap params;
    params.emplace("w", Tensor({2, 2}, {1, 2, 3, 4}));
    save_checkpoint(good, params, "{}", 9);

    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    const std::string bad_magic = "ckpt_badmagic.bin";
    {
        std::string corrupt = bytes;
        corrupt[0] = 'X';
        std::ofstream out(bad_magic, std::ios::binary);
        out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(bad_magic), "checkpoint format: bad magic",
                         std::runtime_error);

    const std::string bad_version = "ckpt_badversion.bin";
    {
        std::string corrupt = bytes;
        corrupt[7] = 2;  // version field follows the 7-byte magic
        std::ofstream out(bad_version, std::ios::binary);
        out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(bad_version), std::runtime_error);

    const std::string truncated = "ckpt_truncated.bin";
    {
        std::ofstream out(truncated, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(truncated), std::runtime_error);

    CHECK_THROWS_AS(load_checkpoint("ckpt_does_not_exist.bin"), std::runtime_error);

    std::remove(good.c_str());
    std::remove(bad_magic.c_str());
    std::remove(bad_version.c_str());
    std::remove(truncated.c_str());
}
