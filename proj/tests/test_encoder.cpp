#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "wa/encoder.hpp"
#include "wa/scenario_gen.hpp"

using namespace wa;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.grid_h = 16;
    cfg.grid_w = 16;
    cfg.patch = 8;
    cfg.n_rays = 4;
    cfg.c = 8;
    cfg.heads = 2;
    cfg.enc_blocks = 1;
    return cfg;
}

// swap the cell contents of two patches (row-major patch indices) in place
void swap_patches(OccupancyGrid& grid, int patch, int a, int b) {
    const int pw = grid.w / patch;
    auto swap_channel = [&](std::vector<double>& ch) {
        for (int r = 0; r < patch; ++r) {
            for (int c = 0; c < patch; ++c) {
                const int ra = (a / pw) * patch + r, ca = (a % pw) * patch + c;
                const int rb = (b / pw) * patch + r, cb = (b % pw) * patch + c;
                std::swap(ch[static_cast<std::size_t>(ra * grid.w + ca)],
                          ch[static_cast<std::size_t>(rb * grid.w + cb)]);
            }
        }
    };
    swap_channel(grid.drivable);
    swap_channel(grid.agents);
    swap_channel(grid.ego);
}

}  // namespace

TEST_CASE("patch flattening uses row-major patches of row-major cells") {
    std::vector<double> channel(16);
    for (int i = 0; i < 16; ++i) channel[static_cast<std::size_t>(i)] = i;
    const Tensor patches = channel_to_patches(channel, 4, 4, 2);
    REQUIRE(patches.shape() == std::vector<int>{4, 4});
    const std::vector<double> expected{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
    CHECK(patches.values() == expected);

    CHECK_THROWS_AS(channel_to_patches(channel, 4, 4, 3), std::invalid_argument);
}

TEST_CASE("grid patches stack the three channels side by side") {
    OccupancyGrid grid;
    grid.h = grid.w = 4;
    grid.resolution = 0.5;
    grid.drivable.assign(16, 1.0);
    grid.agents.assign(16, 2.0);
    grid.ego.assign(16, 3.0);
    const Tensor patches = grid_to_patches(grid, 2);
    REQUIRE(patches.shape() == std::vector<int>{4, 12});
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 12; ++c) {
            CHECK(patches.at(r, c) == (c < 4 ? 1.0 : c < 8 ? 2.0 : 3.0));
        }
    }
}

TEST_CASE("condition vector layout") {
    EgoStatus ego;
    ego.speed = 7.0;
    ego.yaw_rate = -0.25;
    ego.command = DriveCommand::keep;
    CHECK(condition_vector(ego) == std::vector<double>{1, 0, 0, 0.7, -0.25});
    ego.command = DriveCommand::left;
    CHECK(condition_vector(ego)[1] == 1.0);
    ego.command = DriveCommand::right;
    CHECK(condition_vector(ego)[2] == 1.0);
}

TEST_CASE("token sequence is patches + range + ego") {
    const ScenarioSpec spec = generate_scenario(3, ScenarioKind::congestion);
    const WorldState state = init_world(spec);

    ModelConfig cfg;  // 64x64, patch 8
    const CurrentObservation obs = observe(spec, state, cfg);
    REQUIRE(static_cast<int>(obs.ranges.size()) == cfg.n_rays);
    Rng rng(1);
    ParamMap params;
    init_encoder_params(params, rng, cfg);
    const CurrentFeatures feats = encode_current(obs, params, cfg);
    CHECK(feats.tokens.shape() == std::vector<int>{66, 64});
    CHECK(feats.n_patch_tokens == 64);
    CHECK(feats.tokens.all_finite());

    const ModelConfig tiny = tiny_config();
    const CurrentObservation tobs = observe(spec, state, tiny);
    Rng trng(1);
    ParamMap tparams;
    init_encoder_params(tparams, trng, tiny);
    CHECK(encode_current(tobs, tparams, tiny).tokens.shape() == std::vector<int>{6, 8});

    // inputs are validated against the config
    CHECK_THROWS_AS(encode_current(tobs, params, cfg), std::invalid_argument);
    CurrentObservation bad_rays = obs;
    bad_rays.ranges.pop_back();
    CHECK_THROWS_AS(encode_current(bad_rays, params, cfg), std::invalid_argument);
}

TEST_CASE("encoding is deterministic and sensitive to the ego state") {
    const ScenarioSpec spec = generate_scenario(12, ScenarioKind::lead_brake);
    const WorldState state = init_world(spec);
    ModelConfig cfg;
    Rng rng(4);
    ParamMap params;
    init_encoder_params(params, rng, cfg);

    const CurrentObservation obs = observe(spec, state, cfg);
    const CurrentFeatures a = encode_current(obs, params, cfg);
    const CurrentFeatures b = encode_current(obs, params, cfg);
    CHECK(a.tokens.values() == b.tokens.values());

    CurrentObservation faster = obs;
    faster.ego.speed += 1.0;
    const CurrentFeatures c = encode_current(faster, params, cfg);
    CHECK(a.tokens.values() != c.tokens.values());
}

TEST_CASE("with no positional table the encoder is patch-permutation equivariant") {
    const ScenarioSpec spec = generate_scenario(21, ScenarioKind::crossing);
    const WorldState state = init_world(spec);
    ModelConfig cfg;
    Rng rng(2);
    ParamMap params;
    init_encoder_params(params, rng, cfg);
    params["enc/pos"] = init_zeros({cfg.n_patches(), cfg.c});

    const CurrentObservation obs = observe(spec, state, cfg);
    const int a = 5, b = 11;
    CurrentObservation swapped = obs;
    swap_patches(swapped.grid, cfg.patch, a, b);

    const Tensor base = encode_current(obs, params, cfg).tokens;
    const Tensor perm = encode_current(swapped, params, cfg).tokens;
    for (int r = 0; r < base.shape()[0]; ++r) {
        const int src = r == a ? b : r == b ? a : r;
        for (int c = 0; c < cfg.c; ++c) {
            CHECK(perm.at(r, c) == doctest::Approx(base.at(src, c)).epsilon(1e-9));
        }
    }
}

TEST_CASE("analytic gradients through the full encoder match finite differences") {
    const ScenarioSpec spec = generate_scenario(8, ScenarioKind::left_turn);
    const WorldState state = init_world(spec);
    const ModelConfig cfg = tiny_config();
    const CurrentObservation obs = observe(spec, state, cfg);

    Rng rng(6);
    ParamMap params;
    init_encoder_params(params, rng, cfg);

    // weight the token mean so no gradient path is trivially symmetric
    std::vector<double> wvals(static_cast<std::size_t>(cfg.n_tokens() * cfg.c));
    Rng wrng(7);
    for (auto& v : wvals) v = wrng.normal();
    const Tensor weight({cfg.n_tokens(), cfg.c}, std::move(wvals));

    Tape tape;
    ParamMap bound = bind_params(tape, params);
    const Tensor loss = sum(mul(encode_current(obs, bound, cfg).tokens, tape.leaf(weight)));
    tape.backward(loss);
    const auto grads = collect_grads(tape, bound);

    auto eval = [&](const ParamMap& p) {
        double acc = 0.0;
        const Tensor tokens = encode_current(obs, p, cfg).tokens;
        for (int i = 0; i < tokens.size(); ++i) acc += tokens.at(i) * weight.at(i);
        return acc;
    };

    double worst = 0.0;
    for (const auto& [name, tensor] : params) {
        const auto& analytic = grads.at(name);
        for (int i = 0; i < tensor.size(); ++i) {
            ParamMap probe = clone_params(params);
            double* slot = probe[name].data() + i;
            const double keep = *slot;
            const double h = 1e-5;
            *slot = keep + h;
            const double fp = eval(probe);
            *slot = keep - h;
            const double fm = eval(probe);
            const double fd = (fp - fm) / (2.0 * h);
            const double denom = std::max({1.0, std::fabs(fd), std::fabs(analytic[static_cast<std::size_t>(i)])});
            worst = std::max(worst, std::fabs(fd - analytic[static_cast<std::size_t>(i)]) / denom);
        }
    }
    CHECK(worst < 1e-4);
}
