#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "metric_oracle.hpp"
#include "wa/metrics.hpp"
#include "wa/rng.hpp"
#include "wa/scenario_gen.hpp"
#include "wa/sim.hpp"

using namespace wa;

namespace {

ScenarioSpec flat_spec() {
    ScenarioSpec spec;
    spec.drivable = {{{-30, -6}, {200, -6}, {200, 6}, {-30, 6}}};
    spec.route = {{-20, 0}, {200, 0}};
    spec.ego_init = {0.0, 0.0, 0.0};
    spec.ego_speed0 = 6.0;
    spec.cruise_speed = 7.0;
    return spec;
}

std::vector<Vec2> expert_waypoints(const ScenarioSpec& spec, int steps) {
    const auto states = expert_rollout_states(spec, init_world(spec), steps);
    std::vector<Vec2> out;
    for (int k = 1; k <= steps; ++k) {
        out.push_back({states[static_cast<std::size_t>(k)].ego.x, states[static_cast<std::size_t>(k)].ego.y});
    }
    return out;
}

}  // namespace

TEST_CASE("score aggregation arithmetic") {
    CHECK(pdms({1, 1, 1, 1, 1}) == 1.0);
    CHECK(pdms({0, 1, 1, 1, 1}) == 0.0);  // collision gates everything
    CHECK(pdms({1, 0, 1, 1, 1}) == 0.0);  // off-road gates everything
    // comfort violated, rest perfect: (5*1 + 2*0 + 5*1) / 12
    CHECK(pdms({1, 1, 1, 0, 1}) == doctest::Approx(10.0 / 12.0).epsilon(1e-12));
    CHECK(pdms({1, 1, 0, 1, 0.5}) == doctest::Approx((2.0 + 2.5) / 12.0).epsilon(1e-12));
    // custom weights
    CHECK(pdms({1, 1, 0.0, 1.0, 1.0}, {1.0, 1.0, 0.0}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("expert rollouts earn perfect sub-scores on generated scenarios") {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        for (int k = 0; k < kNumKinds; ++k) {
            const ScenarioSpec spec = generate_scenario(seed, static_cast<ScenarioKind>(k));
            CAPTURE(seed);
            CAPTURE(k);
            const auto executed = expert_waypoints(spec, spec.horizon_steps);
            const auto trace = agent_trace(spec, init_world(spec), spec.horizon_steps);
            const SubScores sub = score_scenario(executed, spec, trace);
            CHECK(sub.nc == 1.0);
            CHECK(sub.dac == 1.0);
            CHECK(sub.ttc == 1.0);
            CHECK(sub.comf == 1.0);
            CHECK(sub.ep == 1.0);  // expert progress ratio is exactly x/x
            CHECK(pdms(sub) == 1.0);
        }
    }
}

TEST_CASE("stationary ego is never at fault and earns no progress") {
    ScenarioSpec spec = flat_spec();
    spec.ego_speed0 = 0.0;
    AgentScript crosser;
    crosser.path = {{10.0, -20.0}, {10.0, 20.0}};  // passes 10 m ahead
    crosser.speed = 5.0;
    spec.agents.push_back(crosser);

    const int steps = spec.horizon_steps;
    const std::vector<Vec2> executed(static_cast<std::size_t>(steps), {0.0, 0.0});
    const auto trace = agent_trace(spec, init_world(spec), steps);
    const SubScores sub = score_scenario(executed, spec, trace);
    CHECK(sub.nc == 1.0);
    CHECK(sub.dac == 1.0);
    CHECK(sub.ttc == 1.0);  // zero ego velocity projects in place, 10 m clear
    CHECK(sub.comf == 1.0);
    CHECK(sub.ep == 0.0);  // the expert makes progress, the ego does not
}

TEST_CASE("agent driving through a stationary ego is not an at-fault collision") {
    ScenarioSpec spec = flat_spec();
    spec.ego_speed0 = 0.0;
    AgentScript bully;
    bully.path = {{0.0, -15.0}, {0.0, 15.0}};  // straight through the ego
    bully.speed = 5.0;
    spec.agents.push_back(bully);

    const int steps = 8;
    const std::vector<Vec2> executed(static_cast<std::size_t>(steps), {0.0, 0.0});
    const auto trace = agent_trace(spec, init_world(spec), steps);
    const SubScores sub = score_scenario(executed, spec, trace);
    CHECK(sub.nc == 1.0);  // contact happens, but the ego is not moving into it
    CHECK(sub.ttc == 0.0);  // the projected agent still sweeps the ego box
}

TEST_CASE("driving into a parked vehicle is an at-fault collision") {
    ScenarioSpec spec = flat_spec();
    AgentScript parked;
    parked.path = {{12.0, 0.0}, {13.0, 0.0}};
    parked.speed = 0.0;
    spec.agents.push_back(parked);

    // barrel straight ahead at 6 m/s: front bumper reaches the parked rear
    const int steps = 6;
    std::vector<Vec2> executed;
    for (int k = 1; k <= steps; ++k) executed.push_back({3.0 * k, 0.0});
    const auto trace = agent_trace(spec, init_world(spec), steps);
    const SubScores sub = score_scenario(executed, spec, trace);
    CHECK(sub.nc == 0.0);
    CHECK(sub.ttc == 0.0);
    CHECK(pdms(sub) == 0.0);
}

TEST_CASE("leaving the drivable area zeroes the compliance gate") {
    const ScenarioSpec spec = flat_spec();
    const int steps = 8;
    std::vector<Vec2> executed;
    for (int k = 1; k <= steps; ++k) {
        executed.push_back({2.0 * k, 1.2 * k});  // veers off the 6 m half-width
    }
    const auto trace = agent_trace(spec, init_world(spec), steps);
    const SubScores sub = score_scenario(executed, spec, trace);
    CHECK(sub.dac == 0.0);
    CHECK(sub.nc == 1.0);
    CHECK(pdms(sub) == 0.0);
}

TEST_CASE("comfort gate trips on harsh kinematics") {
    const ScenarioSpec spec = flat_spec();
    const int steps = 8;
    const auto trace = agent_trace(spec, init_world(spec), steps);

    // hard stop: speed 6 -> 0 in one step is a -12 m/s^2 deceleration
    std::vector<Vec2> slam;
    slam.push_back({3.0, 0.0});
    for (int k = 1; k < steps; ++k) slam.push_back({3.0, 0.0});
    CHECK(score_scenario(slam, spec, trace).comf == 0.0);

    // zigzag: heading flips exceed the yaw-rate bound
    std::vector<Vec2> zigzag;
    for (int k = 1; k <= steps; ++k) {
        zigzag.push_back({2.0 * k, (k % 2 == 0) ? 0.8 : -0.8});
    }
    const SubScores zz = score_scenario(zigzag, spec, trace);
    CHECK(zz.comf == 0.0);

    // smooth cruise keeps the gate open
    std::vector<Vec2> cruise;
    for (int k = 1; k <= steps; ++k) cruise.push_back({3.0 * k, 0.0});
    CHECK(score_scenario(cruise, spec, trace).comf == 1.0);
}

TEST_CASE("time-to-collision flags a fast approach that never makes contact") {
    ScenarioSpec spec = flat_spec();
    AgentScript parked;
    parked.path = {{14.0, 0.0}, {15.0, 0.0}};
    parked.speed = 0.0;
    spec.agents.push_back(parked);

    // one violent 6 m step (12 m/s), then hold short of the parked car
    const int steps = 6;
    std::vector<Vec2> executed;
    executed.push_back({6.0, 0.0});
    for (int k = 1; k < steps; ++k) executed.push_back({6.0, 0.0});
    const auto trace = agent_trace(spec, init_world(spec), steps);
    const SubScores sub = score_scenario(executed, spec, trace);
    CHECK(sub.nc == 1.0);  // never touched
    CHECK(sub.ttc == 0.0);  // 1 s projection at 12 m/s sweeps into the car
}

TEST_CASE("partial progress lands strictly between the gates") {
    const ScenarioSpec spec = generate_scenario(21, ScenarioKind::straight);
    const int steps = spec.horizon_steps;
    auto executed = expert_waypoints(spec, steps);
    // stop after half of the horizon and idle in place
    for (int k = steps / 2; k < steps; ++k) {
        executed[static_cast<std::size_t>(k)] = executed[static_cast<std::size_t>(steps / 2 - 1)];
    }
    const auto trace = agent_trace(spec, init_world(spec), steps);
    const SubScores sub = score_scenario(executed, spec, trace);
    CHECK(sub.ep > 0.05);
    CHECK(sub.ep < 0.95);
    const oracle::Scores ref = oracle::score(executed, spec, trace);
    CHECK(std::fabs(sub.ep - ref.ep) < 1e-9);
}

TEST_CASE("scorer rejects malformed inputs") {
    const ScenarioSpec spec = flat_spec();
    const auto trace = agent_trace(spec, init_world(spec), 4);
    CHECK_THROWS_AS(score_scenario({}, spec, trace), std::invalid_argument);
    const std::vector<Vec2> executed(8, {1.0, 0.0});
    CHECK_THROWS_AS(score_scenario(executed, spec, trace), std::invalid_argument);
}

TEST_CASE("sub-scores agree with an independent geometry oracle") {
    wa::Rng rng(2026);
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto kind = static_cast<ScenarioKind>(seed % kNumKinds);
        const ScenarioSpec spec = generate_scenario(seed, kind);
        const int steps = spec.horizon_steps;
        const auto trace = agent_trace(spec, init_world(spec), steps);
        const auto expert = expert_waypoints(spec, steps);

        std::vector<std::vector<Vec2>> variants;
        variants.push_back(expert);
        // jittered expert
        auto noisy = expert;
        for (auto& p : noisy) {
            p.x += rng.normal() * 0.15;
            p.y += rng.normal() * 0.15;
        }
        variants.push_back(noisy);
        // blind constant-velocity drive along the initial heading
        std::vector<Vec2> blind;
        for (int k = 1; k <= steps; ++k) {
            const double d = spec.cruise_speed * spec.dt * k;
            blind.push_back({spec.ego_init.x + d * std::cos(spec.ego_init.heading),
                             spec.ego_init.y + d * std::sin(spec.ego_init.heading)});
        }
        variants.push_back(blind);
        // overshooting expert (scaled displacements)
        std::vector<Vec2> rushed;
        Vec2 prev{spec.ego_init.x, spec.ego_init.y};
        Vec2 acc = prev;
        for (const Vec2& p : expert) {
            acc = acc + (p - prev) * 1.35;
            rushed.push_back(acc);
            prev = p;
        }
        variants.push_back(rushed);

        for (const auto& executed : variants) {
            const SubScores got = score_scenario(executed, spec, trace);
            const oracle::Scores ref = oracle::score(executed, spec, trace);
            CAPTURE(seed);
            CHECK(got.nc == ref.nc);
            CHECK(got.dac == ref.dac);
            CHECK(got.ttc == ref.ttc);
            CHECK(got.comf == ref.comf);
            CHECK(std::fabs(got.ep - ref.ep) < 1e-9);
            ++checked;
        }
    }
    CHECK(checked == 40);
}

TEST_CASE("open-loop metrics: exact match, fixed offset, staged collision") {
    ScenarioSpec spec = flat_spec();
    AgentScript parked;
    parked.path = {{10.0, 0.0}, {11.0, 0.0}};
    parked.speed = 0.0;
    spec.agents.push_back(parked);
    const Pose frame = spec.ego_init;
    const auto trace = agent_trace(spec, init_world(spec), 6);

    Trajectory gt;
    for (int k = 1; k <= 6; ++k) gt.points.push_back({0.5 * k, 0.0});

    const OpenLoopMetrics same = open_loop_metrics(gt, gt, spec, trace, frame);
    CHECK(same.l2_1s == 0.0);
    CHECK(same.l2_2s == 0.0);
    CHECK(same.l2_3s == 0.0);
    CHECK(same.l2_avg == 0.0);
    CHECK(same.col_1s == 0.0);
    CHECK(same.col_avg == 0.0);

    Trajectory shifted = gt;
    for (auto& p : shifted.points) {
        p.x += 0.3;
        p.y += 0.4;
    }
    const OpenLoopMetrics off = open_loop_metrics(shifted, gt, spec, trace, frame);
    CHECK(off.l2_1s == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(off.l2_2s == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(off.l2_3s == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(off.l2_avg == doctest::Approx(0.5).epsilon(1e-12));

    // prediction that reaches the parked car between 1 s and 2 s
    Trajectory ram;
    ram.points = {{2.0, 0.0}, {4.0, 0.0}, {6.0, 0.0}, {8.5, 0.0}, {8.5, 0.0}, {8.5, 0.0}};
    const OpenLoopMetrics crash = open_loop_metrics(ram, gt, spec, trace, frame);
    CHECK(crash.col_1s == 0.0);
    CHECK(crash.col_2s == 1.0);
    CHECK(crash.col_3s == 1.0);
    CHECK(crash.col_avg == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    Trajectory short_pred;
    short_pred.points = {{1, 0}, {2, 0}};
    CHECK_THROWS_AS(open_loop_metrics(short_pred, gt, spec, trace, frame), std::invalid_argument);
    Trajectory mismatched = gt;
    mismatched.points.pop_back();
    CHECK_THROWS_AS(open_loop_metrics(mismatched, gt, spec, trace, frame), std::invalid_argument);
}
