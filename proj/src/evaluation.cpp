#include "wa/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <functional>
#include <sstream>
#include <thread>

namespace wa {

std::uint64_t scenario_set_hash(const std::vector<ScenarioSpec>& specs) {
    std::uint64_t h = 0x5CE11A5ULL;
    for (const ScenarioSpec& spec : specs) {
        h = hash_combine(h, std::hash<std::string>{}(scenario_to_json(spec)));
    }
    return h;
}

namespace {

EvalRow eval_one(int id, const ScenarioSpec& spec, const ParamMap& params, const ModelConfig& cfg,
                 const EvalOptions& options, const Tensor& projection) {
    EvalRow row;
    row.scenario_id = id;
    row.seed = spec.seed;
    try {
        const WorldState start = init_world(spec);
        const Pose frame{start.ego.x, start.ego.y, start.ego.heading};
        const int steps = cfg.t_f;
        const std::vector<WorldState> trace = agent_trace(spec, start, steps);

        // expert label trajectory in the planning frame
        const FutureRollout gt_roll = rollout_future(spec, start, steps, cfg.grid_h, cfg.grid_w);
        Trajectory gt;
        gt.points.assign(gt_roll.expert.points.begin(), gt_roll.expert.points.begin() + steps);

        Trajectory executed_local;
        std::vector<Vec2> executed_world;
        if (options.expert_planner) {
            // execute the expert's own world states; converting the local
            // label back would cost an ulp per rotation
            executed_local = gt;
            const std::vector<WorldState> expert_states = expert_rollout_states(spec, start, steps);
            for (int s = 1; s <= steps; ++s) {
                executed_world.push_back({expert_states[static_cast<std::size_t>(s)].ego.x,
                                          expert_states[static_cast<std::size_t>(s)].ego.y});
            }
        } else {
            Rng noise(mix64(hash_combine(options.eval_seed, spec.seed)));
            const PlanOutput out = plan(spec, start, params, cfg, options.plan, projection, noise);
            executed_local = select_mode(out);
            executed_world = trajectory_to_world(frame, executed_local);
        }
        row.sub = score_scenario(executed_world, spec, trace);
        row.pdms_score = pdms(row.sub, options.weights);
        row.open_loop = open_loop_metrics(executed_local, gt, spec, trace, frame);
    } catch (const std::exception& e) {
        row.error = true;
        row.error_message = e.what();
    }
    return row;
}

EvalSummary summarize(const std::vector<EvalRow>& rows) {
    EvalSummary s;
    s.mean_sub = SubScores{0, 0, 0, 0, 0};  // the struct defaults to perfect scores
    s.scenario_count = static_cast<int>(rows.size());
    int n = 0;
    for (const EvalRow& row : rows) {
        if (row.error) {
            ++s.error_count;
            continue;
        }
        ++n;
        s.mean_sub.nc += row.sub.nc;
        s.mean_sub.dac += row.sub.dac;
        s.mean_sub.ttc += row.sub.ttc;
        s.mean_sub.comf += row.sub.comf;
        s.mean_sub.ep += row.sub.ep;
        s.mean_pdms += row.pdms_score;
        s.mean_open_loop.l2_1s += row.open_loop.l2_1s;
        s.mean_open_loop.l2_2s += row.open_loop.l2_2s;
        s.mean_open_loop.l2_3s += row.open_loop.l2_3s;
        s.mean_open_loop.l2_avg += row.open_loop.l2_avg;
        s.mean_open_loop.col_1s += row.open_loop.col_1s;
        s.mean_open_loop.col_2s += row.open_loop.col_2s;
        s.mean_open_loop.col_3s += row.open_loop.col_3s;
        s.mean_open_loop.col_avg += row.open_loop.col_avg;
    }
    if (n > 0) {
        const double inv = 1.0 / n;
        s.mean_sub.nc *= inv;
        s.mean_sub.dac *= inv;
        s.mean_sub.ttc *= inv;
        s.mean_sub.comf *= inv;
        s.mean_sub.ep *= inv;
        s.mean_pdms *= inv;
        s.mean_open_loop.l2_1s *= inv;
        s.mean_open_loop.l2_2s *= inv;
        s.mean_open_loop.l2_3s *= inv;
        s.mean_open_loop.l2_avg *= inv;
        s.mean_open_loop.col_1s *= inv;
        s.mean_open_loop.col_2s *= inv;
        s.mean_open_loop.col_3s *= inv;
        s.mean_open_loop.col_avg *= inv;
    } else {
        s.mean_sub = SubScores{0, 0, 0, 0, 0};
    }
    return s;
}

}  // namespace

EvalReport run_eval(const ParamMap& params, const ModelConfig& cfg,
                    const std::vector<ScenarioSpec>& specs, const EvalOptions& options,
                    const Tensor& projection) {
    EvalReport report;
    report.weights = options.weights;
    report.eval_seed = options.eval_seed;
    report.plan = options.plan;
    report.expert_planner = options.expert_planner;
    report.scenario_set_hash = scenario_set_hash(specs);
    report.rows.resize(specs.size());

    const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(specs.size())));
    if (workers <= 1) {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            report.rows[i] = eval_one(static_cast<int>(i), specs[i], params, cfg, options, projection);
        }
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (std::size_t i = static_cast<std::size_t>(w); i < specs.size();
                     i += static_cast<std::size_t>(workers)) {
                    report.rows[i] =
                        eval_one(static_cast<int>(i), specs[i], params, cfg, options, projection);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    report.summary = summarize(report.rows);
    return report;
}

AblationReport ablate_denoising(const ParamMap& params, const ModelConfig& cfg,
                                const std::vector<int>& steps, const std::vector<ScenarioSpec>& specs,
                                const EvalOptions& base, const Tensor& projection) {
    if (steps.empty()) throw std::invalid_argument("ablate_denoising: no steps given");
    AblationReport report;
    report.scenario_set_hash = scenario_set_hash(specs);
    for (int t_d : steps) {
        EvalOptions options = base;
        options.plan.t_d = t_d;
        const EvalReport run = run_eval(params, cfg, specs, options, projection);
        AblationRow row;
        row.label = "t_d=" + std::to_string(t_d);
        row.t_d = t_d;
        row.wm_kind = wm_kind_name(options.plan.wm);
        row.summary = run.summary;
        report.rows.push_back(std::move(row));
    }
    return report;
}

AblationReport ablate_wm_kind(const std::vector<WmVariant>& variants,
                              const std::vector<ScenarioSpec>& specs, const EvalOptions& base) {
    if (variants.empty()) throw std::invalid_argument("ablate_wm_kind: no variants given");
    AblationReport report;
    report.scenario_set_hash = scenario_set_hash(specs);
    for (const WmVariant& variant : variants) {
        EvalOptions options = base;
        options.plan = variant.plan;
        const EvalReport run = run_eval(*variant.params, *variant.cfg, specs, options, *variant.projection);
        AblationRow row;
        row.label = variant.label;
        row.t_d = variant.plan.t_d;
        row.wm_kind = wm_kind_name(variant.plan.wm);
        row.summary = run.summary;
        report.rows.push_back(std::move(row));
    }
    return report;
}

namespace {

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

std::string report_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "scenario_id,seed,nc,dac,ttc,comf,ep,pdms,l2_1s,l2_2s,l2_3s,col_1s,col_2s,col_3s,error_flag\n";
    for (const EvalRow& row : report.rows) {
        out << row.scenario_id << ',' << row.seed << ',' << fmt(row.sub.nc) << ',' << fmt(row.sub.dac)
            << ',' << fmt(row.sub.ttc) << ',' << fmt(row.sub.comf) << ',' << fmt(row.sub.ep) << ','
            << fmt(row.pdms_score) << ',' << fmt(row.open_loop.l2_1s) << ',' << fmt(row.open_loop.l2_2s)
            << ',' << fmt(row.open_loop.l2_3s) << ',' << fmt(row.open_loop.col_1s) << ','
            << fmt(row.open_loop.col_2s) << ',' << fmt(row.open_loop.col_3s) << ','
            << (row.error ? 1 : 0) << '\n';
    }
    return out.str();
}

std::string summary_json(const EvalReport& report) {
    nlohmann::json j;
    j["scenario_count"] = report.summary.scenario_count;
    j["error_count"] = report.summary.error_count;
    j["scenario_set_hash"] = report.scenario_set_hash;
    j["eval_seed"] = report.eval_seed;
    j["expert_planner"] = report.expert_planner;
    j["wm_kind"] = wm_kind_name(report.plan.wm);
    j["t_d"] = report.plan.t_d;
    j["pdms_weights"] = {{"ttc", report.weights.w_ttc},
                         {"comf", report.weights.w_comf},
                         {"ep", report.weights.w_ep}};
    j["means"] = {{"nc", report.summary.mean_sub.nc},     {"dac", report.summary.mean_sub.dac},
                  {"ttc", report.summary.mean_sub.ttc},   {"comf", report.summary.mean_sub.comf},
                  {"ep", report.summary.mean_sub.ep},     {"pdms", report.summary.mean_pdms},
                  {"l2_1s", report.summary.mean_open_loop.l2_1s},
                  {"l2_2s", report.summary.mean_open_loop.l2_2s},
                  {"l2_3s", report.summary.mean_open_loop.l2_3s},
                  {"l2_avg", report.summary.mean_open_loop.l2_avg},
                  {"col_1s", report.summary.mean_open_loop.col_1s},
                  {"col_2s", report.summary.mean_open_loop.col_2s},
                  {"col_3s", report.summary.mean_open_loop.col_3s},
                  {"col_avg", report.summary.mean_open_loop.col_avg}};
    return j.dump(2);
}

std::string ablation_csv(const AblationReport& report) {
    std::ostringstream out;
    out << "label,t_d,wm_kind,scenario_set_hash,scenario_count,error_count,"
           "nc,dac,ttc,comf,ep,pdms,l2_avg,col_avg\n";
    for (const AblationRow& row : report.rows) {
        out << row.label << ',' << row.t_d << ',' << row.wm_kind << ',' << report.scenario_set_hash
            << ',' << row.summary.scenario_count << ',' << row.summary.error_count << ','
            << fmt(row.summary.mean_sub.nc) << ',' << fmt(row.summary.mean_sub.dac) << ','
            << fmt(row.summary.mean_sub.ttc) << ',' << fmt(row.summary.mean_sub.comf) << ','
            << fmt(row.summary.mean_sub.ep) << ',' << fmt(row.summary.mean_pdms) << ','
            << fmt(row.summary.mean_open_loop.l2_avg) << ',' << fmt(row.summary.mean_open_loop.col_avg)
            << '\n';
    }
    return out.str();
}

}  // namespace wa
