// waplan: scenario generation, two-phase training, closed-loop evaluation
// and ablation sweeps behind one reproducible command-line surface.
//
// Exit codes: 0 success, 2 numeric failure during training, 64 usage
// error, 66 missing input file or directory.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "wa/evaluation.hpp"
#include "wa/scenario_gen.hpp"
#include "wa/training.hpp"

namespace fs = std::filesystem;
using namespace wa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumeric = 2;
constexpr int kExitUsage = 64;
constexpr int kExitMissingInput = 66;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// flag wins over the WA_SEED environment variable, which wins over the
// fallback (e.g. the seed stored in a config file)
std::uint64_t resolve_seed(bool flag_given, std::uint64_t flag_value, std::uint64_t fallback) {
    if (flag_given) return flag_value;
    if (const char* env = std::getenv("WA_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return fallback;
}

fs::path under(const fs::path& workdir, const std::string& path) { return workdir / path; }

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_config_echo(const fs::path& path, const nlohmann::json& echo) {
    write_text_file(path, echo.dump(2) + "\n");
}

std::vector<std::string> split_csv_list(const std::string& text) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

std::vector<ScenarioSpec> load_scenario_dir(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw MissingInputError("scenario manifest not found: " + manifest_path.string());
    }
    const nlohmann::json manifest = nlohmann::json::parse(read_text_file(manifest_path));
    std::vector<ScenarioSpec> specs;
    for (const auto& entry : manifest.at("scenarios")) {
        const fs::path file = dir / entry.at("file").get<std::string>();
        if (!fs::exists(file)) throw MissingInputError("scenario file not found: " + file.string());
        specs.push_back(scenario_from_json(read_text_file(file)));
    }
    return specs;
}

LoadedCheckpoint load_checkpoint_checked(const fs::path& path) {
    if (!fs::exists(path)) throw MissingInputError("checkpoint not found: " + path.string());
    return load_checkpoint(path.string());
}

std::string train_log_csv(const TrainResult& result) {
    std::ostringstream out;
    out.precision(17);
    out << "step,total,l_bev,l_traj,l_score\n";
    for (const TrainLogRow& row : result.log) {
        out << row.step << ',' << row.loss.total << ',' << row.loss.l_bev << ',' << row.loss.l_traj
            << ',' << row.loss.l_score << '\n';
    }
    return out.str();
}

fs::path sibling_with_suffix(const fs::path& path, const std::string& suffix) {
    fs::path out = path;
    out.replace_extension();
    out += suffix;
    return out;
}

// -- gen-scenarios -----------------------------------------------------------

int cmd_gen_scenarios(const fs::path& workdir, const std::string& out_dir, int count,
                      std::uint64_t seed, const std::string& kinds_arg) {
    std::vector<ScenarioKind> kinds;
    for (const std::string& name : split_csv_list(kinds_arg)) {
        kinds.push_back(kind_from_name(name));  // throws on unknown names
    }
    if (kinds.empty()) throw UsageError("no scenario kinds requested");
    if (count < 0) throw UsageError("count must be non-negative");

    const fs::path dir = under(workdir, out_dir);
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["count"] = count;
    manifest["base_seed"] = seed;
    manifest["kinds"] = split_csv_list(kinds_arg);
    manifest["scenarios"] = nlohmann::json::array();
    for (int i = 0; i < count; ++i) {
        const ScenarioKind kind = kinds[static_cast<std::size_t>(i) % kinds.size()];
        const std::uint64_t scenario_seed = seed + static_cast<std::uint64_t>(i);
        const ScenarioSpec spec = generate_scenario(scenario_seed, kind);
        const std::string file = "scenario_" + std::to_string(i) + ".json";
        write_text_file(dir / file, scenario_to_json(spec));
        manifest["scenarios"].push_back({{"id", i},
                                         {"file", file},
                                         {"kind", kind_name(kind)},
                                         {"seed", scenario_seed}});
    }
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

    write_config_echo(dir / "config_echo.json", {{"command", "gen-scenarios"},
                                                 {"out", out_dir},
                                                 {"count", count},
                                                 {"seed", seed},
                                                 {"kinds", kinds_arg}});
    std::cout << "wrote " << count << " scenarios to " << dir.string() << "\n";
    return kExitOk;
}

// -- train -------------------------------------------------------------------

int cmd_train(const fs::path& workdir, const std::string& config_path, int phase,
              const std::string& init_path, const std::string& out_path,
              const std::string& scenarios_flag, bool seed_given, std::uint64_t seed_flag) {
    const std::string config_text = read_text_file(under(workdir, config_path));
    TrainConfig cfg = train_config_from_json(config_text);
    cfg.seed = resolve_seed(seed_given, seed_flag, cfg.seed);

    // the scenario directory may live in the config file or on the flag
    std::string scenarios_dir = scenarios_flag;
    if (scenarios_dir.empty()) {
        const nlohmann::json j = nlohmann::json::parse(config_text);
        scenarios_dir = j.value("scenarios", std::string());
    }
    if (scenarios_dir.empty()) {
        throw UsageError("no scenario directory given (--scenarios or \"scenarios\" in the config)");
    }
    const std::vector<ScenarioSpec> specs = load_scenario_dir(under(workdir, scenarios_dir));
    if (specs.empty()) throw UsageError("scenario set is empty");

    const Tensor projection = frozen_grid_projection(cfg.seed, cfg.model.patch, cfg.model.c_wm);
    const std::vector<TrainSample> dataset = build_dataset(specs, cfg.model, projection);

    TrainResult result;
    if (phase == 1) {
        result = train_phase1(cfg, dataset);
    } else {
        if (init_path.empty()) throw UsageError("--phase 2 requires --init");
        const LoadedCheckpoint init = load_checkpoint_checked(under(workdir, init_path));
        const TrainConfig init_cfg = train_config_from_json(init.config_json);
        if (init_cfg.model.c != cfg.model.c || init_cfg.model.patch != cfg.model.patch ||
            init_cfg.model.m != cfg.model.m || init_cfg.model.t_f != cfg.model.t_f ||
            init_cfg.model.grid_h != cfg.model.grid_h || init_cfg.model.grid_w != cfg.model.grid_w ||
            init_cfg.model.n_rays != cfg.model.n_rays ||
            init_cfg.model.enc_blocks != cfg.model.enc_blocks ||
            init_cfg.model.heads != cfg.model.heads) {
            throw UsageError("--init checkpoint model dimensions do not match --config");
        }
        result = train_phase2(cfg, init.params, dataset);
    }

    const fs::path out = under(workdir, out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_checkpoint(out.string(), result.params, train_config_to_json(cfg), cfg.seed);
    write_text_file(sibling_with_suffix(out, ".log.csv"), train_log_csv(result));
    write_config_echo(sibling_with_suffix(out, ".config.json"),
                      {{"command", "train"},
                       {"phase", phase},
                       {"config", nlohmann::json::parse(train_config_to_json(cfg))},
                       {"scenarios", scenarios_dir},
                       {"init", init_path},
                       {"out", out_path},
                       {"steps", result.log.size()},
                       {"diverged", result.diverged}});

    if (result.diverged) {
        std::cerr << "training diverged; last stable checkpoint written to " << out.string() << "\n";
        return kExitNumeric;
    }
    std::cout << "trained phase " << phase << " for " << result.log.size() << " steps -> "
              << out.string() << "\n";
    return kExitOk;
}

// -- eval --------------------------------------------------------------------

int cmd_eval(const fs::path& workdir, const std::string& ckpt_path, const std::string& scenarios_dir,
             int t_d, const std::string& wm_name, const std::string& out_path, bool seed_given,
             std::uint64_t seed_flag, int workers, bool expert) {
    const LoadedCheckpoint ckpt = load_checkpoint_checked(under(workdir, ckpt_path));
    const TrainConfig train_cfg = train_config_from_json(ckpt.config_json);
    const std::vector<ScenarioSpec> specs = load_scenario_dir(under(workdir, scenarios_dir));

    EvalOptions options;
    options.plan.wm = wm_kind_from_name(wm_name);
    if (options.plan.wm != WmKind::none && !has_wm_stage(ckpt.params)) {
        throw UsageError("--wm " + wm_name + " needs a checkpoint with the future stage attached");
    }
    options.plan.t_d = t_d;
    options.plan.schedule = train_cfg.schedule;
    options.eval_seed = resolve_seed(seed_given, seed_flag, 0);
    options.workers = workers;
    options.expert_planner = expert;

    const Tensor projection =
        frozen_grid_projection(ckpt.seed, train_cfg.model.patch, train_cfg.model.c_wm);
    const EvalReport report = run_eval(ckpt.params, train_cfg.model, specs, options, projection);

    const fs::path out = under(workdir, out_path);
    write_text_file(out, report_csv(report));
    write_text_file(sibling_with_suffix(out, "_summary.json"), summary_json(report) + "\n");
    write_config_echo(sibling_with_suffix(out, ".config.json"),
                      {{"command", "eval"},
                       {"ckpt", ckpt_path},
                       {"scenarios", scenarios_dir},
                       {"t_d", t_d},
                       {"wm", wm_name},
                       {"out", out_path},
                       {"eval_seed", options.eval_seed},
                       {"workers", workers},
                       {"expert", expert}});
    std::cout << "evaluated " << specs.size() << " scenarios, mean driving score "
              << report.summary.mean_pdms << " -> " << out.string() << "\n";
    return kExitOk;
}

// -- ablate ------------------------------------------------------------------

int cmd_ablate(const fs::path& workdir, const std::vector<std::string>& ckpt_paths,
               const std::string& mode, const std::vector<int>& steps,
               const std::string& scenarios_dir, int t_d, const std::string& out_path,
               bool seed_given, std::uint64_t seed_flag, int workers) {
    const std::vector<ScenarioSpec> specs = load_scenario_dir(under(workdir, scenarios_dir));

    EvalOptions base;
    base.eval_seed = resolve_seed(seed_given, seed_flag, 0);
    base.workers = workers;

    AblationReport report;
    if (mode == "steps") {
        if (ckpt_paths.size() != 1) throw UsageError("--mode steps takes exactly one --ckpt");
        if (steps.empty()) throw UsageError("--mode steps requires --steps");
        const LoadedCheckpoint ckpt = load_checkpoint_checked(under(workdir, ckpt_paths[0]));
        const TrainConfig train_cfg = train_config_from_json(ckpt.config_json);
        base.plan.wm = has_wm_stage(ckpt.params) ? train_cfg.wm_kind : WmKind::none;
        base.plan.schedule = train_cfg.schedule;
        const Tensor projection =
            frozen_grid_projection(ckpt.seed, train_cfg.model.patch, train_cfg.model.c_wm);
        report = ablate_denoising(ckpt.params, train_cfg.model, steps, specs, base, projection);
    } else if (mode == "wm") {
        if (ckpt_paths.empty()) throw UsageError("--mode wm requires at least one --ckpt");
        std::vector<LoadedCheckpoint> ckpts;
        std::vector<TrainConfig> cfgs;
        std::vector<Tensor> projections;
        for (const std::string& path : ckpt_paths) {
            ckpts.push_back(load_checkpoint_checked(under(workdir, path)));
            cfgs.push_back(train_config_from_json(ckpts.back().config_json));
            projections.push_back(frozen_grid_projection(ckpts.back().seed, cfgs.back().model.patch,
                                                         cfgs.back().model.c_wm));
        }
        std::vector<WmVariant> variants;
        for (std::size_t i = 0; i < ckpts.size(); ++i) {
            WmVariant variant;
            variant.label = fs::path(ckpt_paths[i]).stem().string();
            variant.params = &ckpts[i].params;
            variant.cfg = &cfgs[i].model;
            variant.projection = &projections[i];
            variant.plan.wm = has_wm_stage(ckpts[i].params) ? cfgs[i].wm_kind : WmKind::none;
            variant.plan.t_d = t_d;
            variant.plan.schedule = cfgs[i].schedule;
            variants.push_back(variant);
        }
        report = ablate_wm_kind(variants, specs, base);
    } else {
        throw UsageError("unknown ablation mode: " + mode);
    }

    const fs::path out = under(workdir, out_path);
    write_text_file(out, ablation_csv(report));
    nlohmann::json echo = {{"command", "ablate"}, {"mode", mode},          {"ckpts", ckpt_paths},
                           {"scenarios", scenarios_dir}, {"out", out_path}, {"t_d", t_d},
                           {"eval_seed", base.eval_seed}, {"workers", workers}};
    echo["steps"] = steps;
    write_config_echo(sibling_with_suffix(out, ".config.json"), echo);
    std::cout << "ablation (" << mode << "): " << report.rows.size() << " rows -> " << out.string()
              << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"anticipatory driving planner toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // accept --workdir after the subcommand name too
    std::string workdir = ".";
    app.add_option("--workdir", workdir, "base directory for all relative paths");

    // gen-scenarios
    auto* gen = app.add_subcommand("gen-scenarios", "generate a scenario set with a manifest");
    std::string gen_out;
    int gen_count = 0;
    std::uint64_t gen_seed = 0;
    bool gen_seed_given = false;
    std::string gen_kinds = "straight,left_turn,right_turn,lead_brake,crossing,congestion";
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_count, "number of scenarios")->required();
    gen->add_option("--seed", gen_seed, "base seed")->each([&](const std::string&) {
        gen_seed_given = true;
    });
    gen->add_option("--kinds", gen_kinds, "comma-separated scenario kinds");

    // train
    auto* train = app.add_subcommand("train", "run one training phase from a config file");
    std::string train_config, train_init, train_out, train_scenarios;
    int train_phase = 1;
    std::uint64_t train_seed = 0;
    bool train_seed_given = false;
    train->add_option("--config", train_config, "training config JSON")->required();
    train->add_option("--phase", train_phase, "training phase")->check(CLI::IsMember({1, 2}))
        ->required();
    train->add_option("--init", train_init, "phase-1 checkpoint to attach to (phase 2)");
    train->add_option("--out", train_out, "output checkpoint path")->required();
    train->add_option("--scenarios", train_scenarios, "scenario directory (overrides config)");
    train->add_option("--seed", train_seed, "seed override")->each([&](const std::string&) {
        train_seed_given = true;
    });

    // eval
    auto* eval = app.add_subcommand("eval", "closed-loop evaluation of a checkpoint");
    std::string eval_ckpt, eval_scenarios, eval_out;
    std::string eval_wm = "oracle";
    int eval_t_d = 100;
    std::uint64_t eval_seed = 0;
    bool eval_seed_given = false;
    int eval_workers = 1;
    bool eval_expert = false;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--scenarios", eval_scenarios, "scenario directory")->required();
    eval->add_option("--t-d", eval_t_d, "denoising step for the oracle world model");
    eval->add_option("--wm", eval_wm, "world-model kind")
        ->check(CLI::IsMember({"oracle", "simple", "none"}));
    eval->add_option("--out", eval_out, "per-scenario CSV path")->required();
    eval->add_option("--seed", eval_seed, "evaluation seed")->each([&](const std::string&) {
        eval_seed_given = true;
    });
    eval->add_option("--workers", eval_workers, "parallel scenario workers");
    eval->add_flag("--expert", eval_expert, "execute the scripted expert instead of the planner");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "sweep denoising steps or world-model variants");
    std::vector<std::string> ablate_ckpts;
    std::string ablate_mode, ablate_scenarios, ablate_out;
    std::vector<int> ablate_steps;
    int ablate_t_d = 100;
    std::uint64_t ablate_seed = 0;
    bool ablate_seed_given = false;
    int ablate_workers = 1;
    ablate->add_option("--ckpt", ablate_ckpts, "checkpoint file (repeatable for --mode wm)")
        ->required();
    ablate->add_option("--mode", ablate_mode, "steps | wm")
        ->check(CLI::IsMember({"steps", "wm"}))
        ->required();
    ablate->add_option("--steps", ablate_steps, "denoising steps to sweep")->delimiter(',');
    ablate->add_option("--scenarios", ablate_scenarios, "scenario directory")->required();
    ablate->add_option("--t-d", ablate_t_d, "denoising step for --mode wm");
    ablate->add_option("--out", ablate_out, "ablation CSV path")->required();
    ablate->add_option("--seed", ablate_seed, "evaluation seed")->each([&](const std::string&) {
        ablate_seed_given = true;
    });
    ablate->add_option("--workers", ablate_workers, "parallel scenario workers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        const fs::path base(workdir);
        if (gen->parsed()) {
            return cmd_gen_scenarios(base, gen_out, gen_count,
                                     resolve_seed(gen_seed_given, gen_seed, 0), gen_kinds);
        }
        if (train->parsed()) {
            return cmd_train(base, train_config, train_phase, train_init, train_out, train_scenarios,
                             train_seed_given, train_seed);
        }
        if (eval->parsed()) {
            return cmd_eval(base, eval_ckpt, eval_scenarios, eval_t_d, eval_wm, eval_out,
                            eval_seed_given, eval_seed, eval_workers, eval_expert);
        }
        if (ablate->parsed()) {
            return cmd_ablate(base, ablate_ckpts, ablate_mode, ablate_steps, ablate_scenarios,
                              ablate_t_d, ablate_out, ablate_seed_given, ablate_seed, ablate_workers);
        }
        std::cerr << "no command given\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const MissingInputError& e) {
        std::cerr << "missing input: " << e.what() << "\n";
        return kExitMissingInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
