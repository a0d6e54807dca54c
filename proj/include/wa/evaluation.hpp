#pragma once

// Closed-loop evaluation: plan once at t=0, execute the selected
// trajectory against the scripted world, score it, and aggregate over a
// scenario set. Ablation drivers re-evaluate the same scenarios and noise
// seeds across denoising steps or world-model variants.

#include <cstdint>
#include <string>
#include <vector>

#include "wa/metrics.hpp"
#include "wa/planner.hpp"
#include "wa/training.hpp"

namespace wa {

struct EvalOptions {
    PlanSettings plan;
    std::uint64_t eval_seed = 0;
    PDMSWeights weights;
    int workers = 1;
    bool expert_planner = false;  // oracle shortcut: execute the expert itself
};

struct EvalRow {
    int scenario_id = 0;
    std::uint64_t seed = 0;
    SubScores sub;
    double pdms_score = 0.0;
    OpenLoopMetrics open_loop;
    bool error = false;
    std::string error_message;
};

struct EvalSummary {
    SubScores mean_sub;
    double mean_pdms = 0.0;
    OpenLoopMetrics mean_open_loop;
    int scenario_count = 0;
    int error_count = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalSummary summary;
    std::uint64_t scenario_set_hash = 0;
    PDMSWeights weights;
    std::uint64_t eval_seed = 0;
    PlanSettings plan;
    bool expert_planner = false;
};

std::uint64_t scenario_set_hash(const std::vector<ScenarioSpec>& specs);

EvalReport run_eval(const ParamMap& params, const ModelConfig& cfg,
                    const std::vector<ScenarioSpec>& specs, const EvalOptions& options,
                    const Tensor& projection);

struct AblationRow {
    std::string label;
    int t_d = 0;
    std::string wm_kind;
    EvalSummary summary;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::uint64_t scenario_set_hash = 0;
};

// Same checkpoint and scenario/noise seeds, one row per denoising step.
AblationReport ablate_denoising(const ParamMap& params, const ModelConfig& cfg,
                                const std::vector<int>& steps, const std::vector<ScenarioSpec>& specs,
                                const EvalOptions& base, const Tensor& projection);

struct WmVariant {
    std::string label;
    const ParamMap* params = nullptr;
    const ModelConfig* cfg = nullptr;
    PlanSettings plan;
    const Tensor* projection = nullptr;
};

// Identical scenario set across world-model variants.
AblationReport ablate_wm_kind(const std::vector<WmVariant>& variants,
                              const std::vector<ScenarioSpec>& specs, const EvalOptions& base);

std::string report_csv(const EvalReport& report);
std::string summary_json(const EvalReport& report);
std::string ablation_csv(const AblationReport& report);

}  // namespace wa
