#pragma once

#include <map>
#include <memory>
#include <optional>

#include "prefalign/config.hpp"
#include "prefalign/env.hpp"
#include "prefalign/evaluation.hpp"
#include "prefalign/training.hpp"

namespace prefalign {

Env make_env(const RunConfig& cfg);

// Fresh policy per the config's policy block (uniform at init).
PolicyParams make_policy(const RunConfig& cfg, const Env& env);

// Uniform tabular policy over the env's prompts (proposal / reference).
PolicyParams uniform_policy(const Env& env);

struct Datasets {
    std::vector<DemoPair> demos;
    DatasetSplit<DemoPair> demo_split;
    std::vector<std::vector<PreferencePair>> comparisons;  // per objective
    std::vector<DatasetSplit<PreferencePair>> comparison_splits;
};

// Demonstrations toward `demo_objective` (signed convention) plus comparison
// sets for every objective; `proposal` must be non-null when the config asks
// for an SFT proposal.
Datasets gen_datasets(const RunConfig& cfg, const Env& env, int demo_objective,
                      const PolicyParams* proposal = nullptr);

// Caches exact-population pair tables per (objective, sign).
class PopulationCache {
public:
    const PopulationPrefs& get(const Env& env, int objective, double sign);

private:
    std::map<std::pair<int, int>, std::unique_ptr<PopulationPrefs>> cache_;
};

// Phase 1: SFT on the demo train split (population mode uses all demos).
TrainReport run_sft(const RunConfig& cfg, const Env& env, const Datasets& data);

// Phase 2 building block: single-objective DPO against `ref`. Returns the
// trained policy report; wrap in ImplicitRewardModel for reward-model use.
TrainReport run_dpo(const RunConfig& cfg, const PhaseConfig& phase, const Env& env,
                    const Datasets& data, const PolicyParams& ref, PopulationCache& pop);

// Phase 2: implicit reward models for every objective except `except_k`.
std::vector<ImplicitRewardModel> run_reward_models(const RunConfig& cfg, const Env& env,
                                                   const Datasets& data, const PolicyParams& ref,
                                                   int except_k, PopulationCache& pop,
                                                   std::vector<TrainReport>* reports = nullptr);

// Phase 3: MODPO for weight vector `w` on the configured data objective.
TrainReport run_modpo(const RunConfig& cfg, const Env& env, const Datasets& data,
                      const PolicyParams& ref, const std::vector<ImplicitRewardModel>& models,
                      const WeightVector& w, PopulationCache& pop);

// Full in-memory chain with shared phases 1-2 and per-weight phase 3.
struct PipelineResult {
    Env env;
    Datasets data;
    PolicyParams sft;
    std::vector<ImplicitRewardModel> reward_models;
    PolicyParams modpo;
    TrainReport sft_report;
    std::vector<TrainReport> reward_reports;
    TrainReport modpo_report;
};

PipelineResult run_pipeline(const RunConfig& cfg, int demo_objective = -1);

// The spec'd experiment harnesses.
SweepReport weight_sweep(const RunConfig& cfg);
ReferenceSwapReport reference_swap_experiment(const RunConfig& cfg);

// Evaluates one trained point against its oracle (shared by sweep/eval).
ParetoPoint evaluate_point(const PolicyParams& policy, const Env& env, const PolicyParams& ref,
                           const WeightVector& w, double beta, const std::vector<double>& signs,
                           int n_mc, std::uint64_t seed, const std::string& run_id);

}  // namespace prefalign
