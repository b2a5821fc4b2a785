#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prefalign/env.hpp"
#include "prefalign/math.hpp"
#include "prefalign/oracle.hpp"
#include "prefalign/pareto.hpp"
#include "prefalign/policy.hpp"

namespace prefalign {

struct EvalSpec {
    WeightVector w;            // scalarization defining the oracle target
    double beta = 0.1;
    int n_mc = 10000;          // 0 disables the Monte-Carlo branch
    bool exact = true;
    std::uint64_t seed = 0;
    std::vector<double> signs;  // objective orientation, default all +1
};

struct EvalResult {
    RewardVector exact;        // exact expected rewards (signed convention)
    RewardVector mc;           // Monte-Carlo estimates (NaN when disabled)
    RewardVector mc_stderr;
    std::vector<double> kl_per_prompt;  // KL(pi*_w || policy)
    double kl_mean = 0.0;
    double objective_value = 0.0;  // E[w^T r] - beta * mean KL(pi || ref)
};

EvalResult eval_policy(const PolicyParams& policy, const Env& env, const PolicyParams& ref,
                       const EvalSpec& spec);

struct OlsFit {
    double slope = 0.0;
    double intercept = 0.0;
    double stderr_slope = 0.0;
};

// Ordinary least squares of ys on xs; needs >= 3 points and non-degenerate xs.
OlsFit ols_slope(const std::vector<double>& xs, const std::vector<double>& ys);

struct SweepReport {
    std::vector<ParetoPoint> points;
    int swept_objective = 1;
    std::vector<double> swept_weights;
    // OLS of each objective's exact expected reward on the swept weight;
    // absent for degenerate grids (< 3 points or constant weights).
    std::vector<std::optional<OlsFit>> slope_per_objective;
};

struct ReferenceSwapReport {
    // Same pipeline, two SFT references: demos toward objective 0 vs demos
    // toward objective 1 (both in the signed convention).
    ParetoPoint primary_ref_point;
    ParetoPoint alternate_ref_point;
    RewardVector primary_ref_expected;    // the references' own expected rewards
    RewardVector alternate_ref_expected;
};

}  // namespace prefalign
