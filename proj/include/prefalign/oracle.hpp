#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prefalign/env.hpp"
#include "prefalign/math.hpp"
#include "prefalign/pareto.hpp"
#include "prefalign/policy.hpp"
#include "prefalign/sequence.hpp"

namespace prefalign {

// Reward closure over the enumerated prompt set.
using RewardFn = std::function<double(std::size_t prompt_row, const Sequence& y)>;

// Exact KL-regularized optimum held as per-prompt tables over the enumerated
// response space: pi*(y|x) = ref(y|x) exp(r(x,y)/beta) / Z(x).
struct ExactPolicy {
    std::vector<std::vector<double>> log_probs;  // [prompt_row][response_index]
    std::vector<std::vector<double>> probs;
    std::vector<double> log_partition;           // log Z(x) per prompt
    double beta = 0.0;
    std::string reward_desc;
    VocabSpec vocab;
    std::vector<Sequence> prompts;
};

// log Z(x) = logsumexp_y(log ref(y|x) + r(x,y)/beta).
double log_partition_fn(const PolicyParams& ref, const std::vector<Sequence>& prompts,
                        const RewardFn& reward, double beta, std::size_t prompt_row);

// Z(x) itself; may overflow to +inf for extreme rewards/beta (use the log form
// in that regime).
double partition_fn(const PolicyParams& ref, const std::vector<Sequence>& prompts,
                    const RewardFn& reward, double beta, std::size_t prompt_row);

ExactPolicy optimal_policy_exact(const PolicyParams& ref, const std::vector<Sequence>& prompts,
                                 const RewardFn& reward, double beta,
                                 std::string reward_desc = "");

// Scalarized optimum for weight vector w; signs (one per objective, default
// +1) orient each raw environment reward before scalarizing.
ExactPolicy optimal_policy_multi(const PolicyParams& ref, const Env& env, const WeightVector& w,
                                 double beta, const std::vector<double>& signs = {});

// Builds a signed scalarized reward closure over the env.
RewardFn scalarized_reward_fn(const Env& env, const WeightVector& w,
                              const std::vector<double>& signs = {});
RewardFn objective_reward_fn(const Env& env, int k, double sign = 1.0);

// max_{x,y} | beta log(pi*/ref) + beta log Z - r |; algebraically zero.
double reparam_identity_check(const PolicyParams& ref, const std::vector<Sequence>& prompts,
                              const RewardFn& reward, double beta);

// Residual of one prompt row given explicit tables (lets tests corrupt pi*).
double reparam_residual_row(std::span<const double> log_ref, std::span<const double> log_pi,
                            double log_partition, std::span<const double> rewards, double beta);

// max over prompts and response pairs of |sigma(r_a - r_b) - sigma(beta(s_a - s_b))|
// where s = log pi* - log ref; the partition function cancels, so this is ~0.
double preference_identity_check(const PolicyParams& ref, const Env& env, int k, double beta,
                                 double sign = 1.0);

// Per-prompt response distributions of an arbitrary policy.
std::vector<std::vector<double>> policy_log_distribution(const PolicyParams& policy,
                                                         const std::vector<Sequence>& prompts);
std::vector<std::vector<double>> policy_distribution(const PolicyParams& policy,
                                                     const std::vector<Sequence>& prompts);

// E_{x uniform, y~pi}[sign * r_k(x,y)] from per-prompt probability tables.
double exact_expected_reward(const std::vector<std::vector<double>>& probs, const Env& env, int k,
                             double sign = 1.0);
double exact_expected_reward(const PolicyParams& policy, const Env& env, int k, double sign = 1.0);
double exact_expected_reward(const ExactPolicy& policy, const Env& env, int k, double sign = 1.0);

// KL(p || q) between log tables, per prompt.
double kl_between_log_rows(std::span<const double> log_p, std::span<const double> log_q);
std::vector<double> kl_per_prompt(const ExactPolicy& p_star, const PolicyParams& q);
std::vector<double> kl_per_prompt(const PolicyParams& p, const PolicyParams& q,
                                  const std::vector<Sequence>& prompts);

// Exact value of the KL-regularized alignment objective
// E[scalarized reward] - beta * mean KL(pi || ref).
double exact_alignment_objective(const std::vector<std::vector<double>>& log_probs,
                                 const PolicyParams& ref, const Env& env, const WeightVector& w,
                                 double beta, const std::vector<double>& signs = {});

// One exact ParetoPoint per grid weight.
std::vector<ParetoPoint> exact_pareto_front(const PolicyParams& ref, const Env& env, double beta,
                                            const std::vector<WeightVector>& grid,
                                            const std::vector<double>& signs = {});

// True when no point is dominated by another beyond the slack.
bool is_non_dominated(const std::vector<ParetoPoint>& points, double slack = 1e-9);

}  // namespace prefalign
