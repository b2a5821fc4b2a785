#include "prefalign/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prefalign/errors.hpp"

namespace prefalign {

namespace {

std::vector<double> resolve_signs(const std::vector<double>& signs, int k_count) {
    if (signs.empty()) return std::vector<double>(k_count, 1.0);
    if (static_cast<int>(signs.size()) != k_count) {
        throw InvalidArgument("objective signs: size mismatch with objective count");
    }
    return signs;
}

}  // namespace

RewardFn scalarized_reward_fn(const Env& env, const WeightVector& w,
                              const std::vector<double>& signs) {
    if (static_cast<int>(w.size()) != env.num_objectives()) {
        throw InvalidArgument("scalarized_reward_fn: weight dimension mismatch");
    }
    const std::vector<double> sg = resolve_signs(signs, env.num_objectives());
    return [&env, w, sg](std::size_t row, const Sequence& y) {
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            acc += w[k] * sg[k] * reward_by_row(env, row, y, static_cast<int>(k));
        }
        return acc;
    };
}

RewardFn objective_reward_fn(const Env& env, int k, double sign) {
    if (k < 0 || k >= env.num_objectives()) {
        throw InvalidArgument("objective_reward_fn: objective index out of range");
    }
    return [&env, k, sign](std::size_t row, const Sequence& y) {
        return sign * reward_by_row(env, row, y, k);
    };
}

double log_partition_fn(const PolicyParams& ref, const std::vector<Sequence>& prompts,
                        const RewardFn& reward, double beta, std::size_t prompt_row) {
    if (!(beta > 0.0)) throw InvalidArgument("partition function: beta must be > 0");
    if (prompt_row >= prompts.size()) throw InvalidArgument("partition function: bad prompt row");
    const Sequence& x = prompts[prompt_row];
    const std::vector<double> log_ref = log_prob_all(ref, x);
    const std::int64_t ny = ref.vocab.num_responses();
    std::vector<double> terms(static_cast<std::size_t>(ny));
    for (std::int64_t i = 0; i < ny; ++i) {
        const Sequence y = ref.vocab.response_from_index(i);
        terms[static_cast<std::size_t>(i)] =
            log_ref[static_cast<std::size_t>(i)] + reward(prompt_row, y) / beta;
    }
    return log_sum_exp(terms);
}

double partition_fn(const PolicyParams& ref, const std::vector<Sequence>& prompts,
                    const RewardFn& reward, double beta, std::size_t prompt_row) {
    return std::exp(log_partition_fn(ref, prompts, reward, beta, prompt_row));
}

ExactPolicy optimal_policy_exact(const PolicyParams& ref, const std::vector<Sequence>& prompts,
                                 const RewardFn& reward, double beta, std::string reward_desc) {
    if (!(beta > 0.0)) throw InvalidArgument("optimal_policy_exact: beta must be > 0");
    if (prompts.empty()) throw InvalidArgument("optimal_policy_exact: empty prompt set");
    ExactPolicy out;
    out.beta = beta;
    out.reward_desc = std::move(reward_desc);
    out.vocab = ref.vocab;
    out.prompts = prompts;
    const std::int64_t ny = ref.vocab.num_responses();
    out.log_probs.resize(prompts.size());
    out.probs.resize(prompts.size());
    out.log_partition.resize(prompts.size());
    for (std::size_t row = 0; row < prompts.size(); ++row) {
        const std::vector<double> log_ref = log_prob_all(ref, prompts[row]);
        std::vector<double> tilted(static_cast<std::size_t>(ny));
        for (std::int64_t i = 0; i < ny; ++i) {
            const Sequence y = ref.vocab.response_from_index(i);
            tilted[static_cast<std::size_t>(i)] =
                log_ref[static_cast<std::size_t>(i)] + reward(row, y) / beta;
        }
        const double log_z = log_sum_exp(tilted);
        out.log_partition[row] = log_z;
        std::vector<double>& lp = out.log_probs[row];
        lp.resize(tilted.size());
        std::vector<double>& p = out.probs[row];
        p.resize(tilted.size());
        double total = 0.0;
        for (std::size_t i = 0; i < tilted.size(); ++i) {
            lp[i] = tilted[i] - log_z;
            p[i] = std::exp(lp[i]);
            total += p[i];
        }
        // Kill the last ulps of normalization error in the linear table.
        for (double& v : p) v /= total;
    }
    return out;
}

ExactPolicy optimal_policy_multi(const PolicyParams& ref, const Env& env, const WeightVector& w,
                                 double beta, const std::vector<double>& signs) {
    return optimal_policy_exact(ref, env.prompts, scalarized_reward_fn(env, w, signs), beta,
                                "scalarized");
}

double reparam_residual_row(std::span<const double> log_ref, std::span<const double> log_pi,
                            double log_partition, std::span<const double> rewards, double beta) {
    if (log_ref.size() != log_pi.size() || log_ref.size() != rewards.size()) {
        throw InvalidArgument("reparam_residual_row: size mismatch");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < log_ref.size(); ++i) {
        const double r_hat = beta * (log_pi[i] - log_ref[i]) + beta * log_partition;
        worst = std::max(worst, std::abs(r_hat - rewards[i]));
    }
    return worst;
}

double reparam_identity_check(const PolicyParams& ref, const std::vector<Sequence>& prompts,
                              const RewardFn& reward, double beta) {
    const ExactPolicy star = optimal_policy_exact(ref, prompts, reward, beta);
    const std::int64_t ny = ref.vocab.num_responses();
    double worst = 0.0;
    for (std::size_t row = 0; row < prompts.size(); ++row) {
        const std::vector<double> log_ref = log_prob_all(ref, prompts[row]);
        std::vector<double> rewards(static_cast<std::size_t>(ny));
        for (std::int64_t i = 0; i < ny; ++i) {
            rewards[static_cast<std::size_t>(i)] =
                reward(row, ref.vocab.response_from_index(i));
        }
        worst = std::max(worst, reparam_residual_row(log_ref, star.log_probs[row],
                                                     star.log_partition[row], rewards, beta));
    }
    return worst;
}

double preference_identity_check(const PolicyParams& ref, const Env& env, int k, double beta,
                                 double sign) {
    const RewardFn reward = objective_reward_fn(env, k, sign);
    const ExactPolicy star = optimal_policy_exact(ref, env.prompts, reward, beta);
    const std::int64_t ny = env.vocab.num_responses();
    double worst = 0.0;
    for (std::size_t row = 0; row < env.prompts.size(); ++row) {
        const std::vector<double> log_ref = log_prob_all(ref, env.prompts[row]);
        std::vector<double> r(static_cast<std::size_t>(ny));
        std::vector<double> s(static_cast<std::size_t>(ny));
        for (std::int64_t i = 0; i < ny; ++i) {
            r[static_cast<std::size_t>(i)] = reward(row, env.vocab.response_from_index(i));
            s[static_cast<std::size_t>(i)] =
                star.log_probs[row][static_cast<std::size_t>(i)] -
                log_ref[static_cast<std::size_t>(i)];
        }
        for (std::size_t a = 0; a + 1 < static_cast<std::size_t>(ny); ++a) {
            for (std::size_t b = a + 1; b < static_cast<std::size_t>(ny); ++b) {
                const double p_reward = logistic(r[a] - r[b]);
                const double p_policy = logistic(beta * (s[a] - s[b]));
                worst = std::max(worst, std::abs(p_reward - p_policy));
            }
        }
    }
    return worst;
}

std::vector<std::vector<double>> policy_log_distribution(const PolicyParams& policy,
                                                         const std::vector<Sequence>& prompts) {
    std::vector<std::vector<double>> out;
    out.reserve(prompts.size());
    for (const Sequence& x : prompts) out.push_back(log_prob_all(policy, x));
    return out;
}

std::vector<std::vector<double>> policy_distribution(const PolicyParams& policy,
                                                     const std::vector<Sequence>& prompts) {
    std::vector<std::vector<double>> out = policy_log_distribution(policy, prompts);
    for (auto& row : out) {
        for (double& v : row) v = std::exp(v);
    }
    return out;
}

double exact_expected_reward(const std::vector<std::vector<double>>& probs, const Env& env, int k,
                             double sign) {
    if (probs.size() != env.prompts.size()) {
        throw InvalidArgument("exact_expected_reward: prompt row mismatch");
    }
    const std::int64_t ny = env.vocab.num_responses();
    double acc = 0.0;
    for (std::size_t row = 0; row < probs.size(); ++row) {
        if (static_cast<std::int64_t>(probs[row].size()) != ny) {
            throw InvalidArgument("exact_expected_reward: response table size mismatch");
        }
        const std::vector<double> r = reward_all(env, row, k, sign);
        double ev = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) ev += probs[row][i] * r[i];
        acc += ev;
    }
    return acc / static_cast<double>(probs.size());
}

double exact_expected_reward(const PolicyParams& policy, const Env& env, int k, double sign) {
    return exact_expected_reward(policy_distribution(policy, env.prompts), env, k, sign);
}

double exact_expected_reward(const ExactPolicy& policy, const Env& env, int k, double sign) {
    return exact_expected_reward(policy.probs, env, k, sign);
}

double kl_between_log_rows(std::span<const double> log_p, std::span<const double> log_q) {
    if (log_p.size() != log_q.size()) {
        throw InvalidArgument("kl_between_log_rows: size mismatch");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < log_p.size(); ++i) {
        const double p = std::exp(log_p[i]);
        if (p == 0.0) continue;
        kl += p * (log_p[i] - log_q[i]);
    }
    return std::max(kl, 0.0);
}

std::vector<double> kl_per_prompt(const ExactPolicy& p_star, const PolicyParams& q) {
    std::vector<double> out;
    out.reserve(p_star.prompts.size());
    for (std::size_t row = 0; row < p_star.prompts.size(); ++row) {
        const std::vector<double> log_q = log_prob_all(q, p_star.prompts[row]);
        out.push_back(kl_between_log_rows(p_star.log_probs[row], log_q));
    }
    return out;
}

std::vector<double> kl_per_prompt(const PolicyParams& p, const PolicyParams& q,
                                  const std::vector<Sequence>& prompts) {
    std::vector<double> out;
    out.reserve(prompts.size());
    for (const Sequence& x : prompts) {
        out.push_back(kl_between_log_rows(log_prob_all(p, x), log_prob_all(q, x)));
    }
    return out;
}

double exact_alignment_objective(const std::vector<std::vector<double>>& log_probs,
                                 const PolicyParams& ref, const Env& env, const WeightVector& w,
                                 double beta, const std::vector<double>& signs) {
    if (log_probs.size() != env.prompts.size()) {
        throw InvalidArgument("exact_alignment_objective: prompt row mismatch");
    }
    const RewardFn reward = scalarized_reward_fn(env, w, signs);
    const std::int64_t ny = env.vocab.num_responses();
    double acc = 0.0;
    for (std::size_t row = 0; row < log_probs.size(); ++row) {
        const std::vector<double> log_ref = log_prob_all(ref, env.prompts[row]);
        double value = 0.0;
        for (std::int64_t i = 0; i < ny; ++i) {
            const std::size_t ii = static_cast<std::size_t>(i);
            const double p = std::exp(log_probs[row][ii]);
            if (p == 0.0) continue;
            const Sequence y = env.vocab.response_from_index(i);
            value += p * (reward(row, y) - beta * (log_probs[row][ii] - log_ref[ii]));
        }
        acc += value;
    }
    return acc / static_cast<double>(log_probs.size());
}

std::vector<ParetoPoint> exact_pareto_front(const PolicyParams& ref, const Env& env, double beta,
                                            const std::vector<WeightVector>& grid,
                                            const std::vector<double>& signs) {
    if (grid.empty()) throw InvalidArgument("exact_pareto_front: empty weight grid");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<ParetoPoint> points;
    points.reserve(grid.size());
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const WeightVector& w = grid[gi];
        const ExactPolicy star = optimal_policy_multi(ref, env, w, beta, signs);
        ParetoPoint pt;
        pt.w = w;
        pt.oracle = true;
        pt.kl_to_oracle = 0.0;
        pt.run_id = "oracle-" + std::to_string(gi);
        const std::vector<double> sg = resolve_signs(signs, env.num_objectives());
        pt.exact_expected.values.resize(env.num_objectives());
        pt.mc_expected.values.assign(env.num_objectives(), nan);
        pt.mc_stderr.values.assign(env.num_objectives(), nan);
        for (int k = 0; k < env.num_objectives(); ++k) {
            pt.exact_expected.values[k] = exact_expected_reward(star, env, k, sg[k]);
        }
        points.push_back(std::move(pt));
    }
    return points;
}

bool is_non_dominated(const std::vector<ParetoPoint>& points, double slack) {
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (i == j) continue;
            const auto& a = points[i].exact_expected.values;
            const auto& b = points[j].exact_expected.values;
            bool weakly_better = true;
            bool strictly_better = false;
            for (std::size_t k = 0; k < a.size(); ++k) {
                if (b[k] < a[k] - slack) weakly_better = false;
                if (b[k] > a[k] + slack) strictly_better = true;
            }
            if (weakly_better && strictly_better) return false;  // j dominates i
        }
    }
    return true;
}

}  // namespace prefalign
