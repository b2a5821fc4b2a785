#include "prefalign/evaluation.hpp"

#include <cmath>
#include <limits>

#include "prefalign/errors.hpp"

namespace prefalign {

EvalResult eval_policy(const PolicyParams& policy, const Env& env, const PolicyParams& ref,
                       const EvalSpec& spec) {
    if (!spec.exact && spec.n_mc <= 0) {
        throw InvalidArgument("eval_policy: nothing to do with exact disabled and n_mc == 0");
    }
    if (static_cast<int>(spec.w.size()) != env.num_objectives()) {
        throw InvalidArgument("eval_policy: weight dimension mismatch");
    }
    const int K = env.num_objectives();
    std::vector<double> signs = spec.signs;
    if (signs.empty()) signs.assign(K, 1.0);

    EvalResult res;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    res.exact.values.assign(K, nan);
    res.mc.values.assign(K, nan);
    res.mc_stderr.values.assign(K, nan);

    std::vector<std::vector<double>> log_rows;
    if (spec.exact) {
        log_rows = policy_log_distribution(policy, env.prompts);
        std::vector<std::vector<double>> probs = log_rows;
        for (auto& row : probs) {
            for (double& v : row) v = std::exp(v);
        }
        for (int k = 0; k < K; ++k) {
            res.exact.values[k] = exact_expected_reward(probs, env, k, signs[k]);
        }
        const ExactPolicy star = optimal_policy_multi(ref, env, spec.w, spec.beta, signs);
        res.kl_per_prompt.reserve(env.prompts.size());
        for (std::size_t row = 0; row < env.prompts.size(); ++row) {
            res.kl_per_prompt.push_back(
                kl_between_log_rows(star.log_probs[row], log_rows[row]));
        }
        double kl = 0.0;
        for (double v : res.kl_per_prompt) kl += v;
        res.kl_mean = kl / static_cast<double>(res.kl_per_prompt.size());
        res.objective_value =
            exact_alignment_objective(log_rows, ref, env, spec.w, spec.beta, signs);
    }

    if (spec.n_mc > 0) {
        // Per-prompt sample means, then a uniform average across prompts; the
        // standard error follows from the per-prompt sample variances.
        std::vector<double> mean_acc(K, 0.0);
        std::vector<double> var_acc(K, 0.0);
        for (std::size_t row = 0; row < env.prompts.size(); ++row) {
            Rng rng = Rng(spec.seed).fork(0xe7a1 + row);
            std::vector<double> sum(K, 0.0), sumsq(K, 0.0);
            for (int i = 0; i < spec.n_mc; ++i) {
                const Sequence y = sample_response(policy, env.prompts[row], rng);
                for (int k = 0; k < K; ++k) {
                    const double r = signs[k] * reward_by_row(env, row, y, k);
                    sum[k] += r;
                    sumsq[k] += r * r;
                }
            }
            for (int k = 0; k < K; ++k) {
                const double m = sum[k] / spec.n_mc;
                mean_acc[k] += m;
                if (spec.n_mc > 1) {
                    const double var = (sumsq[k] - spec.n_mc * m * m) / (spec.n_mc - 1);
                    var_acc[k] += std::max(var, 0.0) / spec.n_mc;
                }
            }
        }
        const double np = static_cast<double>(env.prompts.size());
        for (int k = 0; k < K; ++k) {
            res.mc.values[k] = mean_acc[k] / np;
            res.mc_stderr.values[k] = std::sqrt(var_acc[k]) / np;
        }
    }
    return res;
}

OlsFit ols_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw InvalidArgument("ols_slope: size mismatch");
    const std::size_t n = xs.size();
    if (n < 3) throw InvalidArgument("ols_slope: need at least 3 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx == 0.0) throw InvalidArgument("ols_slope: xs are degenerate");
    OlsFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double resid = ys[i] - (fit.intercept + fit.slope * xs[i]);
        ssr += resid * resid;
    }
    fit.stderr_slope = std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
    return fit;
}

}  // namespace prefalign
