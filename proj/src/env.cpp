#include "prefalign/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "prefalign/errors.hpp"
#include "prefalign/policy.hpp"

namespace prefalign {

namespace {

double column_mean(const std::vector<double>& m, int cols, int col, int rows) {
    double s = 0.0;
    for (int i = 0; i < rows; ++i) s += m[static_cast<std::size_t>(i) * cols + col];
    return s / rows;
}

double pearson(const std::vector<double>& m, int cols, int a, int b, int rows) {
    const double ma = column_mean(m, cols, a, rows);
    const double mb = column_mean(m, cols, b, rows);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (int i = 0; i < rows; ++i) {
        const double da = m[static_cast<std::size_t>(i) * cols + a] - ma;
        const double db = m[static_cast<std::size_t>(i) * cols + b] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

// Center to mean zero and scale to unit sample variance (1/V normalization).
void standardize(std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    for (double& x : v) x -= mean;
    double var = 0.0;
    for (double x : v) var += x * x;
    var /= n;
    const double s = std::sqrt(var);
    if (s > 0.0) {
        for (double& x : v) x /= s;
    }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

std::size_t Env::prompt_row(const Sequence& x) const {
    const std::int64_t code = vocab.prompt_index(x);
    const auto it = prompt_rows_.find(code);
    if (it == prompt_rows_.end()) {
        throw InvalidArgument("env: prompt not in the enumerated prompt set");
    }
    return it->second;
}

void Env::rebuild_prompt_index() {
    prompt_rows_.clear();
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        prompt_rows_.emplace(vocab.prompt_index(prompts[i]), i);
    }
}

Env build_env(std::uint64_t seed, const VocabSpec& vocab, int num_prompts, double rho,
              int num_objectives) {
    if (!(std::abs(rho) <= 1.0)) {
        throw InvalidArgument("build_env: |rho| must be <= 1");
    }
    if (num_prompts < 1) throw InvalidArgument("build_env: num_prompts must be >= 1");
    if (num_objectives < 1) throw InvalidArgument("build_env: need at least one objective");
    if (num_prompts > vocab.num_prompt_sequences()) {
        throw InvalidArgument("build_env: num_prompts exceeds the prompt space");
    }

    const int V = vocab.vocab_size;
    const int K = num_objectives;
    Env env;
    env.vocab = vocab;
    env.spec.num_objectives = K;
    env.spec.rho = rho;
    env.spec.seed = seed;

    Rng score_rng = Rng(seed).fork(0x5c03e5);
    std::vector<std::vector<double>> cols(K, std::vector<double>(V));
    for (auto& c : cols) {
        for (double& x : c) x = score_rng.normal();
    }
    // With enough vocabulary dimensions the columns are standardized and
    // orthogonalized so the sample correlation with column 0 is exactly rho;
    // tiny vocabularies fall back to the raw draws (correlation is then only
    // reported, not guaranteed).
    if (V - 1 >= K) {
        standardize(cols[0]);
        std::vector<std::vector<double>> basis;  // orthonormal residual directions
        basis.push_back(cols[0]);
        const double mix = std::sqrt(std::max(0.0, 1.0 - rho * rho));
        for (int k = 1; k < K; ++k) {
            std::vector<double> resid = cols[k];
            double rnorm = 0.0;
            for (int attempt = 0; attempt < 16; ++attempt) {
                const double mean = std::accumulate(resid.begin(), resid.end(), 0.0) / V;
                for (double& x : resid) x -= mean;
                for (const auto& b : basis) {
                    const double proj = dot(resid, b) / V;
                    for (int i = 0; i < V; ++i) resid[i] -= proj * b[i];
                }
                rnorm = std::sqrt(dot(resid, resid) / V);
                if (rnorm > 1e-8) break;
                for (double& x : resid) x = score_rng.normal();
            }
            for (double& x : resid) x /= rnorm;
            std::vector<double> out(V);
            for (int i = 0; i < V; ++i) out[i] = rho * cols[0][i] + mix * resid[i];
            basis.push_back(resid);
            cols[k] = std::move(out);
        }
    }
    env.spec.token_scores.resize(static_cast<std::size_t>(V) * K);
    for (int i = 0; i < V; ++i) {
        for (int k = 0; k < K; ++k) {
            env.spec.token_scores[static_cast<std::size_t>(i) * K + k] = cols[k][i];
        }
    }
    env.spec.measured_corr.resize(static_cast<std::size_t>(K) * K);
    for (int a = 0; a < K; ++a) {
        for (int b = 0; b < K; ++b) {
            env.spec.measured_corr[static_cast<std::size_t>(a) * K + b] =
                a == b ? 1.0 : pearson(env.spec.token_scores, K, a, b, V);
        }
    }

    // Distinct prompts by seeded rejection sampling.
    Rng prompt_rng = Rng(seed).fork(0x9c0317);
    std::unordered_set<std::int64_t> seen;
    while (static_cast<int>(env.prompts.size()) < num_prompts) {
        const std::int64_t idx =
            static_cast<std::int64_t>(prompt_rng.uniform_int(
                static_cast<std::uint64_t>(vocab.num_prompt_sequences())));
        if (seen.insert(idx).second) {
            env.prompts.push_back(vocab.prompt_from_index(idx));
        }
    }
    env.rebuild_prompt_index();

    Rng inter_rng = Rng(seed).fork(0x1a7e4);
    env.spec.prompt_interaction.resize(static_cast<std::size_t>(num_prompts) * K);
    for (double& v : env.spec.prompt_interaction) v = inter_rng.uniform(-0.25, 0.25);

    return env;
}

double reward_by_row(const Env& env, std::size_t prompt_row, const Sequence& y, int k) {
    if (k < 0 || k >= env.spec.num_objectives) {
        throw InvalidArgument("reward: objective index out of range");
    }
    if (prompt_row >= env.prompts.size()) {
        throw InvalidArgument("reward: prompt row out of range");
    }
    env.vocab.check_response(y);
    const int K = env.spec.num_objectives;
    double s = 0.0;
    for (int t : y) s += env.spec.token_scores[static_cast<std::size_t>(t) * K + k];
    s /= static_cast<double>(y.size());
    return s + env.spec.prompt_interaction[prompt_row * K + k];
}

double reward(const Env& env, const Sequence& x, const Sequence& y, int k) {
    return reward_by_row(env, env.prompt_row(x), y, k);
}

RewardVector reward_vector(const Env& env, const Sequence& x, const Sequence& y) {
    const std::size_t row = env.prompt_row(x);
    RewardVector r;
    r.values.resize(env.spec.num_objectives);
    for (int k = 0; k < env.spec.num_objectives; ++k) r.values[k] = reward_by_row(env, row, y, k);
    return r;
}

std::vector<double> reward_all(const Env& env, std::size_t prompt_row, int k, double sign) {
    const std::int64_t ny = env.vocab.num_responses();
    std::vector<double> out(static_cast<std::size_t>(ny));
    for (std::int64_t i = 0; i < ny; ++i) {
        out[static_cast<std::size_t>(i)] =
            sign * reward_by_row(env, prompt_row, env.vocab.response_from_index(i), k);
    }
    return out;
}

std::vector<DemoPair> gen_demonstrations(const Env& env, int k, double tau, int n_per_prompt,
                                         Rng& rng, double sign) {
    if (!(tau > 0.0)) throw InvalidArgument("gen_demonstrations: tau must be > 0");
    if (n_per_prompt < 1) throw InvalidArgument("gen_demonstrations: n_per_prompt must be >= 1");
    std::vector<DemoPair> demos;
    demos.reserve(env.prompts.size() * static_cast<std::size_t>(n_per_prompt));
    for (std::size_t row = 0; row < env.prompts.size(); ++row) {
        std::vector<double> logits = reward_all(env, row, k, sign);
        for (double& v : logits) v /= tau;
        const std::vector<double> probs = softmax(logits);
        for (int i = 0; i < n_per_prompt; ++i) {
            const double u = rng.next_double();
            double acc = 0.0;
            std::int64_t pick = static_cast<std::int64_t>(probs.size()) - 1;
            for (std::size_t j = 0; j < probs.size(); ++j) {
                acc += probs[j];
                if (u < acc) {
                    pick = static_cast<std::int64_t>(j);
                    break;
                }
            }
            demos.push_back({env.prompts[row], env.vocab.response_from_index(pick)});
        }
    }
    return demos;
}

std::vector<PreferencePair> gen_comparisons(const Env& env, int k, const PolicyParams& proposal,
                                            int n_per_prompt, Rng& rng, double sign) {
    if (n_per_prompt < 1) throw InvalidArgument("gen_comparisons: n_per_prompt must be >= 1");
    constexpr int kMaxRetries = 100;
    std::vector<PreferencePair> pairs;
    pairs.reserve(env.prompts.size() * static_cast<std::size_t>(n_per_prompt));
    for (std::size_t row = 0; row < env.prompts.size(); ++row) {
        const Sequence& x = env.prompts[row];
        for (int i = 0; i < n_per_prompt; ++i) {
            const Sequence y_a = sample_response(proposal, x, rng);
            Sequence y_b = sample_response(proposal, x, rng);
            int tries = 0;
            while (y_b == y_a) {
                if (++tries > kMaxRetries) {
                    throw GenerationFailure(
                        "gen_comparisons: could not draw a distinct second response after " +
                        std::to_string(kMaxRetries) + " retries (degenerate proposal?)");
                }
                y_b = sample_response(proposal, x, rng);
            }
            const double p_a = bt_probability(sign * reward_by_row(env, row, y_a, k),
                                              sign * reward_by_row(env, row, y_b, k));
            PreferencePair rec;
            rec.x = x;
            rec.objective = k;
            if (rng.bernoulli(p_a)) {
                rec.y_w = y_a;
                rec.y_l = y_b;
            } else {
                rec.y_w = y_b;
                rec.y_l = y_a;
            }
            pairs.push_back(std::move(rec));
        }
    }
    return pairs;
}

template <typename Record>
DatasetSplit<Record> split_dataset(const std::vector<Record>& records,
                                   const SplitFractions& fractions, std::uint64_t seed) {
    const double sum = fractions.train + fractions.val + fractions.test;
    if (fractions.train < 0.0 || fractions.val < 0.0 || fractions.test < 0.0 ||
        std::abs(sum - 1.0) > 1e-9) {
        throw InvalidArgument("split_dataset: fractions must be non-negative and sum to 1");
    }
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
        std::swap(order[i - 1], order[j]);
    }
    const std::size_t n = records.size();
    const std::size_t n_val = static_cast<std::size_t>(std::floor(fractions.val * n));
    const std::size_t n_test = static_cast<std::size_t>(std::floor(fractions.test * n));
    const std::size_t n_train = n - n_val - n_test;  // remainder goes to train
    DatasetSplit<Record> split;
    split.train.reserve(n_train);
    split.val.reserve(n_val);
    split.test.reserve(n_test);
    for (std::size_t i = 0; i < n; ++i) {
        const Record& r = records[order[i]];
        if (i < n_train) {
            split.train.push_back(r);
        } else if (i < n_train + n_val) {
            split.val.push_back(r);
        } else {
            split.test.push_back(r);
        }
    }
    return split;
}

template DatasetSplit<DemoPair> split_dataset<DemoPair>(const std::vector<DemoPair>&,
                                                        const SplitFractions&, std::uint64_t);
template DatasetSplit<PreferencePair> split_dataset<PreferencePair>(
    const std::vector<PreferencePair>&, const SplitFractions&, std::uint64_t);

}  // namespace prefalign
