#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "prefalign/math.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/sequence.hpp"

namespace prefalign {

class PolicyParams;

// Ground-truth per-objective rewards. Token scores are drawn per objective
// with cross-objective sample correlation rho (exact by construction when the
// vocabulary is large enough to orthogonalize, raw draws otherwise).
struct RewardSpec {
    int num_objectives = 2;
    double rho = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> token_scores;        // vocab_size x K, row-major
    std::vector<double> prompt_interaction;  // num_prompts x K, row-major
    std::vector<double> measured_corr;       // K x K Pearson matrix of token_scores
};

struct Env {
    RewardSpec spec;
    VocabSpec vocab;
    std::vector<Sequence> prompts;

    std::size_t prompt_row(const Sequence& x) const;
    void rebuild_prompt_index();

    int num_objectives() const { return spec.num_objectives; }

private:
    std::unordered_map<std::int64_t, std::size_t> prompt_rows_;
};

struct DemoPair {
    Sequence x;
    Sequence y;
};

struct PreferencePair {
    Sequence x;
    Sequence y_w;
    Sequence y_l;
    int objective = 0;
};

// Deterministic environment construction for a fixed seed.
Env build_env(std::uint64_t seed, const VocabSpec& vocab, int num_prompts, double rho,
              int num_objectives = 2);

// r_k(x, y): mean token score of the response plus the prompt interaction.
double reward(const Env& env, const Sequence& x, const Sequence& y, int k);
double reward_by_row(const Env& env, std::size_t prompt_row, const Sequence& y, int k);
RewardVector reward_vector(const Env& env, const Sequence& x, const Sequence& y);

// r_k(x, y) for every enumerated response of one prompt, scaled by sign.
std::vector<double> reward_all(const Env& env, std::size_t prompt_row, int k, double sign = 1.0);

// Demonstrations drawn exactly from softmax(sign * r_k(x, .) / tau) over the
// enumerated response space.
std::vector<DemoPair> gen_demonstrations(const Env& env, int k, double tau, int n_per_prompt,
                                         Rng& rng, double sign = 1.0);

// Pairs of distinct proposal draws labeled by the exact Bradley-Terry law on
// sign * r_k.
std::vector<PreferencePair> gen_comparisons(const Env& env, int k, const PolicyParams& proposal,
                                            int n_per_prompt, Rng& rng, double sign = 1.0);

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

template <typename Record>
struct DatasetSplit {
    std::vector<Record> train;
    std::vector<Record> val;
    std::vector<Record> test;
};

// Seeded shuffle then contiguous split; val/test sizes are floored and the
// remainder goes to train.
template <typename Record>
DatasetSplit<Record> split_dataset(const std::vector<Record>& records,
                                   const SplitFractions& fractions, std::uint64_t seed);

}  // namespace prefalign
