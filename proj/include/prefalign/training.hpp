#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "prefalign/env.hpp"
#include "prefalign/math.hpp"
#include "prefalign/policy.hpp"

namespace prefalign {

enum class TrainMode { minibatch, population };
enum class OptimizerKind { auto_select, plain, adaptive };

struct TrainConfig {
    double beta = 0.1;
    double step_size = 0.1;
    int steps = 1000;
    int batch_size = 0;  // minibatch mode; <= 0 means the full dataset each step
    TrainMode mode = TrainMode::population;
    std::uint64_t seed = 0;
    WeightVector w;                   // MODPO only
    bool freeze_adapter_base = true;  // applied to an attached adapter
    OptimizerKind optimizer = OptimizerKind::auto_select;
    int log_every = 1;
};

struct TrainReport {
    std::vector<std::pair<int, double>> loss_curve;
    std::vector<std::pair<int, double>> grad_norm_curve;
    PolicyParams final_params;
    double wall_time_sec = 0.0;
    int steps_run = 0;
    double final_loss = 0.0;
};

// A DPO-trained policy standing in for the reward of one objective via
// r_phi(x,y) = beta * log(pi_phi(y|x) / pi_ref(y|x)).
struct ImplicitRewardModel {
    PolicyParams phi;
    double beta = 0.1;
    int objective = 0;
};

// Exact-population preference weights: every ordered distinct response pair
// of every prompt, weighted by the Bradley-Terry probability of the signed
// objective reward. Built once and shared across training runs.
struct PopulationPrefs {
    const Env* env = nullptr;
    int objective = 0;
    double sign = 1.0;
    std::vector<std::vector<double>> rewards;   // [prompt_row][response]
    std::vector<std::vector<double>> bt_upper;  // [prompt_row][pair a<b, row-major]

    static PopulationPrefs build(const Env& env, int objective, double sign = 1.0);
};

// Either empirical records or an exact population, depending on cfg.mode.
struct PreferenceData {
    const std::vector<PreferencePair>* records = nullptr;
    const PopulationPrefs* population = nullptr;

    static PreferenceData from_records(const std::vector<PreferencePair>& r) {
        return PreferenceData{&r, nullptr};
    }
    static PreferenceData from_population(const PopulationPrefs& p) {
        return PreferenceData{nullptr, &p};
    }
};

// --- losses -----------------------------------------------------------------

// beta * ((log pi(yw|x) - log ref(yw|x)) - (log pi(yl|x) - log ref(yl|x)))
double dpo_record_logit(const PolicyParams& policy, const PolicyParams& ref,
                        const PreferencePair& rec, double beta);

double dpo_loss(const PolicyParams& policy, const PolicyParams& ref,
                const std::vector<PreferencePair>& batch, double beta);

// beta * (log pi_phi(y|x) - log pi_ref(y|x))
double implicit_reward(const PolicyParams& phi, const PolicyParams& ref, double beta,
                       const Sequence& x, const Sequence& y);

// w_{-k}^T (r_phi(x, y_w) - r_phi(x, y_l)) over the K-1 other objectives.
double modpo_margin(const std::vector<ImplicitRewardModel>& reward_models,
                    const PolicyParams& ref, const WeightVector& w, int k, const Sequence& x,
                    const Sequence& y_w, const Sequence& y_l);

double modpo_record_logit(const PolicyParams& policy, const PolicyParams& ref,
                          const PreferencePair& rec, const WeightVector& w, double beta,
                          const std::vector<ImplicitRewardModel>& reward_models);

double modpo_loss(const PolicyParams& policy, const PolicyParams& ref,
                  const std::vector<PreferencePair>& batch, const WeightVector& w, double beta,
                  const std::vector<ImplicitRewardModel>& reward_models);

// --- trainers ---------------------------------------------------------------

TrainReport sft_train(const PolicyParams& init, const std::vector<DemoPair>& demos,
                      const TrainConfig& cfg);

TrainReport dpo_train(const PolicyParams& init, const PolicyParams& ref,
                      const PreferenceData& data, const TrainConfig& cfg);

TrainReport modpo_train(const PolicyParams& init, const PolicyParams& ref,
                        const PreferenceData& data,
                        const std::vector<ImplicitRewardModel>& reward_models,
                        const TrainConfig& cfg);

// --- gradient checking --------------------------------------------------------

struct LossClosure {
    std::function<double(PolicyParams&)> value;
    std::function<double(PolicyParams&, std::span<double>)> value_and_grad;
};

LossClosure make_sft_closure(const std::vector<DemoPair>& demos);
LossClosure make_dpo_closure(const PolicyParams& ref, const std::vector<PreferencePair>& batch,
                             double beta);
LossClosure make_modpo_closure(const PolicyParams& ref, const std::vector<PreferencePair>& batch,
                               const WeightVector& w, double beta,
                               const std::vector<ImplicitRewardModel>& reward_models);

// Central finite differences against the analytic gradient; checks every
// trainable coordinate when there are at most `exhaustive_limit`, otherwise
// 200 seeded random coordinates. Returns the max relative error with
// denominator max(|g|, 1e-8).
double grad_check(const PolicyParams& policy, const LossClosure& loss, double fd_step = 1e-5,
                  std::size_t exhaustive_limit = 4096, std::uint64_t seed = 17);

// Internal pair kernel, exposed for tests: loss and d/du of the normalized
// population preference objective over one prompt's scalar response scores.
double population_pair_objective(std::span<const double> u, std::span<const double> bt_upper,
                                 std::span<double> grad_u, bool want_loss);

}  // namespace prefalign
