#include "prefalign/pipeline.hpp"

#include <cmath>

#include "prefalign/errors.hpp"
#include "prefalign/oracle.hpp"

namespace prefalign {

Env make_env(const RunConfig& cfg) {
    return build_env(cfg.env.seed, cfg.env.vocab(), cfg.env.num_prompts, cfg.env.rho,
                     cfg.env.num_objectives);
}

PolicyParams make_policy(const RunConfig& cfg, const Env& env) {
    PolicyParams p;
    if (cfg.policy.mode == PolicyMode::tabular) {
        p = make_tabular_uniform(env.vocab, env.prompts, cfg.policy.init_seed);
    } else {
        p = make_neural(env.vocab, cfg.policy.embed_dim, cfg.policy.hidden_dim,
                        cfg.policy.init_seed);
        if (cfg.policy.adapter.enabled) {
            attach_adapter(p, cfg.policy.adapter.rank, cfg.policy.adapter.freeze_base,
                           cfg.policy.adapter.seed);
        }
    }
    return p;
}

PolicyParams uniform_policy(const Env& env) {
    return make_tabular_uniform(env.vocab, env.prompts, 0);
}

Datasets gen_datasets(const RunConfig& cfg, const Env& env, int demo_objective,
                      const PolicyParams* proposal) {
    if (demo_objective < 0 || demo_objective >= env.num_objectives()) {
        throw InvalidArgument("gen_datasets: demo objective out of range");
    }
    Datasets out;
    Rng root(cfg.data.seed);
    Rng demo_rng = root.fork(0xd340 + static_cast<std::uint64_t>(demo_objective));
    out.demos = gen_demonstrations(env, demo_objective, cfg.data.demo_temperature,
                                   cfg.data.n_demos_per_prompt, demo_rng,
                                   cfg.env.objective_signs[demo_objective]);
    out.demo_split = split_dataset(out.demos, cfg.data.split_fractions, cfg.data.split_seed);

    PolicyParams uniform = uniform_policy(env);
    const PolicyParams* prop = &uniform;
    if (cfg.data.proposal == "sft") {
        if (proposal == nullptr) {
            throw DependencyMissing("gen_datasets: proposal 'sft' requires the SFT policy");
        }
        prop = proposal;
    }
    out.comparisons.resize(env.num_objectives());
    out.comparison_splits.resize(env.num_objectives());
    for (int k = 0; k < env.num_objectives(); ++k) {
        Rng comp_rng = root.fork(0xc0310 + static_cast<std::uint64_t>(k));
        out.comparisons[k] =
            gen_comparisons(env, k, *prop, cfg.data.n_comparisons_per_prompt, comp_rng,
                            cfg.env.objective_signs[k]);
        out.comparison_splits[k] =
            split_dataset(out.comparisons[k], cfg.data.split_fractions, cfg.data.split_seed);
    }
    return out;
}

const PopulationPrefs& PopulationCache::get(const Env& env, int objective, double sign) {
    const auto key = std::make_pair(objective, sign >= 0.0 ? 1 : -1);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
        it = cache_.emplace(key, std::make_unique<PopulationPrefs>(
                                      PopulationPrefs::build(env, objective, sign)))
                 .first;
    }
    return *it->second;
}

TrainReport run_sft(const RunConfig& cfg, const Env& env, const Datasets& data) {
    const PolicyParams init = make_policy(cfg, env);
    const std::vector<DemoPair>& demos = cfg.sft.train.mode == TrainMode::population
                                             ? data.demos
                                             : data.demo_split.train;
    return sft_train(init, demos, cfg.sft.train);
}

TrainReport run_dpo(const RunConfig& cfg, const PhaseConfig& phase, const Env& env,
                    const Datasets& data, const PolicyParams& ref, PopulationCache& pop) {
    const int k = phase.objective;
    if (phase.train.mode == TrainMode::population) {
        const PopulationPrefs& prefs = pop.get(env, k, cfg.env.objective_signs[k]);
        return dpo_train(ref, ref, PreferenceData::from_population(prefs), phase.train);
    }
    return dpo_train(ref, ref, PreferenceData::from_records(data.comparison_splits[k].train),
                     phase.train);
}

std::vector<ImplicitRewardModel> run_reward_models(const RunConfig& cfg, const Env& env,
                                                   const Datasets& data, const PolicyParams& ref,
                                                   int except_k, PopulationCache& pop,
                                                   std::vector<TrainReport>* reports) {
    std::vector<ImplicitRewardModel> models;
    for (int k = 0; k < env.num_objectives(); ++k) {
        if (k == except_k) continue;
        PhaseConfig phase = cfg.reward;
        phase.objective = k;
        TrainReport rep = run_dpo(cfg, phase, env, data, ref, pop);
        ImplicitRewardModel m;
        m.beta = cfg.reward.train.beta;
        m.objective = k;
        m.phi = rep.final_params;
        models.push_back(std::move(m));
        if (reports) reports->push_back(std::move(rep));
    }
    return models;
}

TrainReport run_modpo(const RunConfig& cfg, const Env& env, const Datasets& data,
                      const PolicyParams& ref, const std::vector<ImplicitRewardModel>& models,
                      const WeightVector& w, PopulationCache& pop) {
    TrainConfig train = cfg.modpo.train;
    train.w = w;
    const int k = cfg.modpo.objective;
    if (train.mode == TrainMode::population) {
        const PopulationPrefs& prefs = pop.get(env, k, cfg.env.objective_signs[k]);
        return modpo_train(ref, ref, PreferenceData::from_population(prefs), models, train);
    }
    return modpo_train(ref, ref, PreferenceData::from_records(data.comparison_splits[k].train),
                       models, train);
}

PipelineResult run_pipeline(const RunConfig& cfg, int demo_objective) {
    PipelineResult result;
    result.env = make_env(cfg);
    const int demo_k = demo_objective >= 0 ? demo_objective : cfg.data.demo_objective;
    const PolicyParams* proposal = nullptr;
    PolicyParams sft_for_proposal;
    if (cfg.data.proposal == "sft") {
        // Demonstrations cannot depend on the SFT policy; generate them first,
        // train SFT, then draw comparisons from it.
        Datasets demo_only;
        Rng demo_rng = Rng(cfg.data.seed).fork(0xd340 + static_cast<std::uint64_t>(demo_k));
        demo_only.demos = gen_demonstrations(result.env, demo_k, cfg.data.demo_temperature,
                                             cfg.data.n_demos_per_prompt, demo_rng,
                                             cfg.env.objective_signs[demo_k]);
        demo_only.demo_split =
            split_dataset(demo_only.demos, cfg.data.split_fractions, cfg.data.split_seed);
        result.sft_report = run_sft(cfg, result.env, demo_only);
        sft_for_proposal = result.sft_report.final_params;
        proposal = &sft_for_proposal;
        result.data = gen_datasets(cfg, result.env, demo_k, proposal);
    } else {
        result.data = gen_datasets(cfg, result.env, demo_k);
        result.sft_report = run_sft(cfg, result.env, result.data);
    }
    result.sft = result.sft_report.final_params;

    PopulationCache pop;
    result.reward_models = run_reward_models(cfg, result.env, result.data, result.sft,
                                             cfg.modpo.objective, pop, &result.reward_reports);
    result.modpo_report = run_modpo(cfg, result.env, result.data, result.sft,
                                    result.reward_models, cfg.modpo.train.w, pop);
    result.modpo = result.modpo_report.final_params;
    return result;
}

ParetoPoint evaluate_point(const PolicyParams& policy, const Env& env, const PolicyParams& ref,
                           const WeightVector& w, double beta, const std::vector<double>& signs,
                           int n_mc, std::uint64_t seed, const std::string& run_id) {
    EvalSpec spec;
    spec.w = w;
    spec.beta = beta;
    spec.n_mc = n_mc;
    spec.seed = seed;
    spec.signs = signs;
    const EvalResult res = eval_policy(policy, env, ref, spec);
    ParetoPoint pt;
    pt.w = w;
    pt.exact_expected = res.exact;
    pt.mc_expected = res.mc;
    pt.mc_stderr = res.mc_stderr;
    double kl = 0.0;
    for (double v : res.kl_per_prompt) kl += v;
    pt.kl_to_oracle = res.kl_per_prompt.empty() ? 0.0 : kl / res.kl_per_prompt.size();
    pt.run_id = run_id;
    return pt;
}

SweepReport weight_sweep(const RunConfig& cfg) {
    if (cfg.env.num_objectives != 2) {
        throw InvalidArgument("weight_sweep: the sweep harness expects two objectives");
    }
    SweepReport report;
    report.swept_objective = cfg.sweep.swept_objective;

    Env env = make_env(cfg);
    Datasets data = gen_datasets(cfg, env, cfg.data.demo_objective);
    TrainReport sft_rep = run_sft(cfg, env, data);
    const PolicyParams& sft = sft_rep.final_params;
    PopulationCache pop;
    const std::vector<ImplicitRewardModel> models =
        run_reward_models(cfg, env, data, sft, cfg.modpo.objective, pop);

    const int swept = cfg.sweep.swept_objective;
    const int other = 1 - swept;
    for (std::size_t gi = 0; gi < cfg.sweep.grid.size(); ++gi) {
        const double wp = cfg.sweep.grid[gi];
        std::vector<double> wv(2, 0.0);
        wv[swept] = wp;
        wv[other] = 1.0 - wp;
        const WeightVector w = WeightVector::make(wv);
        report.swept_weights.push_back(wp);
        ParetoPoint pt;
        try {
            TrainReport rep = run_modpo(cfg, env, data, sft, models, w, pop);
            pt = evaluate_point(rep.final_params, env, sft, w, cfg.modpo.train.beta,
                                cfg.env.objective_signs, cfg.sweep.n_mc,
                                Rng(cfg.sweep.seed).fork(gi).seed(),
                                "modpo-w" + std::to_string(gi));
        } catch (const std::exception& e) {
            pt.w = w;
            pt.failed = true;
            pt.error = e.what();
            pt.run_id = "modpo-w" + std::to_string(gi);
        }
        report.points.push_back(std::move(pt));
    }

    // OLS of each objective's exact expected reward on the swept weight.
    std::vector<double> xs;
    for (std::size_t i = 0; i < report.points.size(); ++i) {
        if (!report.points[i].failed) xs.push_back(report.swept_weights[i]);
    }
    const bool degenerate =
        xs.size() < 3 ||
        std::all_of(xs.begin(), xs.end(), [&](double v) { return v == xs.front(); });
    for (int k = 0; k < cfg.env.num_objectives; ++k) {
        if (degenerate) {
            report.slope_per_objective.push_back(std::nullopt);
            continue;
        }
        std::vector<double> ys;
        for (const ParetoPoint& pt : report.points) {
            if (!pt.failed) ys.push_back(pt.exact_expected.values[k]);
        }
        report.slope_per_objective.push_back(ols_slope(xs, ys));
    }
    return report;
}

ReferenceSwapReport reference_swap_experiment(const RunConfig& cfg) {
    if (cfg.env.num_objectives != 2) {
        throw InvalidArgument("reference_swap_experiment: expects two objectives");
    }
    ReferenceSwapReport report;
    const WeightVector w = cfg.modpo.train.w;

    auto run_one = [&](int demo_objective, const std::string& tag, RewardVector& ref_expected)
        -> ParetoPoint {
        Env env = make_env(cfg);
        Datasets data = gen_datasets(cfg, env, demo_objective);
        TrainReport sft_rep = run_sft(cfg, env, data);
        const PolicyParams& sft = sft_rep.final_params;
        ref_expected.values.resize(cfg.env.num_objectives);
        for (int k = 0; k < cfg.env.num_objectives; ++k) {
            ref_expected.values[k] =
                exact_expected_reward(sft, env, k, cfg.env.objective_signs[k]);
        }
        PopulationCache pop;
        const auto models = run_reward_models(cfg, env, data, sft, cfg.modpo.objective, pop);
        TrainReport rep = run_modpo(cfg, env, data, sft, models, w, pop);
        return evaluate_point(rep.final_params, env, sft, w, cfg.modpo.train.beta,
                              cfg.env.objective_signs, cfg.eval.n_mc,
                              Rng(cfg.eval.seed).fork(demo_objective).seed(), tag);
    };

    report.primary_ref_point = run_one(0, "ref-primary", report.primary_ref_expected);
    report.alternate_ref_point = run_one(1, "ref-alternate", report.alternate_ref_expected);
    return report;
}

}  // namespace prefalign
