#include "prefalign/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <thread>

#include "prefalign/errors.hpp"

namespace prefalign {

namespace {

constexpr double kGradNormStop = 1e-8;
constexpr double kLossDeltaStop = 1e-12;
constexpr int kLossWindow = 50;
// Pair tables grow as |Y|^2 per prompt; cap the total at ~1 GiB of doubles.
constexpr std::int64_t kMaxPairTableDoubles = 1LL << 27;

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    const std::size_t workers = std::min(hw, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&, t]() {
            for (std::size_t i = t; i < n; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// First/second-moment adaptive step (decay 0.9/0.999, epsilon 1e-8).
struct AdaptiveState {
    std::vector<double> m;
    std::vector<double> v;
    int t = 0;
};

void apply_update(std::vector<ParamSeg>& segs, std::span<const double> grad, double lr,
                  OptimizerKind kind, AdaptiveState& state) {
    if (kind == OptimizerKind::plain) {
        std::size_t off = 0;
        for (ParamSeg& seg : segs) {
            for (std::size_t i = 0; i < seg.size; ++i) seg.data[i] -= lr * grad[off + i];
            off += seg.size;
        }
        return;
    }
    if (state.m.empty()) {
        std::size_t total = 0;
        for (const ParamSeg& seg : segs) total += seg.size;
        state.m.assign(total, 0.0);
        state.v.assign(total, 0.0);
    }
    ++state.t;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, state.t);
    const double c2 = 1.0 - std::pow(b2, state.t);
    std::size_t off = 0;
    for (ParamSeg& seg : segs) {
        for (std::size_t i = 0; i < seg.size; ++i) {
            const std::size_t j = off + i;
            state.m[j] = b1 * state.m[j] + (1.0 - b1) * grad[j];
            state.v[j] = b2 * state.v[j] + (1.0 - b2) * grad[j] * grad[j];
            seg.data[i] -= lr * (state.m[j] / c1) / (std::sqrt(state.v[j] / c2) + eps);
        }
        off += seg.size;
    }
}

OptimizerKind resolve_optimizer(const TrainConfig& cfg) {
    if (cfg.optimizer != OptimizerKind::auto_select) return cfg.optimizer;
    return cfg.mode == TrainMode::population ? OptimizerKind::plain : OptimizerKind::adaptive;
}

// Shared gradient-descent driver. loss_grad must fill the zeroed grad buffer
// and return the loss at the current parameters; value_only re-evaluates the
// loss without gradients for the final report entry.
TrainReport run_training(PolicyParams policy, const TrainConfig& cfg,
                         const std::function<double(PolicyParams&, std::span<double>)>& loss_grad,
                         const std::function<double(PolicyParams&)>& value_only) {
    const auto t0 = std::chrono::steady_clock::now();
    if (policy.adapter) policy.adapter->base_frozen = cfg.freeze_adapter_base;
    std::vector<ParamSeg> segs = trainable_segments(policy);
    std::size_t total = 0;
    for (const ParamSeg& seg : segs) total += seg.size;

    TrainReport report;
    std::vector<double> grad(total, 0.0);
    AdaptiveState adaptive;
    const OptimizerKind opt = resolve_optimizer(cfg);
    std::deque<double> window;

    int step = 0;
    for (; step < cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        const double loss = loss_grad(policy, grad);
        if (!std::isfinite(loss)) {
            throw NumericFailure("training diverged: non-finite loss at step " +
                                 std::to_string(step));
        }
        check_gradient_finite(policy, grad);
        const double gnorm = l2_norm(grad);
        if (step % cfg.log_every == 0) {
            report.loss_curve.emplace_back(step, loss);
            report.grad_norm_curve.emplace_back(step, gnorm);
        }
        window.push_back(loss);
        if (static_cast<int>(window.size()) > kLossWindow + 1) window.pop_front();
        if (gnorm < kGradNormStop) break;
        if (static_cast<int>(window.size()) == kLossWindow + 1 &&
            std::abs(window.front() - window.back()) < kLossDeltaStop) {
            break;
        }
        apply_update(segs, grad, cfg.step_size, opt, adaptive);
    }

    report.steps_run = step;
    report.final_loss = value_only(policy);
    if (!std::isfinite(report.final_loss)) {
        throw NumericFailure("training diverged: non-finite final loss");
    }
    report.loss_curve.emplace_back(step, report.final_loss);
    report.final_params = std::move(policy);
    report.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// Distinct prompts of a record batch in first-appearance order, plus the
// per-record prompt slot.
struct PromptGroups {
    std::vector<Sequence> prompts;
    std::vector<std::size_t> record_row;
};

template <typename Records, typename GetX>
PromptGroups group_prompts(const Records& records, const VocabSpec& vocab, GetX get_x) {
    PromptGroups g;
    std::map<std::int64_t, std::size_t> rows;
    g.record_row.reserve(records.size());
    for (const auto& rec : records) {
        const Sequence& x = get_x(rec);
        const std::int64_t code = vocab.prompt_index(x);
        auto it = rows.find(code);
        if (it == rows.end()) {
            it = rows.emplace(code, g.prompts.size()).first;
            g.prompts.push_back(x);
        }
        g.record_row.push_back(it->second);
    }
    return g;
}

void validate_single_objective(const std::vector<PreferencePair>& records) {
    if (records.empty()) throw InvalidArgument("preference batch must be non-empty");
    const int k = records.front().objective;
    for (const PreferencePair& r : records) {
        if (r.objective != k) {
            throw InvalidArgument("preference batch mixes objectives " + std::to_string(k) +
                                  " and " + std::to_string(r.objective));
        }
    }
}

void validate_reward_models(const std::vector<ImplicitRewardModel>& models, const WeightVector& w,
                            int k) {
    const int K = static_cast<int>(w.size());
    if (k < 0 || k >= K) throw InvalidArgument("modpo: batch objective outside weight vector");
    if (static_cast<int>(models.size()) != K - 1) {
        throw InvalidArgument("modpo: need exactly K-1 reward models, got " +
                              std::to_string(models.size()));
    }
    std::vector<bool> seen(K, false);
    for (const ImplicitRewardModel& m : models) {
        if (m.objective < 0 || m.objective >= K || m.objective == k || seen[m.objective]) {
            throw InvalidArgument("modpo: reward models must cover each objective != k once");
        }
        seen[m.objective] = true;
    }
}

}  // namespace

// --- losses ------------------------------------------------------------------

double dpo_record_logit(const PolicyParams& policy, const PolicyParams& ref,
                        const PreferencePair& rec, double beta) {
    const double dw = log_prob(policy, rec.x, rec.y_w) - log_prob(ref, rec.x, rec.y_w);
    const double dl = log_prob(policy, rec.x, rec.y_l) - log_prob(ref, rec.x, rec.y_l);
    return beta * (dw - dl);
}

double dpo_loss(const PolicyParams& policy, const PolicyParams& ref,
                const std::vector<PreferencePair>& batch, double beta) {
    validate_single_objective(batch);
    double acc = 0.0;
    for (const PreferencePair& rec : batch) {
        const double z = dpo_record_logit(policy, ref, rec, beta);
        if (!std::isfinite(z)) {
            throw NumericFailure("dpo_loss: non-finite policy/reference log-ratio");
        }
        acc -= log_logistic(z);
    }
    return acc / static_cast<double>(batch.size());
}

double implicit_reward(const PolicyParams& phi, const PolicyParams& ref, double beta,
                       const Sequence& x, const Sequence& y) {
    return beta * (log_prob(phi, x, y) - log_prob(ref, x, y));
}

double modpo_margin(const std::vector<ImplicitRewardModel>& reward_models,
                    const PolicyParams& ref, const WeightVector& w, int k, const Sequence& x,
                    const Sequence& y_w, const Sequence& y_l) {
    validate_reward_models(reward_models, w, k);
    double margin = 0.0;
    for (const ImplicitRewardModel& m : reward_models) {
        const double d = implicit_reward(m.phi, ref, m.beta, x, y_w) -
                         implicit_reward(m.phi, ref, m.beta, x, y_l);
        margin += w[static_cast<std::size_t>(m.objective)] * d;
    }
    return margin;
}

double modpo_record_logit(const PolicyParams& policy, const PolicyParams& ref,
                          const PreferencePair& rec, const WeightVector& w, double beta,
                          const std::vector<ImplicitRewardModel>& reward_models) {
    const int k = rec.objective;
    if (w[static_cast<std::size_t>(k)] == 0.0) {
        throw InvalidArgument("modpo: weight of the batch objective must be > 0");
    }
    const double dw = log_prob(policy, rec.x, rec.y_w) - log_prob(ref, rec.x, rec.y_w);
    const double dl = log_prob(policy, rec.x, rec.y_l) - log_prob(ref, rec.x, rec.y_l);
    const double z = beta * (dw - dl);
    const double margin = modpo_margin(reward_models, ref, w, k, rec.x, rec.y_w, rec.y_l);
    return (z - margin) / w[static_cast<std::size_t>(k)];
}

double modpo_loss(const PolicyParams& policy, const PolicyParams& ref,
                  const std::vector<PreferencePair>& batch, const WeightVector& w, double beta,
                  const std::vector<ImplicitRewardModel>& reward_models) {
    validate_single_objective(batch);
    double acc = 0.0;
    for (const PreferencePair& rec : batch) {
        const double z = modpo_record_logit(policy, ref, rec, w, beta, reward_models);
        if (!std::isfinite(z)) {
            throw NumericFailure("modpo_loss: non-finite logit");
        }
        acc -= log_logistic(z);
    }
    return acc / static_cast<double>(batch.size());
}

// --- population machinery ------------------------------------------------------

PopulationPrefs PopulationPrefs::build(const Env& env, int objective, double sign) {
    if (objective < 0 || objective >= env.num_objectives()) {
        throw InvalidArgument("PopulationPrefs: objective out of range");
    }
    const std::int64_t ny = env.vocab.num_responses();
    const std::int64_t pairs = ny * (ny - 1) / 2;
    if (pairs * static_cast<std::int64_t>(env.prompts.size()) > kMaxPairTableDoubles) {
        throw UnsupportedScale("PopulationPrefs: pair table would exceed the memory budget");
    }
    PopulationPrefs prefs;
    prefs.env = &env;
    prefs.objective = objective;
    prefs.sign = sign;
    prefs.rewards.resize(env.prompts.size());
    prefs.bt_upper.resize(env.prompts.size());
    parallel_for(env.prompts.size(), [&](std::size_t row) {
        prefs.rewards[row] = reward_all(env, row, objective, sign);
        const std::vector<double>& r = prefs.rewards[row];
        std::vector<double>& bt = prefs.bt_upper[row];
        bt.resize(static_cast<std::size_t>(pairs));
        std::size_t idx = 0;
        for (std::size_t a = 0; a + 1 < r.size(); ++a) {
            for (std::size_t b = a + 1; b < r.size(); ++b) {
                bt[idx++] = logistic(r[a] - r[b]);
            }
        }
    });
    return prefs;
}

double population_pair_objective(std::span<const double> u, std::span<const double> bt_upper,
                                 std::span<double> grad_u, bool want_loss) {
    const std::size_t n = u.size();
    if (n < 2) throw InvalidArgument("population_pair_objective: need at least two responses");
    if (bt_upper.size() != n * (n - 1) / 2) {
        throw InvalidArgument("population_pair_objective: pair table size mismatch");
    }
    const bool want_grad = !grad_u.empty();
    if (want_grad && grad_u.size() != n) {
        throw InvalidArgument("population_pair_objective: gradient size mismatch");
    }
    double loss = 0.0;
    const double* pw = bt_upper.data();
    std::size_t idx = 0;
    for (std::size_t a = 0; a + 1 < n; ++a) {
        const double ua = u[a];
        double ga = 0.0;
        for (std::size_t b = a + 1; b < n; ++b, ++idx) {
            const double z = ua - u[b];
            const double p = pw[idx];
            const double e = std::exp(-std::abs(z));
            const double denom = 1.0 + e;
            const double sig = (z >= 0.0 ? 1.0 : e) / denom;
            if (want_grad) {
                const double resid = sig - p;
                ga += resid;
                grad_u[b] -= resid;
            }
            if (want_loss) {
                // p*softplus(-z) + (1-p)*softplus(z), stable on both tails
                const double l = std::log1p(e);
                loss += l + (z >= 0.0 ? (1.0 - p) * z : -p * z);
            }
        }
        if (want_grad) grad_u[a] += ga;
    }
    const double inv_w = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
    if (want_grad) {
        for (double& g : grad_u) g *= inv_w;
    }
    return loss * inv_w;
}

namespace {

// Population preference loss/gradient over all prompts. margins may be empty
// (plain DPO). Returns mean per-prompt pair loss; fills dense d/dlogpi
// coefficients per prompt when grads is non-null.
double population_step(PolicyParams& policy, const PopulationPrefs& prefs,
                       const std::vector<std::vector<double>>& log_ref,
                       const std::vector<std::vector<double>>& margins, double beta,
                       double weight_k, std::vector<std::vector<double>>* grads) {
    const std::size_t rows = prefs.env->prompts.size();
    std::vector<double> losses(rows, 0.0);
    const double chain = beta / weight_k;
    parallel_for(rows, [&](std::size_t row) {
        const std::vector<double> lp = log_prob_all(policy, prefs.env->prompts[row]);
        const std::size_t n = lp.size();
        std::vector<double> u(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double s = lp[i] - log_ref[row][i];
            const double m = margins.empty() ? 0.0 : margins[row][i];
            u[i] = (beta * s - m) / weight_k;
        }
        if (grads) {
            std::vector<double>& g = (*grads)[row];
            g.assign(n, 0.0);
            losses[row] = population_pair_objective(u, prefs.bt_upper[row], g, true);
            const double scale = chain / static_cast<double>(rows);
            for (double& v : g) v *= scale;
        } else {
            losses[row] = population_pair_objective(u, prefs.bt_upper[row], {}, true);
        }
    });
    double loss = 0.0;
    for (double l : losses) loss += l;
    return loss / static_cast<double>(rows);
}

std::vector<std::vector<double>> reference_log_rows(const PolicyParams& ref,
                                                    const std::vector<Sequence>& prompts) {
    std::vector<std::vector<double>> out(prompts.size());
    parallel_for(prompts.size(), [&](std::size_t row) {
        out[row] = log_prob_all(ref, prompts[row]);
    });
    return out;
}

// Per-prompt margin tables m(y) = sum_{i != k} w_i r_phi_i(x, y); pairwise
// margins are differences m(y_w) - m(y_l).
std::vector<std::vector<double>> margin_tables(const std::vector<ImplicitRewardModel>& models,
                                               const std::vector<std::vector<double>>& log_ref,
                                               const std::vector<Sequence>& prompts,
                                               const WeightVector& w) {
    std::vector<std::vector<double>> margins(prompts.size());
    for (std::size_t row = 0; row < prompts.size(); ++row) {
        margins[row].assign(log_ref[row].size(), 0.0);
    }
    for (const ImplicitRewardModel& m : models) {
        const double wk = w[static_cast<std::size_t>(m.objective)];
        parallel_for(prompts.size(), [&](std::size_t row) {
            const std::vector<double> lp = log_prob_all(m.phi, prompts[row]);
            for (std::size_t i = 0; i < lp.size(); ++i) {
                margins[row][i] += wk * m.beta * (lp[i] - log_ref[row][i]);
            }
        });
    }
    return margins;
}

// Preference records reduced to table indices plus per-record constants.
struct IndexedRecord {
    std::size_t row;
    std::int64_t yw;
    std::int64_t yl;
    double ref_delta;  // (log ref yw - log ref yl)
    double margin;
};

struct IndexedBatch {
    PromptGroups groups;
    std::vector<IndexedRecord> recs;
};

IndexedBatch index_records(const std::vector<PreferencePair>& records, const PolicyParams& ref,
                           const std::vector<ImplicitRewardModel>& models, const WeightVector& w,
                           bool with_margin) {
    IndexedBatch batch;
    batch.groups = group_prompts(records, ref.vocab,
                                 [](const PreferencePair& r) -> const Sequence& { return r.x; });
    batch.recs.reserve(records.size());
    const int k = records.front().objective;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const PreferencePair& rec = records[i];
        IndexedRecord ir;
        ir.row = batch.groups.record_row[i];
        ir.yw = ref.vocab.response_index(rec.y_w);
        ir.yl = ref.vocab.response_index(rec.y_l);
        ir.ref_delta = log_prob(ref, rec.x, rec.y_w) - log_prob(ref, rec.x, rec.y_l);
        ir.margin = with_margin ? modpo_margin(models, ref, w, k, rec.x, rec.y_w, rec.y_l) : 0.0;
        batch.recs.push_back(ir);
    }
    return batch;
}

// Empirical preference loss over selected records; fills dense d/dlogpi per
// prompt group when grads != nullptr.
double empirical_step(PolicyParams& policy, const IndexedBatch& batch,
                      std::span<const std::size_t> selection, double beta, double weight_k,
                      std::vector<std::vector<double>>* grads) {
    const std::vector<Sequence>& prompts = batch.groups.prompts;
    std::vector<std::vector<double>> lp(prompts.size());
    parallel_for(prompts.size(), [&](std::size_t row) {
        lp[row] = log_prob_all(policy, prompts[row]);
    });
    if (grads) {
        for (std::size_t row = 0; row < prompts.size(); ++row) {
            (*grads)[row].assign(lp[row].size(), 0.0);
        }
    }
    const double inv_n = 1.0 / static_cast<double>(selection.size());
    const double chain = beta / weight_k;
    double acc = 0.0;
    for (std::size_t sel : selection) {
        const IndexedRecord& ir = batch.recs[sel];
        const double s = lp[ir.row][static_cast<std::size_t>(ir.yw)] -
                         lp[ir.row][static_cast<std::size_t>(ir.yl)] - ir.ref_delta;
        const double z = (beta * s - ir.margin) / weight_k;
        if (!std::isfinite(z)) {
            throw NumericFailure("preference training: non-finite logit");
        }
        acc -= log_logistic(z);
        if (grads) {
            // d(-log sigma(z))/dz = -sigma(-z)
            const double coeff = -logistic(-z) * inv_n * chain;
            (*grads)[ir.row][static_cast<std::size_t>(ir.yw)] += coeff;
            (*grads)[ir.row][static_cast<std::size_t>(ir.yl)] -= coeff;
        }
    }
    return acc * inv_n;
}

void apply_dense_grads(const PolicyParams& policy, const std::vector<Sequence>& prompts,
                       const std::vector<std::vector<double>>& grads, std::span<double> grad) {
    for (std::size_t row = 0; row < prompts.size(); ++row) {
        accumulate_enumerated_grad(policy, prompts[row], grads[row], grad);
    }
}

TrainReport preference_train(const PolicyParams& init, const PolicyParams& ref,
                             const PreferenceData& data,
                             const std::vector<ImplicitRewardModel>& reward_models,
                             const TrainConfig& cfg, bool is_modpo) {
    const bool population = cfg.mode == TrainMode::population;
    const WeightVector w = is_modpo ? cfg.w : WeightVector::make({1.0});
    double weight_k = 1.0;
    int k = 0;

    if (population) {
        if (!data.population) {
            throw InvalidArgument("population mode requires exact population preferences");
        }
        k = data.population->objective;
    } else {
        if (!data.records) throw InvalidArgument("minibatch mode requires preference records");
        validate_single_objective(*data.records);
        k = data.records->front().objective;
    }
    if (is_modpo) {
        validate_reward_models(reward_models, w, k);
        weight_k = w[static_cast<std::size_t>(k)];
        if (weight_k == 0.0) throw InvalidArgument("modpo: weight of trained objective is zero");
    }

    if (population) {
        const PopulationPrefs& prefs = *data.population;
        const std::vector<Sequence>& prompts = prefs.env->prompts;
        const auto log_ref = reference_log_rows(ref, prompts);
        const auto margins =
            is_modpo ? margin_tables(reward_models, log_ref, prompts, w)
                     : std::vector<std::vector<double>>{};
        auto grads = std::make_shared<std::vector<std::vector<double>>>(prompts.size());
        auto loss_grad = [&, grads](PolicyParams& p, std::span<double> g) {
            const double loss =
                population_step(p, prefs, log_ref, margins, cfg.beta, weight_k, grads.get());
            apply_dense_grads(p, prompts, *grads, g);
            return loss;
        };
        auto value_only = [&](PolicyParams& p) {
            return population_step(p, prefs, log_ref, margins, cfg.beta, weight_k, nullptr);
        };
        return run_training(init, cfg, loss_grad, value_only);
    }

    auto batch = std::make_shared<IndexedBatch>(
        index_records(*data.records, ref, reward_models, w, is_modpo));
    auto grads = std::make_shared<std::vector<std::vector<double>>>(batch->groups.prompts.size());
    std::vector<std::size_t> all(batch->recs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const std::size_t bsz = cfg.batch_size > 0
                                ? std::min<std::size_t>(cfg.batch_size, all.size())
                                : all.size();
    auto rng = std::make_shared<Rng>(Rng(cfg.seed).fork(0xba7c4));
    auto loss_grad = [&, batch, grads, rng, bsz, all](PolicyParams& p, std::span<double> g) {
        std::vector<std::size_t> pick;
        if (bsz == all.size()) {
            pick = all;
        } else {
            pick.resize(bsz);
            for (std::size_t i = 0; i < bsz; ++i) {
                pick[i] = static_cast<std::size_t>(rng->uniform_int(all.size()));
            }
        }
        const double loss = empirical_step(p, *batch, pick, cfg.beta, weight_k, grads.get());
        apply_dense_grads(p, batch->groups.prompts, *grads, g);
        return loss;
    };
    auto value_only = [&, batch, all](PolicyParams& p) {
        return empirical_step(p, *batch, all, cfg.beta, weight_k, nullptr);
    };
    return run_training(init, cfg, loss_grad, value_only);
}

}  // namespace

// --- trainers ------------------------------------------------------------------

TrainReport sft_train(const PolicyParams& init, const std::vector<DemoPair>& demos,
                      const TrainConfig& cfg) {
    if (demos.empty()) throw InvalidArgument("sft_train: empty demonstration set");

    if (cfg.mode == TrainMode::population) {
        // Deduplicate into per-prompt empirical weights; the loss becomes the
        // cross-entropy of the empirical conditional distribution.
        auto groups = std::make_shared<PromptGroups>(group_prompts(
            demos, init.vocab, [](const DemoPair& d) -> const Sequence& { return d.x; }));
        const std::size_t rows = groups->prompts.size();
        const std::int64_t ny = init.vocab.num_responses();
        auto weights = std::make_shared<std::vector<std::vector<double>>>(
            rows, std::vector<double>(static_cast<std::size_t>(ny), 0.0));
        const double inv_n = 1.0 / static_cast<double>(demos.size());
        for (std::size_t i = 0; i < demos.size(); ++i) {
            const std::int64_t yi = init.vocab.response_index(demos[i].y);
            (*weights)[groups->record_row[i]][static_cast<std::size_t>(yi)] += inv_n;
        }
        auto eval = [groups, weights](PolicyParams& p, std::vector<std::vector<double>>* grads) {
            double loss = 0.0;
            for (std::size_t row = 0; row < groups->prompts.size(); ++row) {
                const std::vector<double> lp = log_prob_all(p, groups->prompts[row]);
                const std::vector<double>& wrow = (*weights)[row];
                if (grads) (*grads)[row].assign(lp.size(), 0.0);
                for (std::size_t i = 0; i < lp.size(); ++i) {
                    if (wrow[i] == 0.0) continue;
                    loss -= wrow[i] * lp[i];
                    if (grads) (*grads)[row][i] = -wrow[i];
                }
            }
            return loss;
        };
        auto grads = std::make_shared<std::vector<std::vector<double>>>(rows);
        auto loss_grad = [=](PolicyParams& p, std::span<double> g) {
            const double loss = eval(p, grads.get());
            apply_dense_grads(p, groups->prompts, *grads, g);
            return loss;
        };
        auto value_only = [=](PolicyParams& p) { return eval(p, nullptr); };
        return run_training(init, cfg, loss_grad, value_only);
    }

    auto demos_ptr = &demos;
    const std::size_t bsz = cfg.batch_size > 0
                                ? std::min<std::size_t>(cfg.batch_size, demos.size())
                                : demos.size();
    auto rng = std::make_shared<Rng>(Rng(cfg.seed).fork(0x5f7d));
    auto loss_grad = [demos_ptr, bsz, rng](PolicyParams& p, std::span<double> g) {
        const std::vector<DemoPair>& all = *demos_ptr;
        double loss = 0.0;
        const double coeff = -1.0 / static_cast<double>(bsz);
        for (std::size_t i = 0; i < bsz; ++i) {
            const DemoPair& d = bsz == all.size()
                                    ? all[i]
                                    : all[static_cast<std::size_t>(rng->uniform_int(all.size()))];
            loss += coeff * accumulate_log_prob_grad(p, d.x, d.y, coeff, g);
        }
        return loss;
    };
    auto value_only = [demos_ptr](PolicyParams& p) {
        double loss = 0.0;
        for (const DemoPair& d : *demos_ptr) loss -= log_prob(p, d.x, d.y);
        return loss / static_cast<double>(demos_ptr->size());
    };
    return run_training(init, cfg, loss_grad, value_only);
}

TrainReport dpo_train(const PolicyParams& init, const PolicyParams& ref,
                      const PreferenceData& data, const TrainConfig& cfg) {
    return preference_train(init, ref, data, {}, cfg, /*is_modpo=*/false);
}

TrainReport modpo_train(const PolicyParams& init, const PolicyParams& ref,
                        const PreferenceData& data,
                        const std::vector<ImplicitRewardModel>& reward_models,
                        const TrainConfig& cfg) {
    return preference_train(init, ref, data, reward_models, cfg, /*is_modpo=*/true);
}

// --- gradient checking -----------------------------------------------------------

LossClosure make_sft_closure(const std::vector<DemoPair>& demos) {
    LossClosure c;
    c.value = [&demos](PolicyParams& p) {
        double loss = 0.0;
        for (const DemoPair& d : demos) loss -= log_prob(p, d.x, d.y);
        return loss / static_cast<double>(demos.size());
    };
    c.value_and_grad = [&demos](PolicyParams& p, std::span<double> g) {
        double loss = 0.0;
        const double coeff = -1.0 / static_cast<double>(demos.size());
        for (const DemoPair& d : demos) {
            loss += coeff * accumulate_log_prob_grad(p, d.x, d.y, coeff, g);
        }
        return loss;
    };
    return c;
}

LossClosure make_dpo_closure(const PolicyParams& ref, const std::vector<PreferencePair>& batch,
                             double beta) {
    LossClosure c;
    c.value = [&ref, &batch, beta](PolicyParams& p) { return dpo_loss(p, ref, batch, beta); };
    c.value_and_grad = [&ref, &batch, beta](PolicyParams& p, std::span<double> g) {
        const double inv_n = 1.0 / static_cast<double>(batch.size());
        double loss = 0.0;
        for (const PreferencePair& rec : batch) {
            const double z = dpo_record_logit(p, ref, rec, beta);
            loss -= log_logistic(z) * inv_n;
            const double coeff = -logistic(-z) * inv_n * beta;
            accumulate_log_prob_grad(p, rec.x, rec.y_w, coeff, g);
            accumulate_log_prob_grad(p, rec.x, rec.y_l, -coeff, g);
        }
        return loss;
    };
    return c;
}

LossClosure make_modpo_closure(const PolicyParams& ref, const std::vector<PreferencePair>& batch,
                               const WeightVector& w, double beta,
                               const std::vector<ImplicitRewardModel>& reward_models) {
    LossClosure c;
    c.value = [&, w, beta](PolicyParams& p) {
        return modpo_loss(p, ref, batch, w, beta, reward_models);
    };
    c.value_and_grad = [&, w, beta](PolicyParams& p, std::span<double> g) {
        validate_single_objective(batch);
        const int k = batch.front().objective;
        const double wk = w[static_cast<std::size_t>(k)];
        const double inv_n = 1.0 / static_cast<double>(batch.size());
        double loss = 0.0;
        for (const PreferencePair& rec : batch) {
            const double z = modpo_record_logit(p, ref, rec, w, beta, reward_models);
            loss -= log_logistic(z) * inv_n;
            const double coeff = -logistic(-z) * inv_n * beta / wk;
            accumulate_log_prob_grad(p, rec.x, rec.y_w, coeff, g);
            accumulate_log_prob_grad(p, rec.x, rec.y_l, -coeff, g);
        }
        return loss;
    };
    return c;
}

double grad_check(const PolicyParams& policy, const LossClosure& loss, double fd_step,
                  std::size_t exhaustive_limit, std::uint64_t seed) {
    PolicyParams work = policy;
    const std::size_t total = trainable_size(work);
    std::vector<double> analytic(total, 0.0);
    loss.value_and_grad(work, analytic);

    std::vector<std::size_t> coords;
    if (total <= exhaustive_limit) {
        coords.resize(total);
        for (std::size_t i = 0; i < total; ++i) coords[i] = i;
    } else {
        Rng rng(seed);
        coords.resize(200);
        for (std::size_t& c : coords) c = static_cast<std::size_t>(rng.uniform_int(total));
    }

    std::vector<double> flat = flatten_trainable(work);
    double worst = 0.0;
    for (std::size_t c : coords) {
        const double orig = flat[c];
        flat[c] = orig + fd_step;
        unflatten_trainable(work, flat);
        const double up = loss.value(work);
        flat[c] = orig - fd_step;
        unflatten_trainable(work, flat);
        const double down = loss.value(work);
        flat[c] = orig;
        unflatten_trainable(work, flat);
        const double fd = (up - down) / (2.0 * fd_step);
        const double rel = std::abs(fd - analytic[c]) / std::max(std::abs(analytic[c]), 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace prefalign
