#pragma once

#include <span>
#include <vector>

namespace prefalign {

// Simplex weight vector, one entry per objective.
struct WeightVector {
    std::vector<double> weights;

    // Validates: K >= 1, entries >= 0, sum == 1 within 1e-12.
    static WeightVector make(std::vector<double> weights);

    std::size_t size() const { return weights.size(); }
    double operator[](std::size_t k) const { return weights[k]; }
};

// Per-objective rewards for one (prompt, response).
struct RewardVector {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t k) const { return values[k]; }
};

// 1/(1+exp(-z)), clamped into [1e-300, 1-1e-16] so downstream logs stay finite.
double logistic(double z);

// log(logistic(z)) == -softplus(-z), computed without intermediate underflow.
double log_logistic(double z);

// Bradley-Terry win probability of the first item: logistic(r_w - r_l).
double bt_probability(double r_w, double r_l);

// Max-stabilized softmax; output sums to 1 within 1e-12.
std::vector<double> softmax(std::span<const double> logits);

// log softmax, max-stabilized.
std::vector<double> log_softmax(std::span<const double> logits);

// log(sum(exp(v))) with max subtraction.
double log_sum_exp(std::span<const double> v);

// KL(p || q) in nats; terms with p == 0 contribute zero.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Weighted sum w^T r.
double scalarize(const WeightVector& w, const RewardVector& r);

}  // namespace prefalign
