#include "prefalign/math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "prefalign/errors.hpp"

namespace prefalign {

namespace {

constexpr double kProbFloor = 1e-300;
constexpr double kProbCeil = 1.0 - 1e-16;

void require_finite(double v, const char* who) {
    if (!std::isfinite(v)) {
        throw InvalidArgument(std::string(who) + ": non-finite input");
    }
}

}  // namespace

WeightVector WeightVector::make(std::vector<double> weights) {
    if (weights.empty()) {
        throw InvalidArgument("WeightVector: needs at least one objective");
    }
    double sum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) {
            throw InvalidArgument("WeightVector: entries must be finite and >= 0");
        }
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
        throw InvalidArgument("WeightVector: entries must sum to 1 (got " + std::to_string(sum) + ")");
    }
    return WeightVector{std::move(weights)};
}

double logistic(double z) {
    require_finite(z, "logistic");
    double p;
    if (z >= 0.0) {
        p = 1.0 / (1.0 + std::exp(-z));
    } else {
        const double e = std::exp(z);
        p = e / (1.0 + e);
    }
    return std::clamp(p, kProbFloor, kProbCeil);
}

double log_logistic(double z) {
    require_finite(z, "log_logistic");
    // -softplus(-z), stable on both tails.
    if (z > 0.0) {
        return -std::log1p(std::exp(-z));
    }
    return z - std::log1p(std::exp(z));
}

double bt_probability(double r_w, double r_l) {
    require_finite(r_w, "bt_probability");
    require_finite(r_l, "bt_probability");
    return logistic(r_w - r_l);
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) {
        throw InvalidArgument("log_sum_exp: empty input");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) {
        require_finite(x, "log_sum_exp");
        m = std::max(m, x);
    }
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - m);
    return m + std::log(acc);
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) {
        throw InvalidArgument("softmax: empty input");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (double x : logits) {
        require_finite(x, "softmax");
        m = std::max(m, x);
    }
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw InvalidArgument("kl_divergence: support size mismatch");
    }
    if (p.empty()) {
        throw InvalidArgument("kl_divergence: empty distributions");
    }
    double sum_p = 0.0, sum_q = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        require_finite(p[i], "kl_divergence");
        require_finite(q[i], "kl_divergence");
        if (p[i] < 0.0 || q[i] < 0.0) {
            throw InvalidArgument("kl_divergence: negative probability");
        }
        sum_p += p[i];
        sum_q += q[i];
    }
    if (std::abs(sum_p - 1.0) > 1e-9 || std::abs(sum_q - 1.0) > 1e-9) {
        throw InvalidArgument("kl_divergence: inputs must be normalized");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) {
            throw DivergenceInfinite("kl_divergence: p > 0 where q == 0 at index " + std::to_string(i));
        }
        kl += p[i] * std::log(p[i] / q[i]);
    }
    // Rounding can leave a tiny negative residue when p ~= q.
    return std::max(kl, 0.0);
}

double scalarize(const WeightVector& w, const RewardVector& r) {
    if (w.size() != r.size()) {
        throw InvalidArgument("scalarize: dimension mismatch");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * r[k];
    return acc;
}

}  // namespace prefalign
