#pragma once

#include <string>

#include "prefalign/math.hpp"

namespace prefalign {

// One row of a weight-sweep or exact-front report.
struct ParetoPoint {
    WeightVector w;
    RewardVector exact_expected;    // exact enumeration, pipeline sign convention
    RewardVector mc_expected;       // Monte-Carlo estimate (NaN when not sampled)
    RewardVector mc_stderr;         // standard errors of the MC estimate
    double kl_to_oracle = 0.0;      // per-prompt mean KL(pi* || pi), nats
    std::string run_id;
    bool oracle = false;
    bool failed = false;
    std::string error;
};

}  // namespace prefalign
