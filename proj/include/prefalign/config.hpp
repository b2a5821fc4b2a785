#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefalign/env.hpp"
#include "prefalign/policy.hpp"
#include "prefalign/training.hpp"

namespace prefalign {

inline constexpr int kFormatVersion = 1;

struct EnvConfig {
    std::uint64_t seed = 7;
    int vocab_size = 12;
    int prompt_len = 2;
    int response_len = 3;
    int num_prompts = 8;
    double rho = 0.6;
    int num_objectives = 2;
    std::int64_t enumeration_cap = 65536;
    std::vector<double> objective_signs = {1.0, -1.0};

    VocabSpec vocab() const;
};

struct DataConfig {
    std::uint64_t seed = 1002;
    int n_demos_per_prompt = 128;
    int n_comparisons_per_prompt = 128;
    int demo_objective = 0;
    double demo_temperature = 1.0;
    std::string proposal = "uniform";  // "uniform" | "sft"
    SplitFractions split_fractions;
    std::uint64_t split_seed = 1003;
};

struct AdapterConfig {
    bool enabled = false;
    int rank = 4;
    bool freeze_base = true;
    std::uint64_t seed = 2002;
};

struct PolicyConfig {
    PolicyMode mode = PolicyMode::tabular;
    int embed_dim = 8;
    int hidden_dim = 32;
    std::uint64_t init_seed = 2001;
    AdapterConfig adapter;
};

struct PhaseConfig {
    TrainConfig train;
    int objective = 0;  // dpo/reward: comparison objective; modpo: phase-3 data objective
};

struct SweepConfig {
    int swept_objective = 1;
    std::vector<double> grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    int n_mc = 4096;
    std::uint64_t seed = 4001;
    bool reuse_shared_phases = true;
};

struct EvalConfig {
    int n_mc = 10000;
    std::uint64_t seed = 5001;
    std::vector<double> w = {0.5, 0.5};
    std::string reference = "sft";  // "sft" | "uniform"
};

struct PathsConfig {
    std::string workdir;
};

struct RunConfig {
    EnvConfig env;
    DataConfig data;
    PolicyConfig policy;
    PhaseConfig sft;
    PhaseConfig dpo;
    PhaseConfig reward;
    PhaseConfig modpo;
    SweepConfig sweep;
    EvalConfig eval;
    PathsConfig paths;

    nlohmann::json raw;  // fully merged config, echoed verbatim into outputs
    std::string hash;    // config hash of `raw`

    static RunConfig defaults();
    // Deep-merges `user` over the defaults; unknown keys fail loudly.
    static RunConfig from_json(const nlohmann::json& user);
    static RunConfig load_file(const std::string& path,
                               const std::vector<std::string>& overrides = {});
};

nlohmann::json default_config_json();
std::string config_hash(const nlohmann::json& j);

// Applies "dotted.key.path=value" onto a config json; the value is parsed as
// JSON when possible and as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

}  // namespace prefalign
