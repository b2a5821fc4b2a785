#include "prefalign/config.hpp"

#include <fstream>
#include <sstream>

#include "prefalign/errors.hpp"

namespace prefalign {

namespace {

using nlohmann::json;

json train_defaults(double step_size, int steps, const std::string& mode) {
    return json{
        {"beta", 0.1},          {"step_size", step_size}, {"steps", steps},
        {"batch_size", 0},      {"mode", mode},           {"seed", 3001},
        {"optimizer", "auto"},  {"log_every", 10},        {"w", json::array()},
        {"freeze_adapter_base", true},
    };
}

TrainMode parse_mode(const std::string& s) {
    if (s == "minibatch") return TrainMode::minibatch;
    if (s == "population") return TrainMode::population;
    throw InvalidArgument("config: unknown train mode '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "auto") return OptimizerKind::auto_select;
    if (s == "plain") return OptimizerKind::plain;
    if (s == "adaptive") return OptimizerKind::adaptive;
    throw InvalidArgument("config: unknown optimizer '" + s + "'");
}

PolicyMode parse_policy_mode(const std::string& s) {
    if (s == "tabular") return PolicyMode::tabular;
    if (s == "neural") return PolicyMode::neural;
    throw InvalidArgument("config: unknown policy mode '" + s + "'");
}

// Recursive merge of `user` over `base`; keys absent from base are rejected.
void merge_into(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) {
        throw InvalidArgument("config: expected an object at '" + prefix + "'");
    }
    for (const auto& [key, value] : user.items()) {
        const std::string where = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) {
            throw InvalidArgument("config: unknown key '" + where + "'");
        }
        if (base[key].is_object() && value.is_object()) {
            merge_into(base[key], value, where);
        } else {
            base[key] = value;
        }
    }
}

TrainConfig parse_train(const json& j, const std::string& where) {
    TrainConfig cfg;
    try {
        cfg.beta = j.at("beta").get<double>();
        cfg.step_size = j.at("step_size").get<double>();
        cfg.steps = j.at("steps").get<int>();
        cfg.batch_size = j.at("batch_size").get<int>();
        cfg.mode = parse_mode(j.at("mode").get<std::string>());
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
        cfg.log_every = std::max(1, j.at("log_every").get<int>());
        cfg.freeze_adapter_base = j.at("freeze_adapter_base").get<bool>();
        const auto& w = j.at("w");
        if (!w.empty()) cfg.w = WeightVector::make(w.get<std::vector<double>>());
    } catch (const json::exception& e) {
        throw InvalidArgument("config: bad train block '" + where + "': " + e.what());
    }
    if (!(cfg.beta > 0.0)) throw InvalidArgument("config: " + where + ".beta must be > 0");
    if (!(cfg.step_size > 0.0)) throw InvalidArgument("config: " + where + ".step_size must be > 0");
    if (cfg.steps < 0) throw InvalidArgument("config: " + where + ".steps must be >= 0");
    return cfg;
}

}  // namespace

VocabSpec EnvConfig::vocab() const {
    return VocabSpec::make(vocab_size, prompt_len, response_len, enumeration_cap);
}

nlohmann::json default_config_json() {
    json j;
    j["format_version"] = kFormatVersion;
    j["env"] = {
        {"seed", 7},          {"vocab_size", 12},      {"prompt_len", 2},
        {"response_len", 3},  {"num_prompts", 8},      {"rho", 0.6},
        {"num_objectives", 2}, {"enumeration_cap", 65536},
        {"objective_signs", json::array({1.0, -1.0})},
    };
    j["data"] = {
        {"seed", 1002},
        {"n_demos_per_prompt", 128},
        {"n_comparisons_per_prompt", 128},
        {"demo_objective", 0},
        {"demo_temperature", 1.0},
        {"proposal", "uniform"},
        {"split_fractions", json::array({0.8, 0.1, 0.1})},
        {"split_seed", 1003},
    };
    j["policy"] = {
        {"mode", "tabular"},
        {"embed_dim", 8},
        {"hidden_dim", 32},
        {"init_seed", 2001},
        {"adapter",
         {{"enabled", false}, {"rank", 4}, {"freeze_base", true}, {"seed", 2002}}},
    };
    json train;
    train["sft"] = train_defaults(0.5, 4000, "population");
    train["sft"]["seed"] = 3001;
    train["sft"]["objective"] = 0;
    train["dpo"] = train_defaults(2.0e4, 600, "population");
    train["dpo"]["seed"] = 3002;
    train["dpo"]["objective"] = 1;
    train["reward"] = train_defaults(2.0e4, 600, "population");
    train["reward"]["seed"] = 3003;
    train["reward"]["objective"] = 1;
    train["modpo"] = train_defaults(2.0e4, 600, "population");
    train["modpo"]["seed"] = 3004;
    train["modpo"]["objective"] = 0;
    train["modpo"]["w"] = json::array({0.5, 0.5});
    j["train"] = train;
    j["sweep"] = {
        {"swept_objective", 1},
        {"grid", json::array({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9})},
        {"n_mc", 4096},
        {"seed", 4001},
        {"reuse_shared_phases", true},
    };
    j["eval"] = {
        {"n_mc", 10000},
        {"seed", 5001},
        {"w", json::array({0.5, 0.5})},
        {"reference", "sft"},
    };
    j["paths"] = {{"workdir", ""}};
    return j;
}

std::string config_hash(const nlohmann::json& j) {
    // FNV-1a over the canonical dump (nlohmann sorts object keys).
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw InvalidArgument("--set expects key.path=value, got '" + assignment + "'");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // plain string
    }
    json* node = &config;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw InvalidArgument("--set: empty key path");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i])) {
            throw InvalidArgument("--set: unknown config key '" + parts[i] + "' in " + path);
        }
        node = &(*node)[parts[i]];
    }
    if (!node->contains(parts.back())) {
        throw InvalidArgument("--set: unknown config key '" + parts.back() + "' in " + path);
    }
    (*node)[parts.back()] = parsed;
}

RunConfig RunConfig::defaults() {
    return from_json(json::object());
}

RunConfig RunConfig::from_json(const nlohmann::json& user) {
    json merged = default_config_json();
    merge_into(merged, user, "");

    RunConfig cfg;
    cfg.raw = merged;
    cfg.hash = config_hash(merged);
    try {
        if (merged.at("format_version").get<int>() != kFormatVersion) {
            throw InvalidArgument("config: unsupported format_version");
        }
        const json& e = merged.at("env");
        cfg.env.seed = e.at("seed").get<std::uint64_t>();
        cfg.env.vocab_size = e.at("vocab_size").get<int>();
        cfg.env.prompt_len = e.at("prompt_len").get<int>();
        cfg.env.response_len = e.at("response_len").get<int>();
        cfg.env.num_prompts = e.at("num_prompts").get<int>();
        cfg.env.rho = e.at("rho").get<double>();
        cfg.env.num_objectives = e.at("num_objectives").get<int>();
        cfg.env.enumeration_cap = e.at("enumeration_cap").get<std::int64_t>();
        cfg.env.objective_signs = e.at("objective_signs").get<std::vector<double>>();
        if (static_cast<int>(cfg.env.objective_signs.size()) != cfg.env.num_objectives) {
            throw InvalidArgument("config: objective_signs size must equal num_objectives");
        }
        for (double s : cfg.env.objective_signs) {
            if (s != 1.0 && s != -1.0) {
                throw InvalidArgument("config: objective_signs entries must be +1 or -1");
            }
        }

        const json& d = merged.at("data");
        cfg.data.seed = d.at("seed").get<std::uint64_t>();
        cfg.data.n_demos_per_prompt = d.at("n_demos_per_prompt").get<int>();
        cfg.data.n_comparisons_per_prompt = d.at("n_comparisons_per_prompt").get<int>();
        cfg.data.demo_objective = d.at("demo_objective").get<int>();
        cfg.data.demo_temperature = d.at("demo_temperature").get<double>();
        cfg.data.proposal = d.at("proposal").get<std::string>();
        if (cfg.data.proposal != "uniform" && cfg.data.proposal != "sft") {
            throw InvalidArgument("config: data.proposal must be 'uniform' or 'sft'");
        }
        const auto fr = d.at("split_fractions").get<std::vector<double>>();
        if (fr.size() != 3) throw InvalidArgument("config: split_fractions needs 3 entries");
        cfg.data.split_fractions = SplitFractions{fr[0], fr[1], fr[2]};
        cfg.data.split_seed = d.at("split_seed").get<std::uint64_t>();

        const json& p = merged.at("policy");
        cfg.policy.mode = parse_policy_mode(p.at("mode").get<std::string>());
        cfg.policy.embed_dim = p.at("embed_dim").get<int>();
        cfg.policy.hidden_dim = p.at("hidden_dim").get<int>();
        cfg.policy.init_seed = p.at("init_seed").get<std::uint64_t>();
        const json& a = p.at("adapter");
        cfg.policy.adapter.enabled = a.at("enabled").get<bool>();
        cfg.policy.adapter.rank = a.at("rank").get<int>();
        cfg.policy.adapter.freeze_base = a.at("freeze_base").get<bool>();
        cfg.policy.adapter.seed = a.at("seed").get<std::uint64_t>();

        const json& t = merged.at("train");
        cfg.sft.train = parse_train(t.at("sft"), "sft");
        cfg.sft.objective = t.at("sft").at("objective").get<int>();
        cfg.dpo.train = parse_train(t.at("dpo"), "dpo");
        cfg.dpo.objective = t.at("dpo").at("objective").get<int>();
        cfg.reward.train = parse_train(t.at("reward"), "reward");
        cfg.reward.objective = t.at("reward").at("objective").get<int>();
        cfg.modpo.train = parse_train(t.at("modpo"), "modpo");
        cfg.modpo.objective = t.at("modpo").at("objective").get<int>();
        if (cfg.modpo.train.w.size() == 0) {
            throw InvalidArgument("config: train.modpo.w must be a weight vector");
        }

        const json& s = merged.at("sweep");
        cfg.sweep.swept_objective = s.at("swept_objective").get<int>();
        cfg.sweep.grid = s.at("grid").get<std::vector<double>>();
        cfg.sweep.n_mc = s.at("n_mc").get<int>();
        cfg.sweep.seed = s.at("seed").get<std::uint64_t>();
        cfg.sweep.reuse_shared_phases = s.at("reuse_shared_phases").get<bool>();

        const json& ev = merged.at("eval");
        cfg.eval.n_mc = ev.at("n_mc").get<int>();
        cfg.eval.seed = ev.at("seed").get<std::uint64_t>();
        cfg.eval.w = ev.at("w").get<std::vector<double>>();
        cfg.eval.reference = ev.at("reference").get<std::string>();
        if (cfg.eval.reference != "sft" && cfg.eval.reference != "uniform") {
            throw InvalidArgument("config: eval.reference must be 'sft' or 'uniform'");
        }

        cfg.paths.workdir = merged.at("paths").at("workdir").get<std::string>();
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }

    // Shape checks that need several blocks at once.
    cfg.env.vocab();  // validates vocabulary and the enumeration cap
    if (cfg.data.demo_objective < 0 || cfg.data.demo_objective >= cfg.env.num_objectives) {
        throw InvalidArgument("config: data.demo_objective out of range");
    }
    for (const PhaseConfig* ph : {&cfg.dpo, &cfg.reward, &cfg.modpo}) {
        if (ph->objective < 0 || ph->objective >= cfg.env.num_objectives) {
            throw InvalidArgument("config: train objective out of range");
        }
    }
    if (static_cast<int>(cfg.modpo.train.w.size()) != cfg.env.num_objectives) {
        throw InvalidArgument("config: train.modpo.w dimension must equal num_objectives");
    }
    if (cfg.sweep.swept_objective < 0 || cfg.sweep.swept_objective >= cfg.env.num_objectives) {
        throw InvalidArgument("config: sweep.swept_objective out of range");
    }
    return cfg;
}

RunConfig RunConfig::load_file(const std::string& path,
                               const std::vector<std::string>& overrides) {
    json user = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file: " + path);
        try {
            in >> user;
        } catch (const json::exception& e) {
            throw InvalidArgument("config: parse error in " + path + ": " + e.what());
        }
    }
    json merged = default_config_json();
    merge_into(merged, user, "");
    for (const std::string& ov : overrides) apply_override(merged, ov);
    return from_json(merged);
}

}  // namespace prefalign
