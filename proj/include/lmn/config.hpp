#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "lmn/common.hpp"

namespace lmn {

// Flat key = value configuration with # comments. Precedence: built-in
// defaults < config file < command-line flags. Every run echoes the fully
// resolved map next to its outputs so it can be replayed exactly.
class Config {
public:
    enum class Kind { Int, Real, Text, Flag, Seed };

    struct KeySpec {
        Kind kind;
        std::string def;       // default value; empty + required means "must be set"
        bool required = false;
        double lo = 0.0, hi = 0.0;  // numeric range (inclusive); lo > hi disables
        const char* doc = "";
    };

    Config() {
        for (const auto& [k, spec] : specs())
            if (!spec.def.empty() || spec.kind == Kind::Text) values_[k] = spec.def;
        if (const char* env = std::getenv("LMN_OUT"); env && *env) values_["out"] = env;
    }

    static const std::map<std::string, KeySpec>& specs() {
        static const std::map<std::string, KeySpec> s = {
            {"seed", {Kind::Seed, "", true, 0, 0, "PRNG seed; required"}},
            {"out", {Kind::Text, "out", false, 0, 0, "output directory (env LMN_OUT overrides the default)"}},
            {"threads", {Kind::Int, "1", false, 1, 256, "episode-level parallelism"}},

            {"generator", {Kind::Text, "repeat_markov", false, 0, 0, "repeat_markov | label_stream"}},
            {"vocab", {Kind::Int, "500", false, 2, 1000000, "token count for repeat_markov"}},
            {"episodes", {Kind::Int, "200", false, 1, 1000000, "train episode count"}},
            {"test_episodes", {Kind::Int, "50", false, 0, 1000000, "test episode count"}},
            {"mean_length", {Kind::Int, "100", false, 2, 1000000, "mean episode length"}},
            {"rho", {Kind::Real, "0.7", false, 0.0, 1.0, "repeat bias"}},
            {"home_set", {Kind::Int, "5", false, 1, 1000000, "home-set size per episode"}},
            {"input_dim", {Kind::Int, "16", false, 1, 4096, "feature dimension for label_stream"}},
            {"seen", {Kind::Int, "25", false, 1, 1000000, "seen class count"}},
            {"unseen", {Kind::Int, "10", false, 0, 1000000, "unseen class count"}},
            {"spread", {Kind::Real, "0.25", false, 1e-9, 1e9, "cluster standard deviation"}},
            {"picks", {Kind::Int, "5", false, 1, 1000000, "classes picked per test episode"}},
            {"test_episode_length", {Kind::Int, "10", false, 2, 1000000, "test episode length"}},
            {"train_episode_length", {Kind::Int, "10", false, 1, 1000000, "train episode length"}},

            {"embed_dim", {Kind::Int, "16", false, 1, 4096, "d_e: embedding size (stateful PCN)"}},
            {"hidden_dim", {Kind::Int, "32", false, 1, 4096, "d: PCN hidden size"}},
            {"state_dim", {Kind::Int, "8", false, 1, 4096, "k: combiner RNN state size"}},
            {"classes", {Kind::Int, "0", false, 0, 1000000, "total class count; 0 = from data"}},

            {"cells_per_label", {Kind::Int, "1", false, 1, 100000, "T: memory cells per label"}},
            {"lambda", {Kind::Real, "10", false, 1e-9, 1e9, "kernel sharpness"}},
            {"delta", {Kind::Real, "0.5", false, 0.0, 1e9, "strength exponent"}},
            {"margin", {Kind::Real, "0.5", false, 0.0, 1e9, "write-gate margin (log-prob units)"}},
            {"decay", {Kind::Real, "0.99", false, 1e-12, 1.0, "alpha decay"}},
            {"total_capacity", {Kind::Int, "0", false, 0, 100000000, "N for the global-LRU ablation; 0 = labels*T"}},

            {"epochs", {Kind::Int, "20", false, 0, 100000, "PCN training epochs"}},
            {"lr", {Kind::Real, "0.001", false, 0.0, 1e9, "PCN learning rate"}},
            {"beta1", {Kind::Real, "0.9", false, 0.0, 1.0, "Adam beta1"}},
            {"beta2", {Kind::Real, "0.999", false, 0.0, 1.0, "Adam beta2"}},
            {"adam_eps", {Kind::Real, "1e-8", false, 1e-300, 1.0, "Adam epsilon"}},
            {"combiner_epochs", {Kind::Int, "3", false, 0, 100000, "combiner training epochs"}},
            {"combiner_lr", {Kind::Real, "0.003", false, 0.0, 1e9, "combiner learning rate"}},
            {"combiner_kind", {Kind::Text, "rnn", false, 0, 0, "fixed | rnn"}},
            {"val_fraction", {Kind::Real, "0.2", false, 0.01, 0.99, "validation share for the theta grid"}},
            {"theta", {Kind::Real, "0.5", false, 0.0, 1.0, "fixed mixing weight fallback"}},

            {"mode", {Kind::Text, "lmn_fixed", false, 0, 0, "pcn_only | memory_only | lmn_fixed | lmn"}},
            {"policy", {Kind::Text, "label_partitioned", false, 0, 0, "label_partitioned | write_always_global_lru"}},
            {"data", {Kind::Text, "", false, 0, 0, "dataset path (JSONL)"}},
            {"train_data", {Kind::Text, "", false, 0, 0, "training dataset path; fixes vocabulary and seen labels"}},
            {"model", {Kind::Text, "", false, 0, 0, "checkpoint path"}},
            {"persist_memory", {Kind::Flag, "false", false, 0, 0, "carry memory across episodes"}},
            {"second_occurrence", {Kind::Flag, "false", false, 0, 0, "count only second within-episode occurrences"}},
            {"modes", {Kind::Text, "pcn_only,lmn_fixed", false, 0, 0, "ablation modes, comma separated"}},
            {"policies", {Kind::Text, "label_partitioned", false, 0, 0, "ablation policies, comma separated"}},

            {"gc_instances", {Kind::Int, "20", false, 1, 100000, "gradcheck instances per component"}},
            {"gc_eps", {Kind::Real, "1e-5", false, 1e-12, 1.0, "finite-difference step"}},
            {"gc_tol", {Kind::Real, "1e-4", false, 1e-12, 1.0, "max relative error"}},
        };
        return s;
    }

    static bool known(const std::string& key) { return specs().count(key) > 0; }

    void set(const std::string& key, const std::string& value) {
        if (!known(key)) throw ConfigError(key, "unknown configuration key");
        values_[key] = value;
    }

    void load_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("config", "cannot open config file " + path.string());
        std::string line;
        size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            size_t eq = line.find('=');
            std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (eq == std::string::npos)
                throw ConfigError(trimmed, "config line " + std::to_string(lineno) + " is not key = value");
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    bool is_set(const std::string& key) const {
        auto it = values_.find(key);
        return it != values_.end() && !it->second.empty();
    }

    std::string text(const std::string& key) const {
        auto it = values_.find(key);
        return it == values_.end() ? std::string() : it->second;
    }

    long geti(const std::string& key) const {
        const KeySpec& spec = specs().at(key);
        long v;
        try {
            size_t pos = 0;
            v = std::stol(raw(key), &pos);
            if (pos != raw(key).size()) throw std::invalid_argument("trailing");
        } catch (...) {
            throw ConfigError(key, "expected an integer, got '" + raw(key) + "'");
        }
        if (spec.lo <= spec.hi && (v < spec.lo || v > spec.hi))
            throw ConfigError(key, "value " + std::to_string(v) + " outside [" + format_num(spec.lo) + ", " + format_num(spec.hi) + "]");
        return v;
    }

    double getd(const std::string& key) const {
        const KeySpec& spec = specs().at(key);
        double v;
        try {
            size_t pos = 0;
            v = std::stod(raw(key), &pos);
            if (pos != raw(key).size()) throw std::invalid_argument("trailing");
        } catch (...) {
            throw ConfigError(key, "expected a number, got '" + raw(key) + "'");
        }
        if (spec.lo <= spec.hi && (v < spec.lo || v > spec.hi))
            throw ConfigError(key, "value " + raw(key) + " outside [" + format_num(spec.lo) + ", " + format_num(spec.hi) + "]");
        return v;
    }

    bool getb(const std::string& key) const {
        std::string v = raw(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError(key, "expected a boolean, got '" + v + "'");
    }

    uint64_t seed() const {
        if (!is_set("seed")) throw ConfigError("seed", "required key is missing");
        try {
            return std::stoull(raw("seed"));
        } catch (...) {
            throw ConfigError("seed", "expected an unsigned integer, got '" + raw("seed") + "'");
        }
    }

    // Sorted key = value echo of the resolved configuration.
    std::string echo() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
        return os.str();
    }

    void write_echo(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        std::ofstream os(dir / "config.resolved.txt", std::ios::trunc);
        os << echo();
    }

private:
    std::map<std::string, std::string> values_;

    const std::string& raw(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end() || it->second.empty()) throw ConfigError(key, "required key is missing");
        return it->second;
    }

    static std::string trim(const std::string& s) {
        size_t b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        size_t e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static std::string format_num(double v) {
        std::ostringstream os;
        os << v;
        return os.str();
    }
};

}  // namespace lmn
