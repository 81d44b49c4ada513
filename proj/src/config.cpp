#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "raise/cli.hpp"
#include "raise/errors.hpp"
#include "raise/idm.hpp"

namespace ranking {

namespace {

std::string trim(const std::string& s) {
    size_t from = 0, to = s.size();
    while (from < to && std::isspace(static_cast<unsigned char>(s[from]))) ++from;
    while (to > from && std::isspace(static_cast<unsigned char>(s[to - 1]))) --to;
    return s.substr(from, to - from);
}

size_t parse_size(const std::string& key, const std::string& value) {
    try {
        size_t consumed = 0;
        const long long v = std::stoll(value, &consumed);
        if (consumed != value.size() || v < 0) throw std::invalid_argument(value);
        return static_cast<size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError(key + ": invalid non-negative integer '" + value + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        // stoull wraps negative input around instead of rejecting it
        if (!value.empty() && value.front() == '-') throw std::invalid_argument(value);
        size_t consumed = 0;
        const unsigned long long v = std::stoull(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument(value);
        return static_cast<uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError(key + ": invalid unsigned integer '" + value + "'");
    }
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        size_t consumed = 0;
        const double v = std::stod(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": invalid number '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError(key + ": expected one of {0, 1, true, false}, got '" + value + "'");
}

ApDenominator parse_ap_denominator(const std::string& value) {
    if (value == "min_k_relevant") return ApDenominator::MinKRelevant;
    if (value == "min_k_hits") return ApDenominator::MinKHits;
    throw ConfigError("ap_denominator: expected min_k_relevant or min_k_hits, got '" +
                      value + "'");
}

}  // namespace

std::string RunConfig::resolve(const std::string& path) const {
    if (path.empty() || path.front() == '/') return path;
    if (workdir.empty() || workdir == ".") return path;
    return workdir + "/" + path;
}

std::string RunConfig::artifact(const std::string& name) const {
    return resolve(name);
}

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "d") cfg.model.d = parse_size(key, value);
    else if (key == "n") cfg.model.n = parse_size(key, value);
    else if (key == "t") cfg.model.t = parse_size(key, value);
    else if (key == "b") cfg.model.b = parse_size(key, value);
    else if (key == "l") cfg.model.l_u = cfg.model.l_i = parse_size(key, value);
    else if (key == "l_u") cfg.model.l_u = parse_size(key, value);
    else if (key == "l_i") cfg.model.l_i = parse_size(key, value);
    else if (key == "lr") cfg.model.lr = parse_real(key, value);
    else if (key == "batch_size") cfg.model.batch_size = parse_size(key, value);
    else if (key == "dropout") cfg.model.dropout = parse_real(key, value);
    else if (key == "epochs") cfg.model.epochs = parse_size(key, value);
    else if (key == "seed") cfg.model.seed = parse_u64(key, value);
    else if (key == "co_attention") cfg.model.co_attention = parse_co_attention(value);
    else if (key == "aggregation") cfg.model.aggregation = parse_aggregation(value);
    else if (key == "ablation") cfg.model.ablation = parse_ablation(value);
    else if (key == "encoder_depth") cfg.model.encoder_depth = parse_size(key, value);
    else if (key == "shared_experts") cfg.model.shared_experts = parse_bool(key, value);
    else if (key == "finetune_base") cfg.model.finetune_base = parse_bool(key, value);
    else if (key == "workdir") cfg.workdir = value;
    else if (key == "interactions") cfg.interactions = value;
    else if (key == "reviews") cfg.reviews = value;
    else if (key == "users") cfg.users = parse_size(key, value);
    else if (key == "items") cfg.items = parse_size(key, value);
    else if (key == "intents") cfg.intents = parse_size(key, value);
    else if (key == "reviews_per_entity") cfg.reviews_per_entity = parse_size(key, value);
    else if (key == "target_positives") cfg.target_positives = parse_real(key, value);
    else if (key == "gmf_epochs") cfg.gmf_epochs = parse_size(key, value);
    else if (key == "gmf_lr") cfg.gmf_lr = parse_real(key, value);
    else if (key == "neg_per_pos") cfg.neg_per_pos = parse_size(key, value);
    else if (key == "ap_denominator") cfg.ap_denominator = parse_ap_denominator(value);
    else if (key == "heads") cfg.heads = parse_size(key, value);
    else if (key == "user") cfg.user = value;
    else if (key == "item") cfg.item = value;
    else if (key == "top_m") cfg.top_m = parse_size(key, value);
    else throw ConfigError("unknown configuration key '" + key + "'");
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) +
                              ": expected key=value, got '" + stripped + "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
        apply_config_value(cfg, key, value);
    }
}

namespace {

void validate_run_config(const RunConfig& cfg) {
    cfg.model.validate();
    if (cfg.users == 0 || cfg.items == 0)
        throw ConfigError("users and items must be at least 1");
    if (cfg.intents == 0) throw ConfigError("intents must be at least 1");
    if (cfg.intents > cfg.model.d)
        throw ConfigError("intents=" + std::to_string(cfg.intents) +
                          " cannot exceed d=" + std::to_string(cfg.model.d));
    if (cfg.reviews_per_entity == 0)
        throw ConfigError("reviews_per_entity must be at least 1");
    if (cfg.target_positives <= 0.0)
        throw ConfigError("target_positives must be positive");
    if (cfg.gmf_lr <= 0.0) throw ConfigError("gmf_lr must be positive");
    if (cfg.neg_per_pos == 0) throw ConfigError("neg_per_pos must be at least 1");
    if (cfg.heads == 0) throw ConfigError("heads must be at least 1");
    if (cfg.model.d % cfg.heads != 0)
        throw ConfigError("heads=" + std::to_string(cfg.heads) +
                          " must divide d=" + std::to_string(cfg.model.d));
    if (cfg.top_m == 0) throw ConfigError("top_m must be at least 1");
    if (cfg.workdir.empty()) throw ConfigError("workdir must not be empty");
}

}  // namespace

RunConfig parse_config(const std::vector<std::string>& args) {
    RunConfig cfg;
    // First pass: config files load before any flag so flags always win,
    // regardless of where --config appears on the command line.
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw ConfigError("--config needs a file path");
            apply_config_file(cfg, args[i + 1]);
            ++i;
        }
    }
    for (size_t i = 0; i < args.size(); ++i) {
        const std::string& arg = args[i];
        if (arg == "--config") {
            ++i;  // already applied
            continue;
        }
        if (arg.rfind("--", 0) != 0)
            throw ConfigError("expected a --key, got '" + arg + "'");
        const std::string key = arg.substr(2);
        if (key.empty()) throw ConfigError("empty flag name");
        if (i + 1 >= args.size()) throw ConfigError("--" + key + " needs a value");
        apply_config_value(cfg, key, args[++i]);
    }
    if (const char* env_seed = std::getenv("RAISE_SEED"))
        cfg.model.seed = parse_u64("RAISE_SEED", env_seed);
    validate_run_config(cfg);
    return cfg;
}

}  // namespace ranking
