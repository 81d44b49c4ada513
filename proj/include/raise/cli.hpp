#pragma once

#include <string>
#include <vector>

#include "raise/metrics.hpp"
#include "raise/model.hpp"

namespace ranking {

// Everything a command needs: the model configuration plus file locations and
// command-specific options. Parsed from `key=value` config lines and/or
// `--key value` flags (flags win); the RAISE_SEED environment variable
// overrides the seed from both.
struct RunConfig {
    RaiseConfig model;

    // Locations. Artifacts always land in workdir; the interactions and
    // reviews paths are resolved relative to workdir unless absolute.
    std::string workdir = ".";
    std::string interactions = "interactions.tsv";
    std::string reviews = "reviews.jsonl";

    // Synthetic-data generation.
    size_t users = 100;
    size_t items = 200;
    size_t intents = 4;
    size_t reviews_per_entity = 5;
    double target_positives = 2.0;

    // Base-ranker training.
    size_t gmf_epochs = 30;
    double gmf_lr = 0.05;
    size_t neg_per_pos = 4;

    // Evaluation.
    ApDenominator ap_denominator = ApDenominator::MinKRelevant;

    // Profiling (head count of the multi-head comparison mechanism).
    size_t heads = 4;

    // Explanations.
    std::string user;
    std::string item;
    size_t top_m = 10;

    // Resolves a path against workdir (absolute paths pass through).
    std::string resolve(const std::string& path) const;
    std::string artifact(const std::string& name) const;
};

// Parses `--config FILE` plus `--key value` overrides (in the order given;
// later flags win). Unknown keys, malformed values and out-of-range settings
// raise ConfigError naming the offender. The returned config is validated.
RunConfig parse_config(const std::vector<std::string>& args);

// Reads one config file (key=value lines, '#' comments) into cfg.
void apply_config_file(RunConfig& cfg, const std::string& path);

// Applies a single key=value pair; shared by files and flags.
void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Runs one pipeline command with a parsed config. Returns the process exit
// status (0 on success). Commands: gen-synth, embed-reviews, train-base,
// make-lists, train-rerank, evaluate, ablate, profile, explain.
int run_command(const std::string& command, const RunConfig& cfg);

// Full argv entry point: `raise <command> [--config FILE] [--key value]...`.
// Prints errors to stderr and usage on demand.
int run_cli(int argc, char** argv);

std::string cli_usage();

}  // namespace ranking
