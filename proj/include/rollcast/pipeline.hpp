#pragma once

// Run configuration and the command implementations behind the CLI.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "rollcast/gridio.hpp"
#include "rollcast/model.hpp"
#include "rollcast/scheduler.hpp"
#include "rollcast/trainer.hpp"

namespace rollcast::pipeline {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_divergence = 3, exit_io = 4 };

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::size_t num_vars = 2;
    std::size_t lat_points = 16;
    std::size_t lon_points = 32;
    std::size_t num_steps = 2000;
    std::int64_t base_step_hours = 6;
    gridio::RegimeConfig regime;
};

struct EvalConfig {
    std::vector<std::int64_t> leads = {24, 72, 138, 240};
    std::size_t max_init_times = 200;  // evenly spaced over the test split
    int climatology_day_bin = 30;
    std::vector<std::int64_t> compare_leads = {138};
    std::size_t compare_episodes = 200;
    std::uint64_t random_seed = 1000;  // random policy uses random_seed + episode
};

struct NumericsConfig {
    bool parallel_kernels = true;
    int threads = 0;  // 0 keeps the OpenMP default
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "run";
    std::string data_path;  // empty: <out_dir>/data.arrw
    DataConfig data;
    model::ModelConfig model;
    model::PretrainConfig pretrain;
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 0;  // 0: only at the end
    scheduler::DqnConfig dqn;
    scheduler::FinetuneConfig finetune;
    std::optional<double> omega;  // unset: -0.05 x mean one-step 6h RMSE
    EvalConfig eval;
    NumericsConfig numerics;

    std::filesystem::path data_file() const;
    std::filesystem::path out(const std::string& name) const { return std::filesystem::path(out_dir) / name; }
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys and type mismatches raise ConfigError naming the key.
RunConfig from_json(const nlohmann::json& j);
/// Range and consistency checks that do not need the data; throws ConfigError.
void validate(const RunConfig& c);

/// Merges `overlay` into `base`; every overlay key must already exist in `base`.
void strict_merge(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path = "");
/// Applies "a.b.c=value" overrides; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults <- JSON file (optional) <- overrides, then validated.
RunConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

std::uint64_t config_hash(const RunConfig& c);
/// "# rollcast <version> config_hash=<hex> seed=<seed>"
std::string provenance_line(const RunConfig& c);

/// CSV with a provenance comment line followed by a header row.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::string& provenance, const std::vector<std::string>& header,
              bool append = false);
    void row(const std::vector<std::string>& cells);
    void flush() { out_.flush(); }

private:
    std::ofstream out_;
    std::filesystem::path path_;
    std::size_t columns_;
};

std::string fmt(double x);

/// Maps an exception to an exit code and writes a one-line diagnostic.
int exit_code_for(const std::exception_ptr& e, std::ostream& err);

struct CommandOptions {
    std::filesystem::path checkpoint;  // model checkpoint (defaults per command)
    std::filesystem::path dqn;         // scheduler checkpoint; empty: none
    std::string policy = "greedy";     // eval: naive | greedy | random | adaptive
    bool resume = false;               // pretrain: continue from <out>/pretrain.ckpt
    std::size_t pe_h = 4, pe_w = 8, pe_dim = 32;
    std::ostream* log = nullptr;
};

void apply_numerics(const NumericsConfig& n);

/// Evenly spaced initial-frame indices over the test split with room for `lead`.
std::vector<std::size_t> test_init_frames(const gridio::Dataset& d, std::int64_t lead, std::size_t max_count);

struct EvalRow {
    std::int64_t lead = 0;
    std::string variable;  // variable name, or "all"
    double rmse = 0.0;
    double acc = 0.0;
    std::size_t init_times = 0;
};

/// Mean RMSE / ACC at each lead over test-split initial times, one row per
/// variable plus an "all" row, with trajectories chosen by `choose`.
std::vector<EvalRow> evaluate_leads(const scheduler::Environment& env, const metrics::Climatology& clim,
                                    const scheduler::Chooser& choose, std::span<const std::int64_t> leads,
                                    std::size_t max_init_times);

gridio::Dataset load_dataset(const RunConfig& c);
/// Builds the model from the config and loads parameter values from `path`;
/// extra tensors (optimizer state) are ignored.
model::ForecastModel load_model(const RunConfig& c, const gridio::GridSpec& spec, const std::filesystem::path& path);

void cmd_gen_data(const RunConfig& c, const CommandOptions& o);
void cmd_pretrain(const RunConfig& c, const CommandOptions& o);
void cmd_finetune(const RunConfig& c, const CommandOptions& o);
void cmd_eval(const RunConfig& c, const CommandOptions& o);
void cmd_compare_rollouts(const RunConfig& c, const CommandOptions& o);
void cmd_pe_viz(const RunConfig& c, const CommandOptions& o);

}  // namespace rollcast::pipeline
