#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rollcast/diff/graph.hpp"

namespace rollcast::diff {

/// Owns named parameters with stable addresses (models keep raw pointers).
class ParameterStore {
public:
    Parameter& add(const std::string& name, Shape shape, bool trainable = true);
    Parameter& add_normal(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng,
                          bool trainable = true);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.contains(name); }

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::vector<Parameter*> with_prefix(const std::string& prefix);

    void zero_grad();
    /// Copies values (not gradients) from a store holding the same names and shapes.
    void copy_values_from(const ParameterStore& other);
    std::size_t count() const noexcept { return params_.size(); }

private:
    std::deque<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 0.0;  // 0 disables global-norm clipping
};

/// Raised when training produces a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Decoupled weight decay Adam. Parameter values and both moment estimates are
/// kept at f32 precision after every step so a checkpoint restores the exact
/// optimizer trajectory.
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

    /// Returns the pre-clipping global gradient norm.
    double step();
    void zero_grad();

    std::int64_t steps_taken() const noexcept { return t_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    const AdamWConfig& config() const noexcept { return cfg_; }

    /// Exposes moments as parameters named "<prefix>m.<name>" / "<prefix>v.<name>"
    /// so they ride along in a checkpoint.
    void export_state(ParameterStore& out, const std::string& prefix) const;
    void import_state(const ParameterStore& in, const std::string& prefix);

private:
    std::vector<Parameter*> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
};

double round_to_f32(double x);

// --- checkpoint container -------------------------------------------------------
//
// "RCKP" | u32 version | u32 tensor count | tensors | u64 FNV-1a of all preceding bytes
// tensor: u16 name length | name bytes | u32 rank | u32 dims[rank] | f32 payload (LE)

class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& msg) : std::runtime_error("checkpoint: " + msg) {}
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<const Parameter*>& params);
/// Loads every tensor in the file into `store`, creating entries for names
/// it does not hold yet; existing entries must match in shape.
void load_checkpoint(const std::filesystem::path& path, ParameterStore& store);

// --- finite-difference gradient checking ------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    bool passed = false;
};

struct GradCheckOptions {
    double tol = 1e-4;
    double step = 1e-5;
    /// Denominator floor: errors are |a-n| / max(|a|, |n|, abs_floor).
    double abs_floor = 1e-6;
};

/// `loss` must rebuild the whole computation in the graph it is handed and
/// return a scalar. Parameters are perturbed in place and restored.
GradCheckReport check_gradients(const std::function<Var(Graph&)>& loss, std::span<Parameter* const> params,
                                const GradCheckOptions& opts = {});

}  // namespace rollcast::diff
