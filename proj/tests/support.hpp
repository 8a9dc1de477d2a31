#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "rollcast/gridio.hpp"
#include "rollcast/model.hpp"

namespace rollcast::testing {

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

/// Frames of i.i.d. noise around a per-variable offset; splits 70/10/20.
inline gridio::Dataset random_dataset(const gridio::GridSpec& spec, std::size_t steps, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    gridio::Dataset d;
    d.spec = std::make_shared<const gridio::GridSpec>(spec);
    for (std::size_t t = 0; t < steps; ++t) {
        gridio::GridField f(d.spec, static_cast<std::int64_t>(t) * spec.base_step_hours);
        f.values = random_vector(spec.size(), rng);
        for (std::size_t k = 0; k < f.values.size(); ++k) {
            f.values[k] = static_cast<float>(f.values[k] + static_cast<double>(k / spec.cells()));
        }
        d.frames.push_back(std::move(f));
    }
    for (std::size_t v = 0; v < spec.num_vars; ++v) d.variable_names.push_back("var" + std::to_string(v));
    d.splits.train_end = steps * 7 / 10;
    d.splits.val_end = steps * 8 / 10;
    return d;
}

inline gridio::Dataset constant_dataset(const gridio::GridSpec& spec, std::size_t steps, double value) {
    gridio::Dataset d;
    d.spec = std::make_shared<const gridio::GridSpec>(spec);
    for (std::size_t t = 0; t < steps; ++t) {
        gridio::GridField f(d.spec, static_cast<std::int64_t>(t) * spec.base_step_hours);
        std::fill(f.values.begin(), f.values.end(), value);
        d.frames.push_back(std::move(f));
    }
    for (std::size_t v = 0; v < spec.num_vars; ++v) d.variable_names.push_back("var" + std::to_string(v));
    d.splits.train_end = steps * 7 / 10;
    d.splits.val_end = steps * 8 / 10;
    return d;
}

/// N=1, D=8, patch 2 on a 2x4x4 grid: four tokens.
inline model::ModelConfig micro_config() {
    model::ModelConfig c;
    c.tokenizer.patch_size = 2;
    c.tokenizer.embed_dim = 8;
    c.num_blocks = 1;
    c.num_heads = 2;
    c.moe.num_private = 4;
    c.moe.top_k = 2;
    return c;
}

inline gridio::GridSpec micro_spec() { return gridio::GridSpec::equirectangular(2, 4, 4); }

/// Gives every trainable parameter a random value so zero-initialised paths
/// (AdaLN-zero, the head) carry signal.
inline void randomize(diff::ParameterStore& store, std::mt19937_64& rng, double scale = 0.3) {
    std::normal_distribution<double> n(0.0, scale);
    for (auto* p : store.all())
        if (p->trainable)
            for (auto& x : p->value) x = n(rng);
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("rollcast_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace rollcast::testing
