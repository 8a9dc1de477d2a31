#pragma once

// Supervised pre-training of the forecasting model on (X0, X_delta) windows.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rollcast/diff/params.hpp"
#include "rollcast/gridio.hpp"
#include "rollcast/metrics.hpp"
#include "rollcast/model.hpp"

namespace rollcast::model {

struct PretrainConfig {
    std::size_t steps = 1500;
    std::size_t batch_size = 8;
    double lr = 2e-3;
    double min_lr_fraction = 0.1;  // cosine floor as a fraction of lr
    std::size_t warmup_steps = 50;
    double weight_decay = 1e-4;
    double clip_norm = 1.0;
    double aux_weight = 1.0;  // multiplies -aux1 + alpha * aux2
    std::uint64_t seed = 7;
};

struct Sample {
    std::size_t frame = 0;  // index of X0
    std::int64_t delta = 0;
};

/// Deterministic batch for (seed, step): interval drawn from the configured
/// probabilities, X0 uniform over frames of `split` whose target stays in the split.
std::vector<Sample> sample_batch(const gridio::Dataset& d, const ModelConfig& cfg, std::uint64_t seed,
                                 std::uint64_t step, std::size_t batch, gridio::Split split = gridio::Split::train);

struct LossParts {
    diff::Var l_delta;
    diff::Var aux1;  // summed over blocks
    diff::Var aux2;
    diff::Var total;  // l_delta + aux_weight * (-aux1 + alpha * aux2)
};

LossParts pretrain_loss(diff::Graph& g, const ForecastModel& m, const gridio::Dataset& d,
                        std::span<const Sample> batch, std::span<const double> token_weights, double aux_weight);

struct StepStats {
    std::size_t step = 0;  // 1-based index of the step just taken
    double l_delta = 0.0;
    double aux1 = 0.0;
    double aux2 = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
};

class Pretrainer {
public:
    Pretrainer(ForecastModel& model, const gridio::Dataset& data, PretrainConfig cfg, metrics::WeightTable w);

    /// One optimizer step. Throws diff::DivergenceError on a non-finite loss.
    StepStats step();
    std::size_t steps_done() const noexcept { return step_; }
    /// Learning rate for the step with 0-based index `step`.
    double lr_at(std::size_t step) const;

    /// Model parameters, optimizer moments and the step counter.
    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

private:
    ForecastModel& model_;
    const gridio::Dataset& data_;
    PretrainConfig cfg_;
    std::vector<double> token_w_;
    diff::AdamW opt_;
    std::size_t step_ = 0;
};

/// Mean one-step L_delta (= squared weighted RMSE) of the model over `split`,
/// using every `stride`-th admissible initial frame.
double evaluate_l_delta(const ForecastModel& m, const gridio::Dataset& d, gridio::Split split, std::int64_t delta,
                        const metrics::WeightTable& w, std::size_t stride = 1);
/// Same for the persistence forecast X_hat = X0.
double persistence_l_delta(const gridio::Dataset& d, gridio::Split split, std::int64_t delta,
                           const metrics::WeightTable& w, std::size_t stride = 1);

/// Initial-frame indices of `split` whose delta-ahead target lies inside the split.
std::vector<std::size_t> admissible_frames(const gridio::Dataset& d, gridio::Split split, std::int64_t delta,
                                           std::size_t stride = 1);

}  // namespace rollcast::model
