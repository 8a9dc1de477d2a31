#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "rollcast/gridio.hpp"

namespace rollcast::metrics {

struct WeightTable {
    std::vector<double> lat;  // L(i), mean 1
    std::vector<double> var;  // w(v)
};

/// L(i) = cos(lat_i) / mean cos(lat); w(v) = 1 unless `var_weights` is given.
WeightTable lat_weights(const gridio::GridSpec& spec, std::vector<double> var_weights = {});

/// sqrt( 1/(VHW) sum_v sum_i sum_j w(v) L(i) (pred - truth)^2 )
double rmse(std::span<const double> pred, std::span<const double> truth, const gridio::GridSpec& spec,
            const WeightTable& w);
double rmse(const gridio::GridField& pred, const gridio::GridField& truth, const WeightTable& w);
/// Same, restricted to one variable (1/(HW) normalisation).
double rmse_variable(const gridio::GridField& pred, const gridio::GridField& truth, const WeightTable& w,
                     std::size_t v);
/// Mean over T of the per-time RMSE.
double rmse_series(std::span<const gridio::GridField> preds, std::span<const gridio::GridField> truths,
                   const WeightTable& w);

class ClimatologyError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Mean field per (day-of-year bin, hour-of-day) over the training split.
class Climatology {
public:
    Climatology() = default;
    static Climatology from_training(const gridio::Dataset& d, int day_bin_width = 30);

    /// Throws ClimatologyError when no training frame fell in the bucket.
    const std::vector<double>& lookup(std::int64_t timestamp_hours) const;
    bool has(std::int64_t timestamp_hours) const { return buckets_.contains(key(timestamp_hours)); }
    int day_bin_width() const noexcept { return bin_width_; }

private:
    std::pair<int, int> key(std::int64_t t) const;
    int bin_width_ = 30;
    std::map<std::pair<int, int>, std::vector<double>> buckets_;
};

/// Latitude-weighted anomaly correlation for variable v at a single time.
double acc_variable(std::span<const double> pred, std::span<const double> truth, std::span<const double> clim,
                    const gridio::GridSpec& spec, const WeightTable& w, std::size_t v);
/// Mean over variables of acc_variable.
double acc(const gridio::GridField& pred, const gridio::GridField& truth, const Climatology& clim,
           const WeightTable& w);
double acc_series(std::span<const gridio::GridField> preds, std::span<const gridio::GridField> truths,
                  const Climatology& clim, const WeightTable& w);

/// r = -rmse(pred, truth) + omega.
double step_reward(const gridio::GridField& pred, const gridio::GridField& truth, const WeightTable& w, double omega);
/// G = sum of per-step rewards (omega is already inside each reward).
double trajectory_return(std::span<const double> rewards);

}  // namespace rollcast::metrics
