#include "rollcast/metrics.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace rollcast::metrics {

WeightTable lat_weights(const gridio::GridSpec& spec, std::vector<double> var_weights) {
    WeightTable w;
    double total = 0.0;
    for (double lat : spec.lat_degrees) {
        w.lat.push_back(std::cos(lat * std::numbers::pi / 180.0));
        total += w.lat.back();
    }
    const double mean = total / static_cast<double>(w.lat.size());
    for (auto& x : w.lat) x /= mean;
    if (var_weights.empty()) var_weights.assign(spec.num_vars, 1.0);
    if (var_weights.size() != spec.num_vars) throw std::invalid_argument("lat_weights: need one weight per variable");
    for (double x : var_weights)
        if (!(x > 0.0)) throw std::invalid_argument("lat_weights: variable weights must be positive");
    w.var = std::move(var_weights);
    return w;
}

double rmse(std::span<const double> pred, std::span<const double> truth, const gridio::GridSpec& spec,
            const WeightTable& w) {
    if (pred.size() != spec.size() || truth.size() != spec.size())
        throw std::invalid_argument("rmse: field sizes " + std::to_string(pred.size()) + " / " +
                                    std::to_string(truth.size()) + " do not match grid of " +
                                    std::to_string(spec.size()));
    const std::size_t H = spec.lat_points, W = spec.lon_points;
    double acc = 0.0;
    for (std::size_t v = 0; v < spec.num_vars; ++v)
        for (std::size_t i = 0; i < H; ++i) {
            const double wt = w.var[v] * w.lat[i];
            const std::size_t base = (v * H + i) * W;
            double row = 0.0;
            for (std::size_t j = 0; j < W; ++j) {
                const double e = pred[base + j] - truth[base + j];
                row += e * e;
            }
            acc += wt * row;
        }
    return std::sqrt(acc / static_cast<double>(spec.size()));
}

double rmse(const gridio::GridField& pred, const gridio::GridField& truth, const WeightTable& w) {
    return rmse(pred.values, truth.values, *pred.spec, w);
}

double rmse_variable(const gridio::GridField& pred, const gridio::GridField& truth, const WeightTable& w,
                     std::size_t v) {
    const auto& spec = *pred.spec;
    if (pred.values.size() != truth.values.size()) throw std::invalid_argument("rmse_variable: shape mismatch");
    const std::size_t H = spec.lat_points, W = spec.lon_points;
    double acc = 0.0;
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            const double e = pred.at(v, i, j) - truth.at(v, i, j);
            acc += w.var[v] * w.lat[i] * e * e;
        }
    return std::sqrt(acc / static_cast<double>(H * W));
}

double rmse_series(std::span<const gridio::GridField> preds, std::span<const gridio::GridField> truths,
                   const WeightTable& w) {
    if (preds.size() != truths.size() || preds.empty()) throw std::invalid_argument("rmse_series: length mismatch");
    double total = 0.0;
    for (std::size_t t = 0; t < preds.size(); ++t) total += rmse(preds[t], truths[t], w);
    return total / static_cast<double>(preds.size());
}

// --- climatology ---------------------------------------------------------------

std::pair<int, int> Climatology::key(std::int64_t t) const {
    return {gridio::day_of_year(t) / bin_width_, gridio::hour_of_day(t)};
}

Climatology Climatology::from_training(const gridio::Dataset& d, int day_bin_width) {
    if (day_bin_width < 1) throw std::invalid_argument("climatology: bin width must be >= 1 day");
    Climatology c;
    c.bin_width_ = day_bin_width;
    std::map<std::pair<int, int>, std::size_t> counts;
    const auto [begin, end] = d.split_range(gridio::Split::train);
    for (std::size_t k = begin; k < end; ++k) {
        const auto& f = d.frames[k];
        auto key = c.key(f.timestamp_hours);
        auto& acc = c.buckets_[key];
        if (acc.empty()) acc.assign(f.values.size(), 0.0);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.values[i];
        ++counts[key];
    }
    for (auto& [key, acc] : c.buckets_)
        for (auto& x : acc) x /= static_cast<double>(counts[key]);
    return c;
}

const std::vector<double>& Climatology::lookup(std::int64_t t) const {
    auto it = buckets_.find(key(t));
    if (it == buckets_.end())
        throw ClimatologyError("no climatology for day-of-year bin " + std::to_string(key(t).first) + ", hour " +
                               std::to_string(key(t).second));
    return it->second;
}

double acc_variable(std::span<const double> pred, std::span<const double> truth, std::span<const double> clim,
                    const gridio::GridSpec& spec, const WeightTable& w, std::size_t v) {
    const std::size_t H = spec.lat_points, W = spec.lon_points;
    double num = 0.0, pp = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            const std::size_t e = (v * H + i) * W + j;
            const double a = pred[e] - clim[e];
            const double b = truth[e] - clim[e];
            num += w.lat[i] * a * b;
            pp += w.lat[i] * a * a;
            tt += w.lat[i] * b * b;
        }
    const double den = std::sqrt(pp * tt);
    return den > 0.0 ? num / den : 0.0;
}

double acc(const gridio::GridField& pred, const gridio::GridField& truth, const Climatology& clim,
           const WeightTable& w) {
    const auto& c = clim.lookup(truth.timestamp_hours);
    const auto& spec = *pred.spec;
    double total = 0.0;
    for (std::size_t v = 0; v < spec.num_vars; ++v) total += acc_variable(pred.values, truth.values, c, spec, w, v);
    return total / static_cast<double>(spec.num_vars);
}

double acc_series(std::span<const gridio::GridField> preds, std::span<const gridio::GridField> truths,
                  const Climatology& clim, const WeightTable& w) {
    if (preds.size() != truths.size() || preds.empty()) throw std::invalid_argument("acc_series: length mismatch");
    double total = 0.0;
    for (std::size_t t = 0; t < preds.size(); ++t) total += acc(preds[t], truths[t], clim, w);
    return total / static_cast<double>(preds.size());
}

double step_reward(const gridio::GridField& pred, const gridio::GridField& truth, const WeightTable& w,
                   double omega) {
    return -rmse(pred, truth, w) + omega;
}

double trajectory_return(std::span<const double> rewards) {
    return std::accumulate(rewards.begin(), rewards.end(), 0.0);
}

}  // namespace rollcast::metrics
