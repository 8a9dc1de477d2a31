#include <algorithm>
#include <cmath>
#include <sstream>

#include "rollcast/gridio.hpp"

namespace rollcast::gridio {

GridSpec GridSpec::equirectangular(std::size_t v, std::size_t h, std::size_t w, std::int64_t base_step) {
    GridSpec s;
    s.num_vars = v;
    s.lat_points = h;
    s.lon_points = w;
    s.base_step_hours = base_step;
    const double dlat = 180.0 / static_cast<double>(h);
    for (std::size_t i = 0; i < h; ++i) s.lat_degrees.push_back(90.0 - (static_cast<double>(i) + 0.5) * dlat);
    s.validate();
    return s;
}

void GridSpec::validate() const {
    if (num_vars < 1) throw GridError("GridSpec: need at least one variable");
    if (lat_points < 2) throw GridError("GridSpec: need at least 2 latitude points, got " + std::to_string(lat_points));
    if (lon_points < 2)
        throw GridError("GridSpec: need at least 2 longitude points, got " + std::to_string(lon_points));
    if (lat_degrees.size() != lat_points)
        throw GridError("GridSpec: " + std::to_string(lat_degrees.size()) + " latitudes for " +
                        std::to_string(lat_points) + " rows");
    for (std::size_t i = 0; i < lat_points; ++i) {
        if (!std::isfinite(lat_degrees[i]) || std::abs(lat_degrees[i]) > 90.0)
            throw GridError("GridSpec: latitude " + std::to_string(i) + " outside [-90, 90]");
        if (i > 0 && !(lat_degrees[i] < lat_degrees[i - 1]))
            throw GridError("GridSpec: latitudes must be strictly decreasing (row " + std::to_string(i) + ")");
    }
    if (base_step_hours <= 0) throw GridError("GridSpec: base step must be positive");
}

bool GridField::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::size_t Dataset::index_of(std::int64_t t) const {
    const auto step = step_hours();
    if (t < 0 || t % step != 0) throw std::out_of_range("timestamp " + std::to_string(t) + "h is not on the grid");
    const auto idx = static_cast<std::size_t>(t / step);
    if (idx >= frames.size())
        throw std::out_of_range("timestamp " + std::to_string(t) + "h beyond dataset end (" +
                                std::to_string((frames.size() - 1) * static_cast<std::size_t>(step)) + "h)");
    return idx;
}

std::pair<std::size_t, std::size_t> Dataset::split_range(Split s) const {
    switch (s) {
        case Split::train: return {0, splits.train_end};
        case Split::val: return {splits.train_end, splits.val_end};
        case Split::test: return {splits.val_end, frames.size()};
    }
    return {0, 0};
}

void Dataset::validate() const {
    if (!spec) throw GridError("Dataset: missing spec");
    spec->validate();
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = frames[i];
        if (f.values.size() != spec->size()) throw GridError("Dataset: frame " + std::to_string(i) + " has wrong size");
        if (f.timestamp_hours != static_cast<std::int64_t>(i) * spec->base_step_hours)
            throw GridError("Dataset: frame " + std::to_string(i) + " timestamp out of sequence");
        if (!f.all_finite()) throw GridError("Dataset: frame " + std::to_string(i) + " has non-finite values");
    }
    if (splits.train_end > splits.val_end || splits.val_end > frames.size())
        throw GridError("Dataset: inconsistent split bounds");
}

bool same_contents(const Dataset& a, const Dataset& b) {
    if (!a.spec || !b.spec || !(*a.spec == *b.spec) || a.frames.size() != b.frames.size()) return false;
    for (std::size_t i = 0; i < a.frames.size(); ++i) {
        if (a.frames[i].timestamp_hours != b.frames[i].timestamp_hours) return false;
        if (a.frames[i].values != b.frames[i].values) return false;
    }
    return true;
}

Window window(const Dataset& dataset, std::int64_t t0_hours, std::int64_t delta_hours) {
    if (delta_hours < 0 || delta_hours % dataset.step_hours() != 0)
        throw std::invalid_argument("window: interval " + std::to_string(delta_hours) +
                                    "h is not a non-negative multiple of the base step");
    const auto& x0 = dataset.at_time(t0_hours);
    const auto& xd = dataset.at_time(t0_hours + delta_hours);
    Window w{x0, xd, FieldDelta{dataset.spec, std::vector<double>(x0.values.size()), delta_hours}};
    for (std::size_t i = 0; i < x0.values.size(); ++i) w.delta.values[i] = xd.values[i] - x0.values[i];
    return w;
}

namespace {
std::int64_t floor_mod(std::int64_t a, std::int64_t n) { return ((a % n) + n) % n; }
std::int64_t floor_div(std::int64_t a, std::int64_t n) { return (a - floor_mod(a, n)) / n; }
}  // namespace

int day_of_year(std::int64_t t) { return static_cast<int>(floor_mod(floor_div(t, 24), 365)); }
int hour_of_day(std::int64_t t) { return static_cast<int>(floor_mod(t, 24)); }

}  // namespace rollcast::gridio
