#pragma once

// Weather-state data model, the ARRW binary grid format, interval windowing and
// the synthetic geophysical generator that stands in for reanalysis data.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "rollcast/binio.hpp"

namespace rollcast::gridio {

class GridError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct GridSpec {
    std::size_t num_vars = 2;
    std::size_t lat_points = 16;
    std::size_t lon_points = 32;
    std::vector<double> lat_degrees;  // H entries, strictly decreasing
    std::int64_t base_step_hours = 6;

    /// Cell-centre latitudes of an equirectangular grid.
    static GridSpec equirectangular(std::size_t v, std::size_t h, std::size_t w, std::int64_t base_step = 6);

    std::size_t cells() const noexcept { return lat_points * lon_points; }
    std::size_t size() const noexcept { return num_vars * lat_points * lon_points; }
    /// Throws GridError describing the first violated invariant.
    void validate() const;
    bool operator==(const GridSpec&) const = default;
};

/// One V x H x W state, row-major [v][lat][lon].
struct GridField {
    std::shared_ptr<const GridSpec> spec;
    std::vector<double> values;
    std::int64_t timestamp_hours = 0;

    GridField() = default;
    GridField(std::shared_ptr<const GridSpec> s, std::int64_t t)
        : spec(std::move(s)), values(spec->size(), 0.0), timestamp_hours(t) {}

    double& at(std::size_t v, std::size_t i, std::size_t j) {
        return values[(v * spec->lat_points + i) * spec->lon_points + j];
    }
    double at(std::size_t v, std::size_t i, std::size_t j) const {
        return values[(v * spec->lat_points + i) * spec->lon_points + j];
    }
    bool all_finite() const;
};

struct FieldDelta {
    std::shared_ptr<const GridSpec> spec;
    std::vector<double> values;
    std::int64_t interval_hours = 0;
};

struct SplitBounds {
    std::size_t train_end = 0;  // frames [0, train_end) train
    std::size_t val_end = 0;    // [train_end, val_end) val, [val_end, n) test
};

enum class Split { train, val, test };

struct Dataset {
    std::shared_ptr<const GridSpec> spec;
    std::vector<GridField> frames;  // timestamps i * base_step_hours
    std::vector<std::string> variable_names;
    SplitBounds splits;
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t size() const noexcept { return frames.size(); }
    std::int64_t step_hours() const { return spec->base_step_hours; }
    /// Frame index for a timestamp; throws std::out_of_range when absent.
    std::size_t index_of(std::int64_t timestamp_hours) const;
    const GridField& at_time(std::int64_t timestamp_hours) const { return frames[index_of(timestamp_hours)]; }
    std::pair<std::size_t, std::size_t> split_range(Split s) const;
    void validate() const;
};

/// Values-and-shape equality (manifest metadata excluded).
bool same_contents(const Dataset& a, const Dataset& b);

struct Window {
    GridField x0;
    GridField x_delta;
    FieldDelta delta;
};

/// (X0, X_delta, X_delta - X0) for an initial time and interval.
Window window(const Dataset& dataset, std::int64_t t0_hours, std::int64_t delta_hours);

// --- synthetic generator ----------------------------------------------------------

struct StormConfig {
    double calm_rate = 0.15;        // expected onsets per step in the calm regime
    double stormy_rate = 0.9;       // ... in the stormy regime
    double enter_stormy = 0.04;     // per-step regime switching probabilities
    double leave_stormy = 0.12;
    double min_radius = 1.5;        // grid cells
    double max_radius = 3.0;
    double min_amplitude = 0.6;     // multiples of the variable scale
    double max_amplitude = 1.6;
    int ramp_steps = 2;             // steps over which a storm injects its anomaly
};

struct RegimeConfig {
    double zonal_speed = 0.7;       // cells per base step at the equator band
    double jet_speed = 0.5;         // latitude-dependent addition, cos(2*lat) shaped
    double diffusion = 0.04;        // explicit Laplacian coefficient (<= 0.25 for stability)
    double relaxation = 0.01;       // pull towards the seasonal climatology per step
    double seasonal_amplitude = 0.5;
    std::size_t spinup_steps = 64;
    StormConfig storms;
    std::vector<double> var_means = {1.5, -0.8};
    std::vector<double> var_scales = {1.0, 0.6};
    std::vector<double> var_speed_factor = {1.0, 0.8};
    double train_fraction = 0.7;
    double val_fraction = 0.1;

    /// Everything calm: no storms, no relaxation. Used by the advection oracle.
    static RegimeConfig pure_transport();
};

void to_json(nlohmann::json& j, const StormConfig& c);
void from_json(const nlohmann::json& j, StormConfig& c);
void to_json(nlohmann::json& j, const RegimeConfig& c);
void from_json(const nlohmann::json& j, RegimeConfig& c);

Dataset generate_synthetic(const GridSpec& spec, std::size_t num_steps, std::uint64_t seed, const RegimeConfig& cfg);

/// One transport step (semi-Lagrangian zonal shift, then explicit diffusion) of a
/// single variable. Exposed for tests and for the generator itself.
void advect_diffuse(const GridSpec& spec, std::span<const double> in, std::span<double> out,
                    std::span<const double> row_shift_cells, double diffusion);
/// Zonal shift per latitude row for variable v.
std::vector<double> zonal_shift(const GridSpec& spec, const RegimeConfig& cfg, std::size_t v);

// --- ARRW grid file ----------------------------------------------------------------

inline constexpr std::uint16_t kGridFileVersion = 1;

void write_grid_file(const std::filesystem::path& path, const Dataset& dataset);
/// Reads the binary file; if a "<path>.json" manifest sits next to it, variable
/// names, split bounds and provenance are taken from it.
Dataset read_grid_file(const std::filesystem::path& path);
Dataset decode_grid(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_grid(const Dataset& dataset);

nlohmann::json manifest(const Dataset& dataset);
std::filesystem::path manifest_path(const std::filesystem::path& grid_path);

/// Day-of-year (0-based, 365-day calendar) and hour-of-day for an hour offset
/// from the dataset epoch (00:00 on day 0).
int day_of_year(std::int64_t timestamp_hours);
int hour_of_day(std::int64_t timestamp_hours);

}  // namespace rollcast::gridio
