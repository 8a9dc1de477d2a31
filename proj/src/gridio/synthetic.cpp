#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "rollcast/gridio.hpp"

namespace rollcast::gridio {

void to_json(nlohmann::json& j, const StormConfig& c) {
    j = {{"calm_rate", c.calm_rate},         {"stormy_rate", c.stormy_rate},     {"enter_stormy", c.enter_stormy},
         {"leave_stormy", c.leave_stormy},   {"min_radius", c.min_radius},       {"max_radius", c.max_radius},
         {"min_amplitude", c.min_amplitude}, {"max_amplitude", c.max_amplitude}, {"ramp_steps", c.ramp_steps}};
}

void from_json(const nlohmann::json& j, StormConfig& c) {
    c.calm_rate = j.value("calm_rate", c.calm_rate);
    c.stormy_rate = j.value("stormy_rate", c.stormy_rate);
    c.enter_stormy = j.value("enter_stormy", c.enter_stormy);
    c.leave_stormy = j.value("leave_stormy", c.leave_stormy);
    c.min_radius = j.value("min_radius", c.min_radius);
    c.max_radius = j.value("max_radius", c.max_radius);
    c.min_amplitude = j.value("min_amplitude", c.min_amplitude);
    c.max_amplitude = j.value("max_amplitude", c.max_amplitude);
    c.ramp_steps = j.value("ramp_steps", c.ramp_steps);
}

void to_json(nlohmann::json& j, const RegimeConfig& c) {
    j = {{"zonal_speed", c.zonal_speed},
         {"jet_speed", c.jet_speed},
         {"diffusion", c.diffusion},
         {"relaxation", c.relaxation},
         {"seasonal_amplitude", c.seasonal_amplitude},
         {"spinup_steps", c.spinup_steps},
         {"storms", c.storms},
         {"var_means", c.var_means},
         {"var_scales", c.var_scales},
         {"var_speed_factor", c.var_speed_factor},
         {"train_fraction", c.train_fraction},
         {"val_fraction", c.val_fraction}};
}

void from_json(const nlohmann::json& j, RegimeConfig& c) {
    c.zonal_speed = j.value("zonal_speed", c.zonal_speed);
    c.jet_speed = j.value("jet_speed", c.jet_speed);
    c.diffusion = j.value("diffusion", c.diffusion);
    c.relaxation = j.value("relaxation", c.relaxation);
    c.seasonal_amplitude = j.value("seasonal_amplitude", c.seasonal_amplitude);
    c.spinup_steps = j.value("spinup_steps", c.spinup_steps);
    if (j.contains("storms")) c.storms = j.at("storms").get<StormConfig>();
    c.var_means = j.value("var_means", c.var_means);
    c.var_scales = j.value("var_scales", c.var_scales);
    c.var_speed_factor = j.value("var_speed_factor", c.var_speed_factor);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
}

RegimeConfig RegimeConfig::pure_transport() {
    RegimeConfig c;
    c.relaxation = 0.0;
    c.storms.calm_rate = 0.0;
    c.storms.stormy_rate = 0.0;
    return c;
}

std::vector<double> zonal_shift(const GridSpec& spec, const RegimeConfig& cfg, std::size_t v) {
    const double factor = v < cfg.var_speed_factor.size() ? cfg.var_speed_factor[v] : 1.0;
    std::vector<double> shift(spec.lat_points);
    for (std::size_t i = 0; i < spec.lat_points; ++i) {
        const double phi = spec.lat_degrees[i] * std::numbers::pi / 180.0;
        shift[i] = factor * (cfg.zonal_speed + cfg.jet_speed * std::cos(2.0 * phi));
    }
    return shift;
}

void advect_diffuse(const GridSpec& spec, std::span<const double> in, std::span<double> out,
                    std::span<const double> row_shift_cells, double diffusion) {
    const std::size_t H = spec.lat_points, W = spec.lon_points;
    std::vector<double> moved(H * W);
    for (std::size_t i = 0; i < H; ++i) {
        const double c = row_shift_cells[i];
        for (std::size_t j = 0; j < W; ++j) {
            // departure point of the trajectory arriving at column j
            const double pos = static_cast<double>(j) - c;
            const double fl = std::floor(pos);
            const double frac = pos - fl;
            const auto wi = static_cast<std::int64_t>(W);
            const auto j0 = static_cast<std::size_t>(((static_cast<std::int64_t>(fl) % wi) + wi) % wi);
            const std::size_t j1 = (j0 + 1) % W;
            moved[i * W + j] = (1.0 - frac) * in[i * W + j0] + frac * in[i * W + j1];
        }
    }
    for (std::size_t i = 0; i < H; ++i) {
        const std::size_t up = i == 0 ? 0 : i - 1;
        const std::size_t dn = i + 1 == H ? H - 1 : i + 1;
        for (std::size_t j = 0; j < W; ++j) {
            const std::size_t l = (j + W - 1) % W, r = (j + 1) % W;
            const double c = moved[i * W + j];
            const double lap = moved[i * W + l] + moved[i * W + r] + moved[up * W + j] + moved[dn * W + j] - 4.0 * c;
            out[i * W + j] = c + diffusion * lap;
        }
    }
}

namespace {

struct Storm {
    double lat_cell;
    double lon_cell;
    double radius;
    std::vector<double> amplitude;  // per variable, total anomaly injected
    int age = 0;
};

double climatology_value(const GridSpec& spec, const RegimeConfig& cfg, std::size_t v, std::size_t i, std::size_t j,
                         std::int64_t t_hours) {
    const double phi = spec.lat_degrees[i] * std::numbers::pi / 180.0;
    const double lam = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(spec.lon_points);
    const double season = std::sin(2.0 * std::numbers::pi * static_cast<double>(t_hours) / (365.0 * 24.0));
    const double mean = v < cfg.var_means.size() ? cfg.var_means[v] : 0.0;
    const double scale = v < cfg.var_scales.size() ? cfg.var_scales[v] : 1.0;
    const double pattern = 0.8 * std::cos(2.0 * phi) + 0.4 * std::sin(phi) * std::cos(2.0 * lam + static_cast<double>(v)) +
                           cfg.seasonal_amplitude * season * std::sin(phi);
    return mean + scale * pattern;
}

Storm spawn(const GridSpec& spec, const RegimeConfig& cfg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Storm s;
    // keep centres away from the polar rows
    s.lat_cell = 1.0 + u01(rng) * (static_cast<double>(spec.lat_points) - 3.0);
    s.lon_cell = u01(rng) * static_cast<double>(spec.lon_points);
    s.radius = cfg.storms.min_radius + u01(rng) * (cfg.storms.max_radius - cfg.storms.min_radius);
    const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
    const double mag = cfg.storms.min_amplitude + u01(rng) * (cfg.storms.max_amplitude - cfg.storms.min_amplitude);
    for (std::size_t v = 0; v < spec.num_vars; ++v) {
        const double scale = v < cfg.var_scales.size() ? cfg.var_scales[v] : 1.0;
        // alternating coupling gives variables distinct responses to one storm
        const double coupling = v % 2 == 0 ? 1.0 : -0.7;
        s.amplitude.push_back(sign * mag * scale * coupling);
    }
    return s;
}

void inject(const GridSpec& spec, const Storm& s, double fraction, std::vector<double>& state) {
    const std::size_t H = spec.lat_points, W = spec.lon_points;
    const double inv = 1.0 / (2.0 * s.radius * s.radius);
    for (std::size_t i = 0; i < H; ++i) {
        const double di = static_cast<double>(i) - s.lat_cell;
        for (std::size_t j = 0; j < W; ++j) {
            double dj = std::abs(static_cast<double>(j) - s.lon_cell);
            dj = std::min(dj, static_cast<double>(W) - dj);
            const double g = std::exp(-(di * di + dj * dj) * inv);
            for (std::size_t v = 0; v < spec.num_vars; ++v) state[(v * H + i) * W + j] += fraction * s.amplitude[v] * g;
        }
    }
}

double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

Dataset generate_synthetic(const GridSpec& spec_in, std::size_t num_steps, std::uint64_t seed,
                           const RegimeConfig& cfg) {
    spec_in.validate();
    if (num_steps < 2) throw GridError("generate_synthetic: need at least 2 steps");
    if (cfg.diffusion < 0.0 || cfg.diffusion > 0.25) throw GridError("generate_synthetic: diffusion must be in [0, 0.25]");
    if (cfg.relaxation < 0.0 || cfg.relaxation >= 1.0) throw GridError("generate_synthetic: relaxation must be in [0, 1)");
    if (cfg.storms.ramp_steps < 1) throw GridError("generate_synthetic: storm ramp must be >= 1 step");
    if (cfg.train_fraction <= 0.0 || cfg.val_fraction < 0.0 || cfg.train_fraction + cfg.val_fraction > 1.0)
        throw GridError("generate_synthetic: invalid split fractions");

    auto spec = std::make_shared<const GridSpec>(spec_in);
    const std::size_t V = spec->num_vars, H = spec->lat_points, W = spec->lon_points, HW = H * W;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    std::vector<std::vector<double>> shifts;
    for (std::size_t v = 0; v < V; ++v) shifts.push_back(zonal_shift(*spec, cfg, v));

    std::vector<double> state(V * HW);
    for (std::size_t v = 0; v < V; ++v)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) state[(v * H + i) * W + j] = climatology_value(*spec, cfg, v, i, j, 0);
    for (int k = 0; k < 6; ++k) inject(*spec, spawn(*spec, cfg, rng), 1.0, state);
    for (auto& x : state) x = round_f32(x);

    std::vector<Storm> active;
    bool stormy = false;
    std::vector<double> next(V * HW);

    auto advance = [&](std::int64_t t_hours) {
        for (std::size_t v = 0; v < V; ++v) {
            std::span<const double> in(state.data() + v * HW, HW);
            std::span<double> out(next.data() + v * HW, HW);
            advect_diffuse(*spec, in, out, shifts[v], cfg.diffusion);
        }
        if (cfg.relaxation > 0.0)
            for (std::size_t v = 0; v < V; ++v)
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j) {
                        double& x = next[(v * H + i) * W + j];
                        x += cfg.relaxation * (climatology_value(*spec, cfg, v, i, j, t_hours) - x);
                    }

        if (stormy ? u01(rng) < cfg.storms.leave_stormy : u01(rng) < cfg.storms.enter_stormy) stormy = !stormy;
        const double rate = stormy ? cfg.storms.stormy_rate : cfg.storms.calm_rate;
        if (rate > 0.0) {
            std::poisson_distribution<int> onsets(rate);
            for (int k = onsets(rng); k > 0; --k) active.push_back(spawn(*spec, cfg, rng));
        }
        const double frac = 1.0 / static_cast<double>(cfg.storms.ramp_steps);
        for (auto& s : active) {
            inject(*spec, s, frac, next);
            ++s.age;
            // storms drift with the flow of their latitude band
            const auto row = static_cast<std::size_t>(std::clamp(std::lround(s.lat_cell), 0L, static_cast<long>(H - 1)));
            s.lon_cell = std::fmod(s.lon_cell + shifts[0][row], static_cast<double>(W));
        }
        std::erase_if(active, [&](const Storm& s) { return s.age >= cfg.storms.ramp_steps; });
        for (std::size_t k = 0; k < next.size(); ++k) state[k] = round_f32(next[k]);
    };

    const auto step = spec->base_step_hours;
    for (std::size_t k = 0; k < cfg.spinup_steps; ++k)
        advance(-static_cast<std::int64_t>(cfg.spinup_steps - k) * step);

    Dataset d;
    d.spec = spec;
    d.frames.reserve(num_steps);
    for (std::size_t t = 0; t < num_steps; ++t) {
        if (t > 0) advance(static_cast<std::int64_t>(t) * step);
        GridField f(spec, static_cast<std::int64_t>(t) * step);
        f.values = state;
        d.frames.push_back(std::move(f));
    }
    for (std::size_t v = 0; v < V; ++v) d.variable_names.push_back("var" + std::to_string(v));
    d.splits.train_end = static_cast<std::size_t>(std::floor(static_cast<double>(num_steps) * cfg.train_fraction));
    d.splits.val_end = static_cast<std::size_t>(
        std::floor(static_cast<double>(num_steps) * (cfg.train_fraction + cfg.val_fraction)));
    d.provenance = {{"generator", "synthetic-advection-storms"}, {"seed", seed}, {"num_steps", num_steps},
                    {"regime", cfg}};
    d.validate();
    return d;
}

}  // namespace rollcast::gridio
