#include "rollcast/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rollcast::encoding {

using diff::Var;

void TokenizerConfig::validate(const gridio::GridSpec& spec) const {
    if (patch_size == 0) throw std::invalid_argument("tokenizer: patch size must be positive");
    if (spec.lat_points % patch_size != 0 || spec.lon_points % patch_size != 0)
        throw std::invalid_argument("tokenizer: grid " + std::to_string(spec.lat_points) + "x" +
                                    std::to_string(spec.lon_points) + " not divisible by patch size " +
                                    std::to_string(patch_size));
    if (embed_dim == 0 || embed_dim % 4 != 0)
        throw std::invalid_argument("tokenizer: embed_dim must be a positive multiple of 4, got " +
                                    std::to_string(embed_dim));
}

std::vector<double> patchify(const gridio::GridSpec& spec, std::size_t P, std::span<const double> values) {
    if (values.size() != spec.size()) throw std::invalid_argument("patchify: field size does not match grid");
    const std::size_t H = spec.lat_points, W = spec.lon_points, V = spec.num_vars;
    const std::size_t h = H / P, w = W / P, dim = V * P * P;
    std::vector<double> out(h * w * dim);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double* tok = out.data() + (r * w + c) * dim;
            for (std::size_t v = 0; v < V; ++v)
                for (std::size_t pi = 0; pi < P; ++pi)
                    for (std::size_t pj = 0; pj < P; ++pj)
                        tok[(v * P + pi) * P + pj] = values[(v * H + r * P + pi) * W + c * P + pj];
        }
    return out;
}

std::vector<double> unpatchify(const gridio::GridSpec& spec, std::size_t P, std::span<const double> tokens) {
    const std::size_t H = spec.lat_points, W = spec.lon_points, V = spec.num_vars;
    const std::size_t h = H / P, w = W / P, dim = V * P * P;
    if (tokens.size() != h * w * dim) throw std::invalid_argument("unpatchify: token block does not match grid");
    std::vector<double> out(spec.size());
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double* tok = tokens.data() + (r * w + c) * dim;
            for (std::size_t v = 0; v < V; ++v)
                for (std::size_t pi = 0; pi < P; ++pi)
                    for (std::size_t pj = 0; pj < P; ++pj)
                        out[(v * H + r * P + pi) * W + c * P + pj] = tok[(v * P + pi) * P + pj];
        }
    return out;
}

Var tokenize(Var patches, Var weight, Var bias) { return diff::add_bias(diff::matmul(patches, weight), bias); }

PositionalTable ring_pe_2d(std::size_t h, std::size_t w, std::size_t dim) {
    if (dim == 0 || dim % 4 != 0) throw std::invalid_argument("ring_pe_2d: dim must be a positive multiple of 4");
    PositionalTable t{PeKind::ring, h * w, dim, std::vector<double>(h * w * dim)};
    const double wd = static_cast<double>(w);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double* row = t.table.data() + (r * w + c) * dim;
            for (std::size_t i = 1; i <= dim / 4; ++i) {
                const double fi = static_cast<double>(i);
                const double amp = wd / (4.0 * fi);
                const double ax = static_cast<double>(c) / wd * 2.0 * std::numbers::pi * fi;
                const double ay = static_cast<double>(r) / wd * 2.0 * std::numbers::pi * fi;
                const std::size_t base = 4 * (i - 1);
                row[base + 0] = std::sin(ax) * amp;
                row[base + 1] = std::cos(ax) * amp;
                row[base + 2] = std::sin(ay) * amp;
                row[base + 3] = std::cos(ay) * amp;
            }
        }
    return t;
}

PositionalTable ring_pe_1d(std::size_t n, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("ring_pe_1d: dim must be a positive even number");
    PositionalTable t{PeKind::ring, n, dim, std::vector<double>(n * dim)};
    const double nd = static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 1; i <= dim / 2; ++i) {
            const double fi = static_cast<double>(i);
            const double a = static_cast<double>(k) * 2.0 * std::numbers::pi / nd * fi;
            t.table[k * dim + 2 * (i - 1)] = std::sin(a) * nd / (2.0 * fi);
            t.table[k * dim + 2 * (i - 1) + 1] = std::cos(a) * nd / (2.0 * fi);
        }
    return t;
}

PositionalTable conventional_pe(std::size_t length, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("conventional_pe: dim must be a positive even number");
    PositionalTable t{PeKind::conventional, length, dim, std::vector<double>(length * dim)};
    for (std::size_t k = 0; k < length; ++k)
        for (std::size_t i = 0; i < dim / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
            t.table[k * dim + 2 * i] = std::sin(static_cast<double>(k) * freq);
            t.table[k * dim + 2 * i + 1] = std::cos(static_cast<double>(k) * freq);
        }
    return t;
}

std::vector<double> similarity_matrix(const PositionalTable& t) {
    std::vector<double> s(t.rows * t.rows);
    for (std::size_t a = 0; a < t.rows; ++a)
        for (std::size_t b = 0; b < t.rows; ++b) {
            double dot = 0.0;
            for (std::size_t d = 0; d < t.cols; ++d) dot += t.at(a, d) * t.at(b, d);
            s[a * t.rows + b] = dot;
        }
    return s;
}

Var add_positional(Var tokens, const PositionalTable& table) {
    auto& g = tokens.graph();
    const diff::Shape ts{table.rows, table.cols};
    if (tokens.shape() != ts) throw diff::ShapeError("add_positional", tokens.shape(), ts);
    return diff::add(tokens, g.constant(ts, table.table));
}

// --- interval embedding ----------------------------------------------------

IntervalEmbedding::IntervalEmbedding(diff::ParameterStore& store, const std::string& prefix,
                                     std::vector<std::int64_t> intervals, std::size_t dim, std::mt19937_64& rng)
    : intervals_(std::move(intervals)) {
    if (intervals_.empty()) throw std::invalid_argument("interval embedding: empty interval set");
    table_ = &store.add_normal(prefix + "table", {intervals_.size(), dim}, 1.0, rng);
}

std::size_t IntervalEmbedding::index_of(std::int64_t delta) const {
    auto it = std::find(intervals_.begin(), intervals_.end(), delta);
    if (it == intervals_.end()) throw std::invalid_argument("unknown forecast interval " + std::to_string(delta) + "h");
    return static_cast<std::size_t>(it - intervals_.begin());
}

Var IntervalEmbedding::lookup(diff::Graph& g, std::span<const std::int64_t> deltas, bool frozen) const {
    std::vector<std::size_t> idx;
    idx.reserve(deltas.size());
    for (auto d : deltas) idx.push_back(index_of(d));
    return diff::embedding_lookup(g.param(*table_, frozen), idx);
}

// --- temporal embedding ----------------------------------------------------

TemporalEmbedding::TemporalEmbedding(diff::ParameterStore& store, const std::string& prefix, std::size_t dim,
                                     double horizon_hours, std::mt19937_64& rng)
    : horizon_(horizon_hours) {
    weight_ = &store.add_normal(prefix + "weight", {kFeatures, dim}, 1.0 / std::sqrt(double(kFeatures)), rng);
    bias_ = &store.add(prefix + "bias", {1, dim});
}

std::vector<double> TemporalEmbedding::features(const TemporalInput& in, double horizon) {
    if (in.travel_hours < 0 || in.remaining_hours < 0 || in.lead_hours < 0)
        throw std::invalid_argument("temporal embedding: negative time");
    if (in.travel_hours + in.remaining_hours != in.lead_hours)
        throw std::invalid_argument("temporal embedding: travel (" + std::to_string(in.travel_hours) +
                                    "h) + remaining (" + std::to_string(in.remaining_hours) + "h) != lead (" +
                                    std::to_string(in.lead_hours) + "h)");
    const double hod = 2.0 * std::numbers::pi * gridio::hour_of_day(in.date_time_hours) / 24.0;
    const double doy = 2.0 * std::numbers::pi * gridio::day_of_year(in.date_time_hours) / 365.0;
    return {std::sin(hod),
            std::cos(hod),
            std::sin(doy),
            std::cos(doy),
            static_cast<double>(in.travel_hours) / horizon,
            static_cast<double>(in.remaining_hours) / horizon,
            static_cast<double>(in.lead_hours) / horizon};
}

Var TemporalEmbedding::embed(diff::Graph& g, std::span<const TemporalInput> inputs, bool frozen) const {
    std::vector<double> feats;
    for (const auto& in : inputs) {
        auto f = features(in, horizon_);
        feats.insert(feats.end(), f.begin(), f.end());
    }
    Var x = g.constant({inputs.size(), kFeatures}, std::move(feats));
    return diff::add_bias(diff::matmul(x, g.param(*weight_, frozen)), g.param(*bias_, frozen));
}

}  // namespace rollcast::encoding
