#pragma once

// Patch tokenizer, ring / conventional positional tables, interval embedding and
// the scheduler's temporal embedding.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rollcast/diff/graph.hpp"
#include "rollcast/diff/params.hpp"
#include "rollcast/gridio.hpp"

namespace rollcast::encoding {

struct TokenizerConfig {
    std::size_t patch_size = 4;
    std::size_t embed_dim = 32;

    /// Throws std::invalid_argument unless H, W divide by P and D by 4.
    void validate(const gridio::GridSpec& spec) const;
    std::size_t tokens_h(const gridio::GridSpec& s) const { return s.lat_points / patch_size; }
    std::size_t tokens_w(const gridio::GridSpec& s) const { return s.lon_points / patch_size; }
    std::size_t num_tokens(const gridio::GridSpec& s) const { return tokens_h(s) * tokens_w(s); }
    std::size_t patch_dim(const gridio::GridSpec& s) const { return s.num_vars * patch_size * patch_size; }
};

/// Rows of `values` ([v][lat][lon]) cut into P x P x V patches: one row per token,
/// tokens row-major over the h x w token grid, features ordered [v][pi][pj].
std::vector<double> patchify(const gridio::GridSpec& spec, std::size_t patch, std::span<const double> values);
/// Inverse of patchify.
std::vector<double> unpatchify(const gridio::GridSpec& spec, std::size_t patch, std::span<const double> tokens);

/// Z~ = patches * W + b.
diff::Var tokenize(diff::Var patches, diff::Var weight, diff::Var bias);

enum class PeKind { ring, conventional };

struct PositionalTable {
    PeKind kind = PeKind::ring;
    std::size_t rows = 0;  // L
    std::size_t cols = 0;  // D
    std::vector<double> table;

    double at(std::size_t k, std::size_t d) const { return table[k * cols + d]; }
    std::span<const double> row(std::size_t k) const { return {table.data() + k * cols, cols}; }
};

/// 2-D ring encoding on an h x w token grid. For frequency i = 1..D/4 the four
/// dimensions 4(i-1)..4(i-1)+3 hold sin/cos of (col/w) 2 pi i and sin/cos of
/// (row/w) 2 pi i, each scaled by w / (4i). The column (longitude) axis has
/// period w, so its similarity depends only on circular distance.
PositionalTable ring_pe_2d(std::size_t h, std::size_t w, std::size_t dim);
/// 1-D ring encoding over a periodic sequence of length n:
/// dims 2(i-1), 2(i-1)+1 = sin/cos(2 pi k i / n) * n / (2i).
PositionalTable ring_pe_1d(std::size_t n, std::size_t dim);
/// Sinusoidal table P[k,2i] = sin(k 10000^(-2i/D)), P[k,2i+1] = cos(...).
PositionalTable conventional_pe(std::size_t length, std::size_t dim);

/// Row-wise dot-product similarity, L x L row-major.
std::vector<double> similarity_matrix(const PositionalTable& t);

diff::Var add_positional(diff::Var tokens, const PositionalTable& table);

/// Learned lookup table, one row per forecast interval.
class IntervalEmbedding {
public:
    IntervalEmbedding(diff::ParameterStore& store, const std::string& prefix, std::vector<std::int64_t> intervals,
                      std::size_t dim, std::mt19937_64& rng);

    std::size_t index_of(std::int64_t delta_hours) const;
    const std::vector<std::int64_t>& intervals() const noexcept { return intervals_; }
    /// [B, D] rows for a batch of intervals.
    diff::Var lookup(diff::Graph& g, std::span<const std::int64_t> deltas, bool frozen = false) const;
    diff::Parameter& table() const { return *table_; }

private:
    std::vector<std::int64_t> intervals_;
    diff::Parameter* table_;
};

struct TemporalInput {
    std::int64_t date_time_hours = 0;  // valid time of the current state
    std::int64_t travel_hours = 0;
    std::int64_t remaining_hours = 0;
    std::int64_t lead_hours = 0;
};

/// Sinusoids of hour-of-day and day-of-year plus travel/remaining/lead scaled by
/// `horizon_hours`, projected to D by a learned linear map.
class TemporalEmbedding {
public:
    static constexpr std::size_t kFeatures = 7;

    TemporalEmbedding(diff::ParameterStore& store, const std::string& prefix, std::size_t dim, double horizon_hours,
                      std::mt19937_64& rng);

    /// Throws std::invalid_argument for negative times or travel + remaining != lead.
    static std::vector<double> features(const TemporalInput& in, double horizon_hours);
    /// [B, D] for a batch of inputs.
    diff::Var embed(diff::Graph& g, std::span<const TemporalInput> inputs, bool frozen = false) const;

private:
    double horizon_;
    diff::Parameter* weight_;
    diff::Parameter* bias_;
};

}  // namespace rollcast::encoding
