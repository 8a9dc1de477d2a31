#pragma once

// Multi-interval forecasting model: patch tokens + ring positional encoding,
// N interval-conditioned blocks (AdaLN-zero attention + shared-private MoE),
// and a zero-initialised linear head that predicts the state change.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "rollcast/diff/graph.hpp"
#include "rollcast/diff/params.hpp"
#include "rollcast/encoding.hpp"
#include "rollcast/gridio.hpp"
#include "rollcast/metrics.hpp"
#include "rollcast/moe.hpp"

namespace rollcast::model {

struct ModelConfig {
    encoding::TokenizerConfig tokenizer;
    std::size_t num_blocks = 2;
    std::size_t num_heads = 4;
    moe::MoEConfig moe;
    std::vector<double> interval_probs = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    double ln_eps = 1e-6;

    const std::vector<std::int64_t>& intervals() const { return moe.intervals; }
    /// Also forces moe.embed_dim to the tokenizer width.
    void validate(const gridio::GridSpec& spec);
};

/// Multi-head self-attention over one sample's tokens: x [L, D] -> [L, D].
diff::Var self_attention(diff::Var x, diff::Var w_qkv, diff::Var b_qkv, diff::Var w_out, diff::Var b_out,
                         std::size_t heads);

class ArchBlock {
public:
    ArchBlock(diff::ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, std::mt19937_64& rng);

    struct Output {
        diff::Var z;
        moe::MoEResult moe;
    };

    /// z: [B*L, D] stacked samples, cond: [B, D] interval embeddings,
    /// row_interval: interval index per token row.
    Output forward(diff::Graph& g, diff::Var z, diff::Var cond, std::size_t tokens_per_sample,
                   std::span<const std::size_t> row_interval, bool frozen) const;

    diff::Parameter& adaln_weight() const { return *ada_w_; }
    diff::Parameter& adaln_bias() const { return *ada_b_; }

private:
    std::size_t dim_, heads_;
    double eps_;
    diff::Parameter *qkv_w_, *qkv_b_, *out_w_, *out_b_, *ada_w_, *ada_b_;
    moe::SharedPrivateMoE moe_;
};

struct ForecastOutput {
    gridio::FieldDelta delta_hat;
    gridio::GridField x_hat;
    std::vector<moe::GateDecision> gate_decisions;  // one per block
};

/// Graph-level result of a batched forward pass.
struct BatchForward {
    diff::Var delta_tokens;  // [B*L, V*P*P], physical units, patch layout
    std::vector<moe::MoEResult> moe;
    std::vector<std::size_t> row_interval;
};

class ForecastModel {
public:
    ForecastModel(const gridio::GridSpec& spec, ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }
    const gridio::GridSpec& spec() const noexcept { return *spec_; }
    std::shared_ptr<const gridio::GridSpec> spec_ptr() const noexcept { return spec_; }
    diff::ParameterStore& params() noexcept { return store_; }
    const diff::ParameterStore& params() const noexcept { return store_; }
    const encoding::PositionalTable& positional() const noexcept { return pe_; }
    std::size_t tokens() const noexcept { return pe_.rows; }

    /// Per-variable input mean/scale and output delta scale, fitted on the training split.
    void fit_normalizer(const gridio::Dataset& d);

    /// Batched forward in a caller-owned graph. `freeze_backbone` freezes all
    /// parameters except the head; `freeze_head` freezes the head.
    BatchForward forward_batch(diff::Graph& g, std::span<const gridio::GridField* const> x0,
                               std::span<const std::int64_t> deltas, bool freeze_backbone = false,
                               bool freeze_head = false) const;

    /// Inference: x_hat = x0 + delta_hat.
    ForecastOutput forward(const gridio::GridField& x0, std::int64_t delta) const;
    /// Feeds each prediction back in; returns one field per step. Throws when the
    /// steps sum past `lead_hours` (0 disables the check).
    std::vector<gridio::GridField> predict_rollout(const gridio::GridField& x0, std::span<const std::int64_t> steps,
                                                   std::int64_t lead_hours = 0) const;

    /// Tokenizer + ring encoding of a state, all parameters frozen: [L, D].
    diff::Var weather_embedding(diff::Graph& g, const gridio::GridField& x) const;

    /// Final modulation and output projection.
    std::vector<diff::Parameter*> head_parameters();
    std::vector<diff::Parameter*> trainable_parameters();
    const ArchBlock& block(std::size_t n) const { return blocks_[n]; }
    const encoding::IntervalEmbedding& interval_embedding() const { return *interval_; }

    /// Patchified loss weights w(v) L(i) in token layout, [L, V*P*P].
    std::vector<double> token_weights(const metrics::WeightTable& w) const;

private:
    std::vector<double> normalized_patches(const gridio::GridField& x) const;

    std::shared_ptr<const gridio::GridSpec> spec_;
    ModelConfig cfg_;
    diff::ParameterStore store_;
    encoding::PositionalTable pe_;
    std::mt19937_64 init_rng_;
    diff::Parameter *tok_w_, *tok_b_;
    std::unique_ptr<encoding::IntervalEmbedding> interval_;
    std::vector<ArchBlock> blocks_;
    diff::Parameter *final_ada_w_, *final_ada_b_, *head_w_, *head_b_;
    diff::Parameter *norm_mean_, *norm_scale_, *delta_scale_;
};

/// sum_b sum_e w_e (pred - target)^2 / (B * VHW) over token-layout tensors.
diff::Var weighted_delta_loss(diff::Var pred_tokens, std::span<const double> target_tokens,
                              std::span<const double> weights_per_sample, std::size_t batch);

}  // namespace rollcast::model
