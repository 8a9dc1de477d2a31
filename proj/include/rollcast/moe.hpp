#pragma once

// Shared-private mixture of experts with interval-conditioned noisy top-k gating.
//
//   s   = sigmoid(z W_gate)               gate scores      [R, M]
//   b   = sigmoid(z W_noise[delta])       interval noise   [R, M]
//   sel = top_k(s + b)                    (discrete, no gradient)
//   g'  = softmax(s[sel])                 weights over the k selected experts
//   out = sum_m g'_m E_m(z) + E_shared(z)

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rollcast/diff/graph.hpp"
#include "rollcast/diff/params.hpp"

namespace rollcast::moe {

struct MoEConfig {
    std::size_t num_private = 4;
    std::size_t top_k = 2;
    std::size_t embed_dim = 32;
    std::size_t private_hidden = 0;  // 0 selects 4 * D / M
    std::size_t shared_hidden = 0;   // 0 selects 4 * D
    std::vector<std::int64_t> intervals = {6, 12, 24};
    double alpha = 1.0;

    void validate() const;
    std::size_t resolved_private_hidden() const;
    std::size_t resolved_shared_hidden() const;
};

struct GateDecision {
    std::size_t tokens = 0;
    std::size_t experts = 0;
    std::size_t k = 0;
    std::vector<double> scores;          // s, [tokens, experts]
    std::vector<double> noise;           // b for each token's own interval, [tokens, experts]
    std::vector<std::size_t> selected;   // [tokens, k], best first
    std::vector<double> weights;         // g', [tokens, k]
};

/// Pure routing on plain arrays: top-k of s + b per token (ties to the lower
/// expert index), then softmax over the selected s values.
GateDecision route(std::span<const double> scores, std::span<const double> noise, std::size_t tokens,
                   std::size_t experts, std::size_t k);

class FeedForward {
public:
    FeedForward(diff::ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t hidden,
                std::mt19937_64& rng);
    diff::Var forward(diff::Graph& g, diff::Var x, bool frozen = false) const;
    std::vector<diff::Parameter*> parameters() const { return {w1_, b1_, w2_, b2_}; }

private:
    diff::Parameter *w1_, *b1_, *w2_, *b2_;
};

struct MoEResult {
    diff::Var output;                  // [R, D]
    GateDecision decision;
    std::vector<diff::Var> noise_dists;  // P_delta, one [1, M] distribution per configured interval
};

class SharedPrivateMoE {
public:
    SharedPrivateMoE(diff::ParameterStore& store, const std::string& prefix, MoEConfig cfg, std::mt19937_64& rng);

    /// `row_interval` holds, per token row, the index of its interval in cfg.intervals.
    MoEResult forward(diff::Graph& g, diff::Var z, std::span<const std::size_t> row_interval,
                      bool frozen = false) const;

    const MoEConfig& config() const noexcept { return cfg_; }
    diff::Parameter& gate_weight() const { return *gate_; }
    diff::Parameter& noise_weight() const { return *noise_; }  // [D, M * |intervals|]
    const FeedForward& private_expert(std::size_t m) const { return experts_[m]; }
    const FeedForward& shared_expert() const { return shared_; }

private:
    MoEConfig cfg_;
    diff::Parameter* gate_;
    diff::Parameter* noise_;
    std::vector<FeedForward> experts_;
    FeedForward shared_;
};

/// sum over unordered interval pairs i < j of H(P_i, P_j). Zero for fewer than two.
diff::Var aux_loss_1(std::span<const diff::Var> dists);
/// H(U, softmax(sum_delta P_delta)) = -(1/M) sum_m log q_m. Equals ln M exactly when
/// the pooled distribution is uniform and exceeds it otherwise.
diff::Var aux_loss_2(std::span<const diff::Var> dists);
/// -aux1 + alpha * aux2
diff::Var combined_aux(diff::Var aux1, diff::Var aux2, double alpha);

/// Per-interval expert selection counts, [intervals, experts] row-major.
std::vector<double> usage_histogram(const GateDecision& d, std::span<const std::size_t> row_interval,
                                    std::size_t num_intervals);

}  // namespace rollcast::moe
