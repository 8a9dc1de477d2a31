#include "rollcast/moe.hpp"

#include <cmath>
#include <stdexcept>

namespace rollcast::moe {

using diff::Var;

void MoEConfig::validate() const {
    if (num_private < 1) throw std::invalid_argument("moe: need at least one private expert");
    if (top_k < 1 || top_k > num_private)
        throw std::invalid_argument("moe: top_k must be in [1, " + std::to_string(num_private) + "]");
    if (intervals.empty()) throw std::invalid_argument("moe: empty interval set");
    if (alpha < 0.0) throw std::invalid_argument("moe: alpha must be non-negative");
}

std::size_t MoEConfig::resolved_private_hidden() const {
    return private_hidden ? private_hidden : std::max<std::size_t>(1, 4 * embed_dim / num_private);
}

std::size_t MoEConfig::resolved_shared_hidden() const { return shared_hidden ? shared_hidden : 4 * embed_dim; }

GateDecision route(std::span<const double> scores, std::span<const double> noise, std::size_t tokens,
                   std::size_t experts, std::size_t k) {
    if (scores.size() != tokens * experts || noise.size() != tokens * experts)
        throw std::invalid_argument("route: score/noise tables must be tokens x experts");
    GateDecision d;
    d.tokens = tokens;
    d.experts = experts;
    d.k = k;
    d.scores.assign(scores.begin(), scores.end());
    d.noise.assign(noise.begin(), noise.end());
    d.selected.resize(tokens * k);
    d.weights.resize(tokens * k);
    std::vector<double> perturbed(experts);
    for (std::size_t l = 0; l < tokens; ++l) {
        for (std::size_t m = 0; m < experts; ++m) perturbed[m] = scores[l * experts + m] + noise[l * experts + m];
        const auto sel = diff::top_k(perturbed, k);
        double mx = -INFINITY;
        for (auto m : sel) mx = std::max(mx, scores[l * experts + m]);
        double total = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
            d.selected[l * k + t] = sel[t];
            d.weights[l * k + t] = std::exp(scores[l * experts + sel[t]] - mx);
            total += d.weights[l * k + t];
        }
        for (std::size_t t = 0; t < k; ++t) d.weights[l * k + t] /= total;
    }
    return d;
}

FeedForward::FeedForward(diff::ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t hidden,
                         std::mt19937_64& rng) {
    w1_ = &store.add_normal(prefix + "w1", {dim, hidden}, 1.0 / std::sqrt(double(dim)), rng);
    b1_ = &store.add(prefix + "b1", {1, hidden});
    w2_ = &store.add_normal(prefix + "w2", {hidden, dim}, 1.0 / std::sqrt(double(hidden)), rng);
    b2_ = &store.add(prefix + "b2", {1, dim});
}

Var FeedForward::forward(diff::Graph& g, Var x, bool frozen) const {
    Var h = diff::gelu(diff::add_bias(diff::matmul(x, g.param(*w1_, frozen)), g.param(*b1_, frozen)));
    return diff::add_bias(diff::matmul(h, g.param(*w2_, frozen)), g.param(*b2_, frozen));
}

SharedPrivateMoE::SharedPrivateMoE(diff::ParameterStore& store, const std::string& prefix, MoEConfig cfg,
                                   std::mt19937_64& rng)
    : cfg_(std::move(cfg)),
      gate_(nullptr),
      noise_(nullptr),
      shared_(store, prefix + "shared.", cfg_.embed_dim, cfg_.resolved_shared_hidden(), rng) {
    cfg_.validate();
    const std::size_t D = cfg_.embed_dim, M = cfg_.num_private;
    gate_ = &store.add_normal(prefix + "gate", {D, M}, 1.0 / std::sqrt(double(D)), rng);
    noise_ = &store.add_normal(prefix + "noise", {D, M * cfg_.intervals.size()}, 1.0 / std::sqrt(double(D)), rng);
    experts_.reserve(M);
    for (std::size_t m = 0; m < M; ++m)
        experts_.emplace_back(store, prefix + "expert" + std::to_string(m) + ".", D, cfg_.resolved_private_hidden(),
                              rng);
}

MoEResult SharedPrivateMoE::forward(diff::Graph& g, Var z, std::span<const std::size_t> row_interval,
                                    bool frozen) const {
    const std::size_t R = z.rows(), M = cfg_.num_private, K = cfg_.top_k, NI = cfg_.intervals.size();
    if (z.cols() != cfg_.embed_dim) throw diff::ShapeError("moe", z.shape(), diff::Shape{R, cfg_.embed_dim});
    if (row_interval.size() != R) throw std::invalid_argument("moe: need one interval index per token row");
    for (auto ix : row_interval)
        if (ix >= NI) throw std::invalid_argument("moe: interval index " + std::to_string(ix) + " not configured");

    Var s = diff::sigmoid(diff::matmul(z, g.param(*gate_, frozen)));
    Var b_all = diff::sigmoid(diff::matmul(z, g.param(*noise_, frozen)));  // [R, M*NI]

    std::vector<std::size_t> own(R * M);
    for (std::size_t l = 0; l < R; ++l)
        for (std::size_t m = 0; m < M; ++m) own[l * M + m] = row_interval[l] * M + m;
    Var b_own = diff::gather_cols(b_all, own, M);

    MoEResult res;
    res.decision = route(s.value(), b_own.value(), R, M, K);
    const auto& sel = res.decision.selected;

    Var g_sel = diff::gather_cols(s, sel, K);
    Var g_prime = diff::softmax(g_sel, 1);
    Var weights = diff::scatter_cols(g_prime, sel, M);  // [R, M], zero off the selection

    Var out = shared_.forward(g, z, frozen);
    for (std::size_t m = 0; m < M; ++m) {
        std::vector<std::size_t> rows;
        for (std::size_t l = 0; l < R; ++l)
            for (std::size_t t = 0; t < K; ++t)
                if (sel[l * K + t] == m) rows.push_back(l);
        if (rows.empty()) continue;
        Var xm = diff::gather_rows(z, rows);
        Var ym = experts_[m].forward(g, xm, frozen);
        Var wm = diff::gather_rows(diff::slice(weights, 1, m, m + 1), rows);
        out = diff::add(out, diff::scatter_rows(diff::mul_col_broadcast(ym, wm), rows, R));
    }
    res.output = out;

    for (std::size_t d = 0; d < NI; ++d) {
        Var bd = diff::slice(b_all, 1, d * M, (d + 1) * M);
        res.noise_dists.push_back(diff::softmax(diff::sum_axis(bd, 0), 1));
    }
    return res;
}

Var aux_loss_1(std::span<const Var> dists) {
    if (dists.empty()) throw std::invalid_argument("aux_loss_1: no distributions");
    auto& g = dists.front().graph();
    if (dists.size() < 2) return g.zeros({1, 1});
    Var total = g.zeros({1, 1});
    for (std::size_t i = 0; i < dists.size(); ++i)
        for (std::size_t j = i + 1; j < dists.size(); ++j) total = diff::add(total, diff::cross_entropy(dists[i], dists[j]));
    return total;
}

Var aux_loss_2(std::span<const Var> dists) {
    if (dists.empty()) throw std::invalid_argument("aux_loss_2: no distributions");
    auto& g = dists.front().graph();
    Var pooled = dists.front();
    for (std::size_t i = 1; i < dists.size(); ++i) pooled = diff::add(pooled, dists[i]);
    Var q = diff::softmax(pooled, 1);
    const std::size_t M = q.cols();
    Var uniform = g.constant(q.shape(), std::vector<double>(M, 1.0 / static_cast<double>(M)));
    return diff::cross_entropy(uniform, q);
}

Var combined_aux(Var aux1, Var aux2, double alpha) { return diff::add(diff::scale(aux1, -1.0), diff::scale(aux2, alpha)); }

std::vector<double> usage_histogram(const GateDecision& d, std::span<const std::size_t> row_interval,
                                    std::size_t num_intervals) {
    std::vector<double> h(num_intervals * d.experts, 0.0);
    for (std::size_t l = 0; l < d.tokens; ++l)
        for (std::size_t t = 0; t < d.k; ++t) h[row_interval[l] * d.experts + d.selected[l * d.k + t]] += 1.0;
    return h;
}

}  // namespace rollcast::moe
