#include "rollcast/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rollcast::model {

using diff::Var;

void ModelConfig::validate(const gridio::GridSpec& spec) {
    tokenizer.validate(spec);
    const std::size_t D = tokenizer.embed_dim;
    if (num_blocks < 1) throw std::invalid_argument("model: need at least one block");
    if (num_heads < 1 || D % num_heads != 0)
        throw std::invalid_argument("model: embed_dim " + std::to_string(D) + " is not divisible by num_heads " +
                                    std::to_string(num_heads));
    moe.embed_dim = D;
    moe.validate();
    for (auto d : moe.intervals)
        if (d <= 0 || d % spec.base_step_hours != 0)
            throw std::invalid_argument("model: interval " + std::to_string(d) + "h is not a positive multiple of " +
                                        std::to_string(spec.base_step_hours) + "h");
    if (interval_probs.size() != moe.intervals.size())
        throw std::invalid_argument("model: need one sampling probability per interval");
    double total = 0.0;
    for (double p : interval_probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("model: interval probabilities must be non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("model: interval probabilities must sum to 1");
    if (!(ln_eps > 0.0)) throw std::invalid_argument("model: ln_eps must be positive");
}

Var self_attention(Var x, Var w_qkv, Var b_qkv, Var w_out, Var b_out, std::size_t heads) {
    const std::size_t D = x.cols();
    if (w_qkv.shape() != diff::Shape{D, 3 * D}) throw diff::ShapeError("attention qkv", w_qkv.shape(), {D, 3 * D});
    if (D % heads != 0) throw diff::ShapeError("attention", "width not divisible by head count");
    const std::size_t dh = D / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    Var qkv = diff::add_bias(diff::matmul(x, w_qkv), b_qkv);
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var q = diff::slice(qkv, 1, h * dh, (h + 1) * dh);
        Var k = diff::slice(qkv, 1, D + h * dh, D + (h + 1) * dh);
        Var v = diff::slice(qkv, 1, 2 * D + h * dh, 2 * D + (h + 1) * dh);
        Var a = diff::softmax(diff::scale(diff::matmul_nt(q, k), inv), 1);
        outs.push_back(diff::matmul(a, v));
    }
    Var cat = heads == 1 ? outs.front() : diff::concat(outs, 1);
    return diff::add_bias(diff::matmul(cat, w_out), b_out);
}

namespace {

// LN(z) * (1 + scale) + shift, with per-sample [B, D] modulation rows.
Var modulate(Var z, Var shift, Var scale, std::size_t tokens, double eps) {
    Var n = diff::layer_norm(z, eps);
    Var sc = diff::add_scalar(diff::repeat_rows(scale, tokens), 1.0);
    return diff::add(diff::mul(n, sc), diff::repeat_rows(shift, tokens));
}

Var chunk(Var m, std::size_t i, std::size_t d) { return diff::slice(m, 1, i * d, (i + 1) * d); }

}  // namespace

ArchBlock::ArchBlock(diff::ParameterStore& store, const std::string& prefix, const ModelConfig& cfg,
                     std::mt19937_64& rng)
    : dim_(cfg.tokenizer.embed_dim),
      heads_(cfg.num_heads),
      eps_(cfg.ln_eps),
      moe_(store, prefix + "moe.", cfg.moe, rng) {
    const std::size_t D = dim_;
    const double sd = 1.0 / std::sqrt(static_cast<double>(D));
    qkv_w_ = &store.add_normal(prefix + "attn.qkv_w", {D, 3 * D}, sd, rng);
    qkv_b_ = &store.add(prefix + "attn.qkv_b", {1, 3 * D});
    out_w_ = &store.add_normal(prefix + "attn.out_w", {D, D}, sd, rng);
    out_b_ = &store.add(prefix + "attn.out_b", {1, D});
    ada_w_ = &store.add(prefix + "adaln.w", {D, 6 * D});
    ada_b_ = &store.add(prefix + "adaln.b", {1, 6 * D});
}

ArchBlock::Output ArchBlock::forward(diff::Graph& g, Var z, Var cond, std::size_t L,
                                     std::span<const std::size_t> row_interval, bool frozen) const {
    const std::size_t D = dim_, B = cond.rows();
    if (z.shape() != diff::Shape{B * L, D}) throw diff::ShapeError("arch block", z.shape(), {B * L, D});
    Var mod = diff::add_bias(diff::matmul(diff::silu(cond), g.param(*ada_w_, frozen)), g.param(*ada_b_, frozen));
    Var shift1 = chunk(mod, 0, D), scale1 = chunk(mod, 1, D), gate1 = chunk(mod, 2, D);
    Var shift2 = chunk(mod, 3, D), scale2 = chunk(mod, 4, D), gate2 = chunk(mod, 5, D);

    Var x = modulate(z, shift1, scale1, L, eps_);
    Var wq = g.param(*qkv_w_, frozen), bq = g.param(*qkv_b_, frozen);
    Var wo = g.param(*out_w_, frozen), bo = g.param(*out_b_, frozen);
    std::vector<Var> per_sample;
    per_sample.reserve(B);
    for (std::size_t b = 0; b < B; ++b)
        per_sample.push_back(self_attention(diff::slice(x, 0, b * L, (b + 1) * L), wq, bq, wo, bo, heads_));
    Var attn = B == 1 ? per_sample.front() : diff::concat(per_sample, 0);
    Var z1 = diff::add(z, diff::mul(diff::repeat_rows(gate1, L), attn));

    Var zbar = modulate(z1, shift2, scale2, L, eps_);
    Output out;
    out.moe = moe_.forward(g, zbar, row_interval, frozen);
    out.z = diff::add(z1, diff::mul(diff::repeat_rows(gate2, L), out.moe.output));
    return out;
}

ForecastModel::ForecastModel(const gridio::GridSpec& spec, ModelConfig cfg, std::uint64_t seed)
    : spec_(std::make_shared<const gridio::GridSpec>(spec)), cfg_(std::move(cfg)), init_rng_(seed) {
    spec_->validate();
    cfg_.validate(*spec_);
    const auto& tc = cfg_.tokenizer;
    const std::size_t D = tc.embed_dim, F = tc.patch_dim(*spec_), V = spec_->num_vars;
    pe_ = encoding::ring_pe_2d(tc.tokens_h(*spec_), tc.tokens_w(*spec_), D);

    norm_mean_ = &store_.add("norm.mean", {1, V}, false);
    norm_scale_ = &store_.add("norm.scale", {1, V}, false);
    delta_scale_ = &store_.add("norm.delta_scale", {1, V}, false);
    std::fill(norm_scale_->value.begin(), norm_scale_->value.end(), 1.0);
    std::fill(delta_scale_->value.begin(), delta_scale_->value.end(), 1.0);

    tok_w_ = &store_.add_normal("tok.w", {F, D}, 1.0 / std::sqrt(static_cast<double>(F)), init_rng_);
    tok_b_ = &store_.add("tok.b", {1, D});
    interval_ = std::make_unique<encoding::IntervalEmbedding>(store_, "interval.", cfg_.intervals(), D, init_rng_);
    blocks_.reserve(cfg_.num_blocks);
    for (std::size_t n = 0; n < cfg_.num_blocks; ++n)
        blocks_.emplace_back(store_, "block" + std::to_string(n) + ".", cfg_, init_rng_);
    final_ada_w_ = &store_.add("head.adaln.w", {D, 2 * D});
    final_ada_b_ = &store_.add("head.adaln.b", {1, 2 * D});
    head_w_ = &store_.add("head.w", {D, F});
    head_b_ = &store_.add("head.b", {1, F});
}

void ForecastModel::fit_normalizer(const gridio::Dataset& d) {
    if (!(*d.spec == *spec_)) throw std::invalid_argument("fit_normalizer: dataset grid differs from the model grid");
    const auto [begin, end] = d.split_range(gridio::Split::train);
    if (end - begin < 2) throw std::invalid_argument("fit_normalizer: need at least two training frames");
    const std::size_t V = spec_->num_vars, C = spec_->cells();
    for (std::size_t v = 0; v < V; ++v) {
        double s = 0.0, ss = 0.0, ds = 0.0;
        for (std::size_t k = begin; k < end; ++k) {
            const double* f = d.frames[k].values.data() + v * C;
            for (std::size_t c = 0; c < C; ++c) {
                s += f[c];
                ss += f[c] * f[c];
                if (k + 1 < end) {
                    const double e = d.frames[k + 1].values[v * C + c] - f[c];
                    ds += e * e;
                }
            }
        }
        const double n = static_cast<double>((end - begin) * C);
        const double mean = s / n;
        const double var = std::max(ss / n - mean * mean, 0.0);
        norm_mean_->value[v] = diff::round_to_f32(mean);
        norm_scale_->value[v] = diff::round_to_f32(std::sqrt(var) > 1e-8 ? std::sqrt(var) : 1.0);
        const double rms = std::sqrt(ds / static_cast<double>((end - begin - 1) * C));
        delta_scale_->value[v] = diff::round_to_f32(rms > 1e-8 ? rms : 1.0);
    }
}

std::vector<double> ForecastModel::normalized_patches(const gridio::GridField& x) const {
    if (x.values.size() != spec_->size()) throw std::invalid_argument("model: field does not match the model grid");
    std::vector<double> norm(x.values.size());
    const std::size_t C = spec_->cells();
    for (std::size_t v = 0; v < spec_->num_vars; ++v)
        for (std::size_t c = 0; c < C; ++c)
            norm[v * C + c] = (x.values[v * C + c] - norm_mean_->value[v]) / norm_scale_->value[v];
    return encoding::patchify(*spec_, cfg_.tokenizer.patch_size, norm);
}

BatchForward ForecastModel::forward_batch(diff::Graph& g, std::span<const gridio::GridField* const> x0,
                                          std::span<const std::int64_t> deltas, bool freeze_backbone,
                                          bool freeze_head) const {
    const std::size_t B = x0.size(), L = tokens(), D = cfg_.tokenizer.embed_dim;
    const std::size_t F = cfg_.tokenizer.patch_dim(*spec_), P = cfg_.tokenizer.patch_size;
    if (B == 0 || deltas.size() != B) throw std::invalid_argument("forward_batch: need one interval per sample");

    std::vector<double> patches;
    patches.reserve(B * L * F);
    std::vector<double> pe;
    pe.reserve(B * L * D);
    BatchForward out;
    out.row_interval.reserve(B * L);
    for (std::size_t b = 0; b < B; ++b) {
        auto p = normalized_patches(*x0[b]);
        patches.insert(patches.end(), p.begin(), p.end());
        pe.insert(pe.end(), pe_.table.begin(), pe_.table.end());
        out.row_interval.insert(out.row_interval.end(), L, interval_->index_of(deltas[b]));
    }

    const bool fb = freeze_backbone, fh = freeze_head;
    Var z = encoding::tokenize(g.constant({B * L, F}, std::move(patches)), g.param(*tok_w_, fb),
                               g.param(*tok_b_, fb));
    z = diff::add(z, g.constant({B * L, D}, std::move(pe)));
    Var cond = interval_->lookup(g, deltas, fb);
    for (const auto& blk : blocks_) {
        auto r = blk.forward(g, z, cond, L, out.row_interval, fb);
        z = r.z;
        out.moe.push_back(std::move(r.moe));
    }
    Var mod = diff::add_bias(diff::matmul(diff::silu(cond), g.param(*final_ada_w_, fh)), g.param(*final_ada_b_, fh));
    Var y = modulate(z, chunk(mod, 0, D), chunk(mod, 1, D), L, cfg_.ln_eps);
    Var raw = diff::add_bias(diff::matmul(y, g.param(*head_w_, fh)), g.param(*head_b_, fh));

    std::vector<double> scale_row(F);
    for (std::size_t f = 0; f < F; ++f) scale_row[f] = delta_scale_->value[f / (P * P)];
    out.delta_tokens = diff::mul_row_broadcast(raw, g.constant({1, F}, std::move(scale_row)));
    return out;
}

ForecastOutput ForecastModel::forward(const gridio::GridField& x0, std::int64_t delta) const {
    diff::Graph g;
    const gridio::GridField* xs[] = {&x0};
    const std::int64_t ds[] = {delta};
    auto bf = forward_batch(g, xs, ds, true, true);
    ForecastOutput out;
    out.delta_hat.spec = spec_;
    out.delta_hat.interval_hours = delta;
    out.delta_hat.values = encoding::unpatchify(*spec_, cfg_.tokenizer.patch_size, bf.delta_tokens.value());
    out.x_hat = gridio::GridField(spec_, x0.timestamp_hours + delta);
    for (std::size_t e = 0; e < out.x_hat.values.size(); ++e)
        out.x_hat.values[e] = x0.values[e] + out.delta_hat.values[e];
    for (auto& m : bf.moe) out.gate_decisions.push_back(std::move(m.decision));
    return out;
}

std::vector<gridio::GridField> ForecastModel::predict_rollout(const gridio::GridField& x0,
                                                              std::span<const std::int64_t> steps,
                                                              std::int64_t lead_hours) const {
    const std::int64_t total = std::accumulate(steps.begin(), steps.end(), std::int64_t{0});
    if (lead_hours > 0 && total > lead_hours)
        throw std::invalid_argument("predict_rollout: steps sum to " + std::to_string(total) + "h, past the " +
                                    std::to_string(lead_hours) + "h lead");
    std::vector<gridio::GridField> out;
    out.reserve(steps.size());
    const gridio::GridField* cur = &x0;
    for (auto d : steps) {
        out.push_back(forward(*cur, d).x_hat);
        cur = &out.back();
    }
    return out;
}

Var ForecastModel::weather_embedding(diff::Graph& g, const gridio::GridField& x) const {
    const std::size_t L = tokens(), F = cfg_.tokenizer.patch_dim(*spec_);
    Var z = encoding::tokenize(g.constant({L, F}, normalized_patches(x)), g.param(*tok_w_, true),
                               g.param(*tok_b_, true));
    return encoding::add_positional(z, pe_);
}

std::vector<diff::Parameter*> ForecastModel::head_parameters() {
    return {final_ada_w_, final_ada_b_, head_w_, head_b_};
}

std::vector<diff::Parameter*> ForecastModel::trainable_parameters() {
    std::vector<diff::Parameter*> out;
    for (auto* p : store_.all())
        if (p->trainable) out.push_back(p);
    return out;
}

std::vector<double> ForecastModel::token_weights(const metrics::WeightTable& w) const {
    const std::size_t P = cfg_.tokenizer.patch_size, tw = cfg_.tokenizer.tokens_w(*spec_);
    const std::size_t L = tokens(), F = cfg_.tokenizer.patch_dim(*spec_);
    std::vector<double> out(L * F);
    for (std::size_t k = 0; k < L; ++k) {
        const std::size_t r = k / tw;
        for (std::size_t f = 0; f < F; ++f) {
            const std::size_t v = f / (P * P), pi = (f / P) % P;
            out[k * F + f] = w.var[v] * w.lat[r * P + pi];
        }
    }
    return out;
}

Var weighted_delta_loss(Var pred_tokens, std::span<const double> target_tokens,
                        std::span<const double> weights_per_sample, std::size_t batch) {
    auto& g = pred_tokens.graph();
    const std::size_t n = pred_tokens.shape().size();
    if (target_tokens.size() != n || batch == 0 || weights_per_sample.size() * batch != n)
        throw diff::ShapeError("weighted_delta_loss", "target / weight sizes do not match the prediction");
    std::vector<double> w;
    w.reserve(n);
    for (std::size_t b = 0; b < batch; ++b) w.insert(w.end(), weights_per_sample.begin(), weights_per_sample.end());
    Var err = diff::sub(pred_tokens, g.constant(pred_tokens.shape(), target_tokens));
    Var weighted = diff::mul(diff::square(err), g.constant(pred_tokens.shape(), std::move(w)));
    return diff::scale(diff::sum(weighted), 1.0 / static_cast<double>(n));
}

}  // namespace rollcast::model
