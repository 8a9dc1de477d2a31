#include "rollcast/trainer.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <utility>

namespace rollcast::model {

using diff::Var;

std::vector<std::size_t> admissible_frames(const gridio::Dataset& d, gridio::Split split, std::int64_t delta,
                                           std::size_t stride) {
    if (delta <= 0 || delta % d.step_hours() != 0)
        throw std::invalid_argument("interval " + std::to_string(delta) + "h is not a positive multiple of the step");
    if (stride == 0) throw std::invalid_argument("stride must be >= 1");
    const auto [begin, end] = d.split_range(split);
    const auto ahead = static_cast<std::size_t>(delta / d.step_hours());
    std::vector<std::size_t> out;
    for (std::size_t k = begin; k + ahead < end; k += stride) out.push_back(k);
    return out;
}

std::vector<Sample> sample_batch(const gridio::Dataset& d, const ModelConfig& cfg, std::uint64_t seed,
                                 std::uint64_t step, std::size_t batch, gridio::Split split) {
    std::mt19937_64 rng(seed ^ ((step + 1) * 0x9E3779B97F4A7C15ULL));
    std::discrete_distribution<std::size_t> pick(cfg.interval_probs.begin(), cfg.interval_probs.end());
    const auto [begin, end] = d.split_range(split);
    std::vector<Sample> out(batch);
    for (auto& s : out) {
        s.delta = cfg.intervals()[pick(rng)];
        const auto ahead = static_cast<std::size_t>(s.delta / d.step_hours());
        if (begin + ahead >= end)
            throw std::invalid_argument("split too short for a " + std::to_string(s.delta) + "h window");
        std::uniform_int_distribution<std::size_t> frame(begin, end - ahead - 1);
        s.frame = frame(rng);
    }
    return out;
}

LossParts pretrain_loss(diff::Graph& g, const ForecastModel& m, const gridio::Dataset& d,
                        std::span<const Sample> batch, std::span<const double> token_weights, double aux_weight) {
    const std::size_t B = batch.size(), P = m.config().tokenizer.patch_size;
    std::vector<const gridio::GridField*> xs;
    std::vector<std::int64_t> ds;
    std::vector<double> target;
    for (const auto& s : batch) {
        const auto& x0 = d.frames[s.frame];
        const auto w = gridio::window(d, x0.timestamp_hours, s.delta);
        auto t = encoding::patchify(m.spec(), P, w.delta.values);
        target.insert(target.end(), t.begin(), t.end());
        xs.push_back(&x0);
        ds.push_back(s.delta);
    }
    auto bf = m.forward_batch(g, xs, ds);
    LossParts lp;
    lp.l_delta = weighted_delta_loss(bf.delta_tokens, target, token_weights, B);
    lp.aux1 = g.zeros({1, 1});
    lp.aux2 = g.zeros({1, 1});
    for (const auto& r : bf.moe) {
        lp.aux1 = diff::add(lp.aux1, moe::aux_loss_1(r.noise_dists));
        lp.aux2 = diff::add(lp.aux2, moe::aux_loss_2(r.noise_dists));
    }
    Var aux = moe::combined_aux(lp.aux1, lp.aux2, m.config().moe.alpha);
    lp.total = diff::add(lp.l_delta, diff::scale(aux, aux_weight));
    return lp;
}

Pretrainer::Pretrainer(ForecastModel& model, const gridio::Dataset& data, PretrainConfig cfg, metrics::WeightTable w)
    : model_(model),
      data_(data),
      cfg_(cfg),
      token_w_(model.token_weights(w)),
      opt_(model.trainable_parameters(), diff::AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay, cfg.clip_norm}) {
    if (cfg_.batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be >= 1");
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("pretrain: lr must be positive");
}

double Pretrainer::lr_at(std::size_t step) const {
    if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps)
        return cfg_.lr * static_cast<double>(step + 1) / static_cast<double>(cfg_.warmup_steps);
    const double span = static_cast<double>(std::max<std::size_t>(1, cfg_.steps - std::min(cfg_.steps, cfg_.warmup_steps)));
    const double t = std::min(1.0, static_cast<double>(step - cfg_.warmup_steps) / span);
    const double floor = cfg_.min_lr_fraction;
    return cfg_.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

StepStats Pretrainer::step() {
    const auto batch = sample_batch(data_, model_.config(), cfg_.seed, step_, cfg_.batch_size);
    diff::Graph g;
    auto lp = pretrain_loss(g, model_, data_, batch, token_w_, cfg_.aux_weight);
    StepStats st;
    st.l_delta = lp.l_delta.item();
    st.aux1 = lp.aux1.item();
    st.aux2 = lp.aux2.item();
    st.total = lp.total.item();
    if (!std::isfinite(st.total))
        throw diff::DivergenceError("pretrain: non-finite loss at step " + std::to_string(step_ + 1));
    opt_.zero_grad();
    g.backward(lp.total);
    g.accumulate_into_parameters();
    st.lr = lr_at(step_);
    opt_.set_lr(st.lr);
    st.grad_norm = opt_.step();
    st.step = ++step_;
    return st;
}

void Pretrainer::save(const std::filesystem::path& path) const {
    diff::ParameterStore extra;
    opt_.export_state(extra, "opt.");
    extra.add("train.step", {1, 1}, false).value[0] = static_cast<double>(step_);
    std::vector<const diff::Parameter*> params;
    for (const auto* p : std::as_const(model_.params()).all()) params.push_back(p);
    for (const auto* p : std::as_const(extra).all()) params.push_back(p);
    diff::save_checkpoint(path, params);
}

void Pretrainer::load(const std::filesystem::path& path) {
    diff::ParameterStore loaded;
    diff::load_checkpoint(path, loaded);
    for (auto* p : model_.params().all()) {
        if (!loaded.contains(p->name)) throw diff::CheckpointError("missing tensor '" + p->name + "'");
        const auto& src = loaded.get(p->name);
        if (src.shape != p->shape) throw diff::CheckpointError("shape mismatch for '" + p->name + "'");
        p->value = src.value;
    }
    opt_.import_state(loaded, "opt.");
    step_ = loaded.contains("train.step") ? static_cast<std::size_t>(loaded.get("train.step").value[0]) : 0;
}

double evaluate_l_delta(const ForecastModel& m, const gridio::Dataset& d, gridio::Split split, std::int64_t delta,
                        const metrics::WeightTable& w, std::size_t stride) {
    const auto frames = admissible_frames(d, split, delta, stride);
    if (frames.empty()) throw std::invalid_argument("evaluate_l_delta: no admissible frames");
    double total = 0.0;
    for (auto k : frames) {
        const auto& x0 = d.frames[k];
        const auto pred = m.forward(x0, delta);
        const double r = metrics::rmse(pred.x_hat, d.at_time(x0.timestamp_hours + delta), w);
        total += r * r;
    }
    return total / static_cast<double>(frames.size());
}

double persistence_l_delta(const gridio::Dataset& d, gridio::Split split, std::int64_t delta,
                           const metrics::WeightTable& w, std::size_t stride) {
    const auto frames = admissible_frames(d, split, delta, stride);
    if (frames.empty()) throw std::invalid_argument("persistence_l_delta: no admissible frames");
    double total = 0.0;
    for (auto k : frames) {
        const auto& x0 = d.frames[k];
        const double r = metrics::rmse(x0, d.at_time(x0.timestamp_hours + delta), w);
        total += r * r;
    }
    return total / static_cast<double>(frames.size());
}

}  // namespace rollcast::model
