#include <cmath>
#include <stdexcept>

#include "rollcast/scheduler.hpp"
#include "rollcast/trainer.hpp"

namespace rollcast::scheduler {

using diff::Var;

RolloutLoss rollout_loss(diff::Graph& g, const model::ForecastModel& m, const gridio::Dataset& d, std::int64_t t0,
                         std::span<const std::int64_t> intervals, std::size_t t_max,
                         std::span<const double> token_weights) {
    if (intervals.empty()) throw std::invalid_argument("rollout_loss: empty trajectory");
    const auto& spec = m.spec();
    const std::size_t P = m.config().tokenizer.patch_size;
    gridio::GridField cur = d.at_time(t0);
    RolloutLoss out;
    out.total = g.zeros({1, 1});
    for (std::size_t k = 0; k < intervals.size(); ++k) {
        const std::int64_t delta = intervals[k];
        const bool trainable = k < t_max;
        const gridio::GridField* xs[] = {&cur};
        const std::int64_t ds[] = {delta};
        auto bf = m.forward_batch(g, xs, ds, true, !trainable);
        const auto& truth = d.at_time(cur.timestamp_hours + delta);
        std::vector<double> target(truth.values.size());
        for (std::size_t e = 0; e < target.size(); ++e) target[e] = truth.values[e] - cur.values[e];
        const auto target_tokens = encoding::patchify(spec, P, target);
        Var pred = trainable ? bf.delta_tokens : diff::detach(bf.delta_tokens);
        Var step = model::weighted_delta_loss(pred, target_tokens, token_weights, 1);
        out.step_deltas.push_back(pred);
        out.step_losses.push_back(step.item());
        out.total = diff::add(out.total, step);

        const auto delta_hat = encoding::unpatchify(spec, P, pred.value());
        gridio::GridField next(cur.spec, cur.timestamp_hours + delta);
        for (std::size_t e = 0; e < next.values.size(); ++e) next.values[e] = cur.values[e] + delta_hat[e];
        cur = std::move(next);
    }
    out.total = diff::scale(out.total, 1.0 / static_cast<double>(intervals.size()));
    return out;
}

FinetuneReport adaptive_rollout_finetune(model::ForecastModel& m, Environment& env, Dqn& dqn, ReplayBuffer& buffer,
                                         const FinetuneConfig& cfg,
                                         const std::function<void(const FinetuneEvent&)>& on_event) {
    if (cfg.batch_size == 0) throw std::invalid_argument("finetune: batch_size must be >= 1");
    if (cfg.leads.empty()) throw std::invalid_argument("finetune: no episode lead times");
    const auto& data = env.data();
    std::mt19937_64 rng(cfg.seed);
    diff::AdamW head_opt(m.head_parameters(), diff::AdamWConfig{cfg.head_lr, 0.9, 0.999, 1e-8, 0.0, 1.0});
    const auto token_w = m.token_weights(env.weights());
    FinetuneReport report;
    auto emit = [&](FinetuneEvent ev) {
        report.events.push_back(ev);
        if (on_event) on_event(ev);
    };

    std::size_t episode = 0, iteration = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e, ++episode) {
            const auto spec = sample_episode(data, gridio::Split::train, cfg.leads, rng);
            const double eps = dqn.epsilon(episode);
            auto traj = run_episode(
                env, spec, [&](const EnvState& s, std::span<const std::int64_t>) { return dqn.act(s, eps, rng); },
                [&](const Transition& t) {
                    Transition stored = t;
                    stored.epoch = epoch;
                    buffer.push(std::move(stored));
                    ++report.transitions_collected;
                });
            traj.final_state.reset();
            report.episodes.push_back(std::move(traj));
        }
        if (epoch > 0) buffer.refresh(env, epoch, cfg.max_age_epochs);

        for (std::size_t it = 0; it < cfg.iterations_per_epoch; ++it) {
            const auto batch = buffer.sample(cfg.batch_size, rng);
            emit({FinetuneEvent::td, epoch, iteration, dqn.td_update(batch)});
            ++iteration;
            if (iteration % dqn.config().sync_period != 0) continue;

            dqn.sync();
            ++report.syncs;
            emit({FinetuneEvent::sync, epoch, iteration, 0.0});
            for (std::size_t k = 0; k < cfg.finetune_episodes; ++k) {
                const auto spec = sample_episode(data, gridio::Split::train, cfg.leads, rng);
                const auto traj = run_episode(
                    env, spec, [&](const EnvState& s, std::span<const std::int64_t>) { return dqn.act_target(s); });
                diff::Graph g;
                auto rl = rollout_loss(g, m, data, spec.t0_hours, traj.intervals, cfg.t_max, token_w);
                const double value = rl.total.item();
                if (!std::isfinite(value)) throw diff::DivergenceError("finetune: non-finite rollout loss");
                head_opt.zero_grad();
                g.backward(rl.total);
                g.accumulate_into_parameters();
                head_opt.step();
                ++report.head_updates;
                emit({FinetuneEvent::head, epoch, iteration, value});
            }
        }
    }
    return report;
}

double auto_omega(const model::ForecastModel& m, const gridio::Dataset& d, const metrics::WeightTable& w,
                  gridio::Split split, std::size_t stride) {
    const auto frames = model::admissible_frames(d, split, 6, stride);
    if (frames.empty()) throw std::invalid_argument("auto_omega: no admissible frames");
    double total = 0.0;
    for (auto k : frames) {
        const auto& x0 = d.frames[k];
        total += metrics::rmse(m.forward(x0, 6).x_hat, d.at_time(x0.timestamp_hours + 6), w);
    }
    return -0.05 * total / static_cast<double>(frames.size());
}

}  // namespace rollcast::scheduler
