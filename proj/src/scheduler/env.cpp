#include <cmath>
#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "rollcast/scheduler.hpp"

namespace rollcast::scheduler {

StepFn model_step(const model::ForecastModel& m) {
    return [&m](const gridio::GridField& x, std::int64_t delta) { return m.forward(x, delta).x_hat; };
}

WeatherEmbedFn model_embedding(const model::ForecastModel& m) {
    return [&m](diff::Graph& g, const gridio::GridField& x) { return m.weather_embedding(g, x); };
}

Environment::Environment(StepFn step, const gridio::Dataset& data, metrics::WeightTable w, double omega,
                         std::vector<std::int64_t> actions)
    : step_(std::move(step)), data_(data), w_(std::move(w)), omega_(omega), actions_(std::move(actions)) {
    if (actions_.empty()) throw std::invalid_argument("environment: empty action set");
    std::sort(actions_.begin(), actions_.end());
    if (actions_.front() <= 0) throw std::invalid_argument("environment: actions must be positive");
    for (auto a : actions_)
        if (a % data_.step_hours() != 0 || a % actions_.front() != 0)
            throw std::invalid_argument("environment: action " + std::to_string(a) +
                                        "h is not a multiple of the smallest action and the data step");
}

EnvState Environment::reset(const EpisodeSpec& spec) const {
    const std::int64_t unit = actions_.front();
    if (spec.lead_hours <= 0 || spec.lead_hours % unit != 0)
        throw std::invalid_argument("lead " + std::to_string(spec.lead_hours) + "h is not reachable in " +
                                    std::to_string(unit) + "h steps");
    const auto& x0 = data_.at_time(spec.t0_hours);
    (void)data_.index_of(spec.t0_hours + spec.lead_hours);
    EnvState s;
    s.x_hat = std::make_shared<const gridio::GridField>(x0);
    s.t0_hours = spec.t0_hours;
    s.lead_hours = spec.lead_hours;
    s.remaining_hours = spec.lead_hours;
    return s;
}

std::vector<std::int64_t> Environment::legal_actions(const EnvState& s) const {
    std::vector<std::int64_t> out;
    for (auto a : actions_)
        if (a <= s.remaining_hours) out.push_back(a);
    return out;
}

std::pair<Transition, EnvState> Environment::step(const EnvState& s, std::int64_t action) const {
    if (s.done()) throw IllegalActionError("episode already finished");
    const auto legal = legal_actions(s);
    if (std::find(legal.begin(), legal.end(), action) == legal.end())
        throw IllegalActionError("action " + std::to_string(action) + "h is not legal with " +
                                 std::to_string(s.remaining_hours) + "h remaining");
    EnvState next = s;
    next.x_hat = std::make_shared<const gridio::GridField>(step_(*s.x_hat, action));
    next.travel_hours += action;
    next.remaining_hours -= action;
    const auto& truth = data_.at_time(next.date_time());
    Transition t;
    t.state = s;
    t.action = action;
    t.reward = metrics::step_reward(*next.x_hat, truth, w_, omega_);
    if (!std::isfinite(t.reward)) throw diff::DivergenceError("environment: non-finite reward");
    t.next = next;
    t.terminal = next.done();
    return {std::move(t), std::move(next)};
}

Trajectory run_episode(const Environment& env, const EpisodeSpec& spec, const Chooser& choose,
                       const std::function<void(const Transition&)>& sink) {
    Trajectory tr;
    tr.spec = spec;
    EnvState s = env.reset(spec);
    while (!s.done()) {
        const auto legal = env.legal_actions(s);
        auto [t, next] = env.step(s, choose(s, legal));
        const auto& truth = env.data().at_time(next.date_time());
        tr.timestamps.push_back(next.date_time());
        tr.intervals.push_back(t.action);
        tr.rewards.push_back(t.reward);
        tr.rmse.push_back(metrics::rmse(*next.x_hat, truth, env.weights()));
        if (sink) sink(t);
        s = std::move(next);
    }
    const auto& truth = env.data().at_time(s.date_time());
    tr.final_rmse = tr.rmse.back();
    for (std::size_t v = 0; v < truth.spec->num_vars; ++v)
        tr.final_rmse_per_var.push_back(metrics::rmse_variable(*s.x_hat, truth, env.weights(), v));
    tr.final_state = s.x_hat;
    tr.ret = metrics::trajectory_return(tr.rewards);
    return tr;
}

Trajectory run_plan(const Environment& env, const EpisodeSpec& spec, std::span<const std::int64_t> plan) {
    if (std::accumulate(plan.begin(), plan.end(), std::int64_t{0}) != spec.lead_hours)
        throw std::invalid_argument("plan does not sum to the lead time");
    std::size_t k = 0;
    return run_episode(env, spec, [&](const EnvState&, std::span<const std::int64_t>) { return plan[k++]; });
}

}  // namespace rollcast::scheduler
