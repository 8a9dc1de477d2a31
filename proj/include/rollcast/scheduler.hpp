#pragma once

// Rollout scheduling: the forecasting environment, a DQN over the interval
// action set, baseline policies, and alternating scheduler / head fine-tuning.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "rollcast/diff/graph.hpp"
#include "rollcast/diff/params.hpp"
#include "rollcast/encoding.hpp"
#include "rollcast/gridio.hpp"
#include "rollcast/metrics.hpp"
#include "rollcast/model.hpp"

namespace rollcast::scheduler {

/// One forecast step: (current state, interval) -> next state.
using StepFn = std::function<gridio::GridField(const gridio::GridField&, std::int64_t)>;
StepFn model_step(const model::ForecastModel& m);

struct EpisodeSpec {
    std::int64_t t0_hours = 0;
    std::int64_t lead_hours = 0;
};

struct EnvState {
    std::shared_ptr<const gridio::GridField> x_hat;  // current predicted state
    std::int64_t t0_hours = 0;                       // episode initial time
    std::int64_t travel_hours = 0;
    std::int64_t remaining_hours = 0;
    std::int64_t lead_hours = 0;

    std::int64_t date_time() const noexcept { return t0_hours + travel_hours; }
    bool done() const noexcept { return remaining_hours == 0; }
    encoding::TemporalInput temporal() const {
        return {date_time(), travel_hours, remaining_hours, lead_hours};
    }
};

struct Transition {
    EnvState state;
    std::int64_t action = 0;
    double reward = 0.0;
    EnvState next;
    bool terminal = false;
    std::size_t epoch = 0;  // collection epoch, used for eviction
};

struct Trajectory {
    EpisodeSpec spec;
    std::vector<std::int64_t> timestamps;  // valid times tau_1 .. tau_|Gamma|
    std::vector<std::int64_t> intervals;
    std::vector<double> rewards;
    std::vector<double> rmse;  // per step, against the truth at tau_t
    double final_rmse = 0.0;
    std::vector<double> final_rmse_per_var;
    std::shared_ptr<const gridio::GridField> final_state;
    double ret = 0.0;
};

class IllegalActionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class Environment {
public:
    Environment(StepFn step, const gridio::Dataset& data, metrics::WeightTable w, double omega,
                std::vector<std::int64_t> actions = {6, 12, 24});

    /// Throws std::invalid_argument when the lead cannot be reached in whole
    /// steps or the episode leaves the dataset.
    EnvState reset(const EpisodeSpec& spec) const;
    /// Throws IllegalActionError unless `action` is in legal_actions(state).
    std::pair<Transition, EnvState> step(const EnvState& state, std::int64_t action) const;
    std::vector<std::int64_t> legal_actions(const EnvState& state) const;

    const std::vector<std::int64_t>& actions() const noexcept { return actions_; }
    double omega() const noexcept { return omega_; }
    void set_omega(double omega) { omega_ = omega; }
    void set_step(StepFn step) { step_ = std::move(step); }
    const gridio::Dataset& data() const noexcept { return data_; }
    const metrics::WeightTable& weights() const noexcept { return w_; }

private:
    StepFn step_;
    const gridio::Dataset& data_;
    metrics::WeightTable w_;
    double omega_;
    std::vector<std::int64_t> actions_;
};

/// Chooses the next interval for a state; only legal actions are offered.
using Chooser = std::function<std::int64_t(const EnvState&, std::span<const std::int64_t> legal)>;

/// Plays one episode to completion. Every transition is passed to `sink` if set.
Trajectory run_episode(const Environment& env, const EpisodeSpec& spec, const Chooser& choose,
                       const std::function<void(const Transition&)>& sink = {});

/// Plays a fixed interval list; throws if it does not sum to the lead.
Trajectory run_plan(const Environment& env, const EpisodeSpec& spec, std::span<const std::int64_t> plan);

// --- baseline policies ---------------------------------------------------------

std::vector<std::int64_t> policy_naive(std::int64_t lead_hours, std::int64_t step = 6);
/// Largest legal interval first, repeatedly.
std::vector<std::int64_t> policy_greedy(std::int64_t lead_hours, std::span<const std::int64_t> actions);
/// Uniform over the legal actions at each step.
std::vector<std::int64_t> policy_random(std::int64_t lead_hours, std::span<const std::int64_t> actions,
                                        std::uint64_t seed);
std::int64_t uniform_legal(std::span<const std::int64_t> legal, std::mt19937_64& rng);

// --- value network ---------------------------------------------------------------

/// Weather tokens for a state, [L, D]; normally the frozen tokenizer + ring encoding.
using WeatherEmbedFn = std::function<diff::Var(diff::Graph&, const gridio::GridField&)>;
WeatherEmbedFn model_embedding(const model::ForecastModel& m);

struct QNetConfig {
    std::size_t embed_dim = 32;
    std::size_t num_heads = 4;
    std::size_t hidden = 64;
    double horizon_hours = 24.0;  // travel/remaining/lead are divided by this
    double ln_eps = 1e-6;
};

/// [weather tokens; temporal token] -> pre-norm self-attention with residual ->
/// MLP head on the last token -> one value per action.
class QNetwork {
public:
    QNetwork(diff::ParameterStore& store, const std::string& prefix, QNetConfig cfg, std::size_t num_actions,
             std::mt19937_64& rng);

    /// [B, |A|] values.
    diff::Var forward(diff::Graph& g, const WeatherEmbedFn& weather, std::span<const EnvState* const> states,
                      bool frozen = false) const;
    std::vector<diff::Parameter*> parameters() const;

private:
    QNetConfig cfg_;
    std::size_t num_actions_;
    encoding::TemporalEmbedding time_;
    diff::Parameter *qkv_w_, *qkv_b_, *out_w_, *out_b_, *h1_w_, *h1_b_, *h2_w_, *h2_b_;
};

struct DqnConfig {
    QNetConfig net;
    double gamma = 0.99;
    std::size_t sync_period = 200;  // C
    double lr = 1e-3;
    double clip_norm = 1.0;
    double eps_start = 1.0;
    double eps_end = 0.1;
    std::size_t eps_decay_episodes = 150;
};

class Dqn {
public:
    Dqn(WeatherEmbedFn weather, std::vector<std::int64_t> actions, DqnConfig cfg, std::uint64_t seed);

    std::vector<double> q_main(const EnvState& s) const;
    std::vector<double> q_target(const EnvState& s) const;
    /// Argmax over legal actions of q_main; with probability eps a uniform legal action.
    std::int64_t act(const EnvState& s, double eps, std::mt19937_64& rng) const;
    /// Same, but on q_target (used to generate fine-tuning trajectories).
    std::int64_t act_target(const EnvState& s) const;

    /// y = R for terminal transitions, else R + gamma * max over legal a' of q_target(S', a').
    std::vector<double> td_targets(std::span<const Transition* const> batch) const;
    /// One optimizer step on mean (y - q_main(S, A))^2; returns the pre-step loss.
    double td_update(std::span<const Transition* const> batch);
    /// q_target <- q_main.
    void sync();

    double epsilon(std::size_t episode) const;
    const DqnConfig& config() const noexcept { return cfg_; }
    const std::vector<std::int64_t>& actions() const noexcept { return actions_; }
    std::size_t action_index(std::int64_t a) const;
    std::size_t updates() const noexcept { return updates_; }
    diff::ParameterStore& main_params() noexcept { return main_store_; }
    diff::ParameterStore& target_params() noexcept { return target_store_; }
    void set_weather(WeatherEmbedFn weather) { weather_ = std::move(weather); }

private:
    std::size_t best_legal(std::span<const double> q, const EnvState& s) const;

    WeatherEmbedFn weather_;
    std::vector<std::int64_t> actions_;
    DqnConfig cfg_;
    diff::ParameterStore main_store_, target_store_;
    std::unique_ptr<QNetwork> main_, target_;
    std::unique_ptr<diff::AdamW> opt_;
    std::size_t updates_ = 0;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Transition t);
    /// Uniform with replacement.
    std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;
    /// Drops transitions collected before `current_epoch - max_age`, then replays
    /// every remaining (state, action) through `env` to refresh reward and next state.
    void refresh(const Environment& env, std::size_t current_epoch, std::size_t max_age);

    std::size_t size() const noexcept { return items_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    const Transition& operator[](std::size_t i) const { return items_[i]; }

private:
    std::size_t capacity_;
    std::deque<Transition> items_;
};

// --- rollout fine-tuning -----------------------------------------------------------

struct RolloutLoss {
    diff::Var total;                     // sum over steps / (|Gamma| * VHW)
    std::vector<diff::Var> step_deltas;  // predicted delta tokens per step
    std::vector<double> step_losses;     // per-step weighted squared error / VHW
};

/// Rollout loss along `intervals` from the true state at t0. Each step's target
/// is X_tau - X_hat_{tau-1} with the input treated as a constant; predictions
/// after step `t_max` carry no gradient. Only the head is trainable.
RolloutLoss rollout_loss(diff::Graph& g, const model::ForecastModel& m, const gridio::Dataset& d, std::int64_t t0,
                         std::span<const std::int64_t> intervals, std::size_t t_max,
                         std::span<const double> token_weights);

struct FinetuneConfig {
    std::size_t epochs = 16;
    std::size_t episodes_per_epoch = 24;
    std::size_t iterations_per_epoch = 250;
    std::size_t batch_size = 32;
    std::size_t buffer_capacity = 50000;
    std::size_t max_age_epochs = 4;
    std::size_t finetune_episodes = 2;  // trajectories per sync
    std::size_t t_max = 4;
    double head_lr = 1e-4;
    double omega = 0.0;  // per-step reward offset
    std::vector<std::int64_t> leads = {72, 138, 240};
    std::uint64_t seed = 11;
};

struct FinetuneEvent {
    enum Kind { td, sync, head } kind = td;
    std::size_t epoch = 0;
    std::size_t iteration = 0;
    double value = 0.0;  // TD loss, rollout loss, or 0 for a sync
};

struct FinetuneReport {
    std::vector<FinetuneEvent> events;
    std::vector<Trajectory> episodes;  // interaction episodes, in collection order
    std::size_t transitions_collected = 0;
    std::size_t syncs = 0;
    std::size_t head_updates = 0;
};

/// Training episodes: initial time uniform over the training split (so the
/// whole lead fits), lead uniform over `leads`.
EpisodeSpec sample_episode(const gridio::Dataset& d, gridio::Split split, std::span<const std::int64_t> leads,
                           std::mt19937_64& rng);

/// Alternates DQN training against the environment with head fine-tuning on
/// trajectories the target network generates. The environment must be backed
/// by `m`, whose head parameters are updated in place.
FinetuneReport adaptive_rollout_finetune(model::ForecastModel& m, Environment& env, Dqn& dqn, ReplayBuffer& buffer,
                                         const FinetuneConfig& cfg,
                                         const std::function<void(const FinetuneEvent&)>& on_event = {});

/// -0.05 x the mean one-step 6h RMSE of `m` over `split`.
double auto_omega(const model::ForecastModel& m, const gridio::Dataset& d, const metrics::WeightTable& w,
                  gridio::Split split = gridio::Split::val, std::size_t stride = 8);

}  // namespace rollcast::scheduler
