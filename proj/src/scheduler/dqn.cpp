#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rollcast/scheduler.hpp"

namespace rollcast::scheduler {

using diff::Var;

QNetwork::QNetwork(diff::ParameterStore& store, const std::string& prefix, QNetConfig cfg, std::size_t num_actions,
                   std::mt19937_64& rng)
    : cfg_(cfg), num_actions_(num_actions), time_(store, prefix + "time.", cfg.embed_dim, cfg.horizon_hours, rng) {
    const std::size_t D = cfg_.embed_dim, Hd = cfg_.hidden;
    if (D == 0 || cfg_.num_heads == 0 || D % cfg_.num_heads != 0)
        throw std::invalid_argument("q-network: embed_dim must be a positive multiple of num_heads");
    if (num_actions_ == 0) throw std::invalid_argument("q-network: no actions");
    const double sd = 1.0 / std::sqrt(static_cast<double>(D));
    qkv_w_ = &store.add_normal(prefix + "attn.qkv_w", {D, 3 * D}, sd, rng);
    qkv_b_ = &store.add(prefix + "attn.qkv_b", {1, 3 * D});
    out_w_ = &store.add_normal(prefix + "attn.out_w", {D, D}, sd, rng);
    out_b_ = &store.add(prefix + "attn.out_b", {1, D});
    h1_w_ = &store.add_normal(prefix + "head.w1", {D, Hd}, sd, rng);
    h1_b_ = &store.add(prefix + "head.b1", {1, Hd});
    h2_w_ = &store.add_normal(prefix + "head.w2", {Hd, num_actions_}, 0.1 / std::sqrt(static_cast<double>(Hd)), rng);
    h2_b_ = &store.add(prefix + "head.b2", {1, num_actions_});
}

std::vector<diff::Parameter*> QNetwork::parameters() const {
    return {qkv_w_, qkv_b_, out_w_, out_b_, h1_w_, h1_b_, h2_w_, h2_b_};
}

Var QNetwork::forward(diff::Graph& g, const WeatherEmbedFn& weather, std::span<const EnvState* const> states,
                      bool frozen) const {
    const std::size_t B = states.size();
    if (B == 0) throw std::invalid_argument("q-network: empty batch");
    std::vector<encoding::TemporalInput> ti;
    ti.reserve(B);
    for (const auto* s : states) ti.push_back(s->temporal());
    Var time = time_.embed(g, ti, frozen);  // [B, D]
    Var wq = g.param(*qkv_w_, frozen), bq = g.param(*qkv_b_, frozen);
    Var wo = g.param(*out_w_, frozen), bo = g.param(*out_b_, frozen);

    std::vector<Var> last;
    last.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        Var w = weather(g, *states[b]->x_hat);
        if (w.cols() != cfg_.embed_dim)
            throw diff::ShapeError("q-network weather tokens", w.shape(), {w.rows(), cfg_.embed_dim});
        const Var parts[] = {w, diff::slice(time, 0, b, b + 1)};
        Var z = diff::concat(parts, 0);
        Var h = diff::add(z, model::self_attention(diff::layer_norm(z, cfg_.ln_eps), wq, bq, wo, bo, cfg_.num_heads));
        last.push_back(diff::slice(h, 0, h.rows() - 1, h.rows()));
    }
    Var x = B == 1 ? last.front() : diff::concat(last, 0);
    Var hid = diff::gelu(diff::add_bias(diff::matmul(x, g.param(*h1_w_, frozen)), g.param(*h1_b_, frozen)));
    return diff::add_bias(diff::matmul(hid, g.param(*h2_w_, frozen)), g.param(*h2_b_, frozen));
}

Dqn::Dqn(WeatherEmbedFn weather, std::vector<std::int64_t> actions, DqnConfig cfg, std::uint64_t seed)
    : weather_(std::move(weather)), actions_(std::move(actions)), cfg_(cfg) {
    if (actions_.empty()) throw std::invalid_argument("dqn: empty action set");
    std::sort(actions_.begin(), actions_.end());
    if (!(cfg_.gamma >= 0.0 && cfg_.gamma <= 1.0)) throw std::invalid_argument("dqn: gamma must be in [0, 1]");
    if (cfg_.sync_period == 0) throw std::invalid_argument("dqn: sync_period must be >= 1");
    std::mt19937_64 rng_main(seed), rng_target(seed);
    main_ = std::make_unique<QNetwork>(main_store_, "q.", cfg_.net, actions_.size(), rng_main);
    target_ = std::make_unique<QNetwork>(target_store_, "q.", cfg_.net, actions_.size(), rng_target);
    std::vector<diff::Parameter*> trainable;
    for (auto* p : main_store_.all())
        if (p->trainable) trainable.push_back(p);
    opt_ = std::make_unique<diff::AdamW>(trainable, diff::AdamWConfig{cfg_.lr, 0.9, 0.999, 1e-8, 0.0, cfg_.clip_norm});
}

std::size_t Dqn::action_index(std::int64_t a) const {
    auto it = std::find(actions_.begin(), actions_.end(), a);
    if (it == actions_.end()) throw IllegalActionError("action " + std::to_string(a) + "h is not in the action set");
    return static_cast<std::size_t>(it - actions_.begin());
}

std::vector<double> Dqn::q_main(const EnvState& s) const {
    diff::Graph g;
    const EnvState* p[] = {&s};
    auto q = main_->forward(g, weather_, p, true).value();
    return {q.begin(), q.end()};
}

std::vector<double> Dqn::q_target(const EnvState& s) const {
    diff::Graph g;
    const EnvState* p[] = {&s};
    auto q = target_->forward(g, weather_, p, true).value();
    return {q.begin(), q.end()};
}

std::size_t Dqn::best_legal(std::span<const double> q, const EnvState& s) const {
    std::size_t best = actions_.size();
    for (std::size_t a = 0; a < actions_.size(); ++a) {
        if (actions_[a] > s.remaining_hours) continue;
        if (best == actions_.size() || q[a] > q[best]) best = a;
    }
    if (best == actions_.size()) throw IllegalActionError("no legal action with 0h remaining");
    return best;
}

std::int64_t Dqn::act(const EnvState& s, double eps, std::mt19937_64& rng) const {
    if (eps > 0.0) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (u(rng) < eps) {
            std::vector<std::int64_t> legal;
            for (auto a : actions_)
                if (a <= s.remaining_hours) legal.push_back(a);
            return uniform_legal(legal, rng);
        }
    }
    return actions_[best_legal(q_main(s), s)];
}

std::int64_t Dqn::act_target(const EnvState& s) const { return actions_[best_legal(q_target(s), s)]; }

std::vector<double> Dqn::td_targets(std::span<const Transition* const> batch) const {
    std::vector<double> y(batch.size());
    std::vector<const EnvState*> next;
    std::vector<std::size_t> which;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        y[i] = batch[i]->reward;
        if (!batch[i]->terminal) {
            next.push_back(&batch[i]->next);
            which.push_back(i);
        }
    }
    if (next.empty()) return y;
    diff::Graph g;
    auto q = target_->forward(g, weather_, next, true).value();
    const std::size_t A = actions_.size();
    for (std::size_t r = 0; r < next.size(); ++r) {
        const auto row = q.subspan(r * A, A);
        y[which[r]] += cfg_.gamma * row[best_legal(row, *next[r])];
    }
    return y;
}

double Dqn::td_update(std::span<const Transition* const> batch) {
    if (batch.empty()) throw std::invalid_argument("td_update: empty batch");
    const auto y = td_targets(batch);
    std::vector<const EnvState*> states;
    std::vector<std::size_t> taken;
    for (const auto* t : batch) {
        states.push_back(&t->state);
        taken.push_back(action_index(t->action));
    }
    diff::Graph g;
    Var q = main_->forward(g, weather_, states);
    Var q_taken = diff::gather_cols(q, taken, 1);
    Var loss = diff::mean(diff::square(diff::sub(q_taken, g.constant(q_taken.shape(), y))));
    const double value = loss.item();
    if (!std::isfinite(value)) throw diff::DivergenceError("td_update: non-finite loss");
    opt_->zero_grad();
    g.backward(loss);
    g.accumulate_into_parameters();
    opt_->step();
    ++updates_;
    return value;
}

void Dqn::sync() { target_store_.copy_values_from(main_store_); }

double Dqn::epsilon(std::size_t episode) const {
    if (cfg_.eps_decay_episodes == 0) return cfg_.eps_end;
    const double t = std::min(1.0, static_cast<double>(episode) / static_cast<double>(cfg_.eps_decay_episodes));
    return cfg_.eps_start + (cfg_.eps_end - cfg_.eps_start) * t;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("replay buffer: capacity must be >= 1");
}

void ReplayBuffer::push(Transition t) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
    if (items_.empty()) throw std::logic_error("replay buffer: sampling from an empty buffer");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &items_[pick(rng)];
    return out;
}

void ReplayBuffer::refresh(const Environment& env, std::size_t current_epoch, std::size_t max_age) {
    std::erase_if(items_, [&](const Transition& t) { return t.epoch + max_age < current_epoch; });
    for (auto& t : items_) {
        auto [fresh, next] = env.step(t.state, t.action);
        t.reward = fresh.reward;
        t.next = std::move(next);
        t.terminal = fresh.terminal;
    }
}

}  // namespace rollcast::scheduler
