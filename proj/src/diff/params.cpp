#include "rollcast/diff/params.hpp"

#include <algorithm>
#include <cmath>

namespace rollcast::diff {

double round_to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

Parameter& ParameterStore::add(const std::string& name, Shape shape, bool trainable) {
    if (index_.contains(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
    params_.emplace_back(name, shape, trainable);
    index_[name] = params_.size() - 1;
    return params_.back();
}

Parameter& ParameterStore::add_normal(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng,
                                      bool trainable) {
    Parameter& p = add(name, shape, trainable);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : p.value) v = round_to_f32(dist(rng));
    return p;
}

Parameter& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return params_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<Parameter*> ParameterStore::with_prefix(const std::string& prefix) {
    std::vector<Parameter*> out;
    for (auto& p : params_)
        if (p.name.starts_with(prefix)) out.push_back(&p);
    return out;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
    for (auto& p : params_) {
        const Parameter& src = other.get(p.name);
        if (src.shape != p.shape) throw ShapeError("copy_values_from(" + p.name + ")", p.shape, src.shape);
        p.value = src.value;
    }
}

// --- AdamW -------------------------------------------------------------------

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : cfg_(cfg) {
    for (auto* p : params)
        if (p->trainable) params_.push_back(p);
    for (auto* p : params_) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
    }
}

void AdamW::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

double AdamW::step() {
    double sq = 0.0;
    for (auto* p : params_)
        for (double g : p->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw DivergenceError("AdamW: non-finite gradient norm");
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = *params_[k];
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i] * clip;
            m[i] = round_to_f32(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g);
            v[i] = round_to_f32(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double w = p.value[i] * (1.0 - cfg_.lr * cfg_.weight_decay);
            w -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            p.value[i] = round_to_f32(w);
        }
    }
    return norm;
}

void AdamW::export_state(ParameterStore& out, const std::string& prefix) const {
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& p = *params_[k];
        auto& m = out.contains(prefix + "m." + p.name) ? out.get(prefix + "m." + p.name)
                                                        : out.add(prefix + "m." + p.name, p.shape, false);
        auto& v = out.contains(prefix + "v." + p.name) ? out.get(prefix + "v." + p.name)
                                                        : out.add(prefix + "v." + p.name, p.shape, false);
        m.value = m_[k];
        v.value = v_[k];
    }
    const std::string tname = prefix + "t";
    auto& t = out.contains(tname) ? out.get(tname) : out.add(tname, {1, 1}, false);
    t.value[0] = static_cast<double>(t_);
}

void AdamW::import_state(const ParameterStore& in, const std::string& prefix) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& p = *params_[k];
        m_[k] = in.get(prefix + "m." + p.name).value;
        v_[k] = in.get(prefix + "v." + p.name).value;
    }
    t_ = static_cast<std::int64_t>(in.get(prefix + "t").value[0]);
}

// --- gradient check ------------------------------------------------------------

GradCheckReport check_gradients(const std::function<Var(Graph&)>& loss, std::span<Parameter* const> params,
                                const GradCheckOptions& opts) {
    for (auto* p : params) p->zero_grad();
    {
        Graph g;
        Var l = loss(g);
        g.backward(l);
        g.accumulate_into_parameters();
    }
    auto eval = [&]() {
        Graph g;
        return loss(g).item();
    };

    GradCheckReport report;
    for (auto* p : params) {
        GradCheckEntry e{p->name, 0.0, 0};
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + opts.step;
            const double up = eval();
            p->value[i] = orig - opts.step;
            const double down = eval();
            p->value[i] = orig;
            const double numeric = (up - down) / (2.0 * opts.step);
            const double analytic = p->grad[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.abs_floor});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > e.max_rel_error || !std::isfinite(rel)) {
                e.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
                e.worst_index = i;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
        report.entries.push_back(e);
    }
    report.passed = report.max_rel_error <= opts.tol;
    return report;
}

}  // namespace rollcast::diff
