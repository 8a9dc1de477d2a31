#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

#include <omp.h>

#include "rollcast/binio.hpp"
#include "rollcast/diff/kernels.hpp"
#include "rollcast/pipeline.hpp"

namespace rollcast::pipeline {

namespace {

std::ostream& logger(const CommandOptions& o) { return o.log ? *o.log : std::cerr; }

void ensure_out_dir(const RunConfig& c) {
    std::error_code ec;
    std::filesystem::create_directories(c.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + c.out_dir + ": " + ec.message());
}

std::filesystem::path require_file(const std::filesystem::path& p, const std::string& what) {
    if (!std::filesystem::exists(p)) throw IoError(what + " not found: " + p.string());
    return p;
}

std::string join(std::span<const std::int64_t> xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ";" : "") + std::to_string(xs[i]);
    return s;
}

std::string join(std::span<const double> xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ";" : "") + fmt(xs[i]);
    return s;
}

double resolve_omega(const RunConfig& c, const model::ForecastModel& m, const gridio::Dataset& d,
                     const metrics::WeightTable& w) {
    return c.omega ? *c.omega : scheduler::auto_omega(m, d, w);
}

struct LoadedDqn {
    std::unique_ptr<scheduler::Dqn> dqn;
    std::optional<double> omega;
};

LoadedDqn load_dqn(const RunConfig& c, const model::ForecastModel& m, const std::filesystem::path& path) {
    LoadedDqn out;
    out.dqn = std::make_unique<scheduler::Dqn>(scheduler::model_embedding(m), c.model.intervals(), c.dqn, c.seed);
    diff::ParameterStore loaded;
    diff::load_checkpoint(require_file(path, "scheduler checkpoint"), loaded);
    for (auto* p : out.dqn->main_params().all()) {
        if (!loaded.contains(p->name)) throw diff::CheckpointError("missing tensor '" + p->name + "' in " + path.string());
        const auto& src = loaded.get(p->name);
        if (src.shape != p->shape) throw diff::CheckpointError("shape mismatch for '" + p->name + "'");
        p->value = src.value;
    }
    out.dqn->sync();
    if (loaded.contains("meta.omega")) out.omega = loaded.get("meta.omega").value[0];
    return out;
}

std::filesystem::path default_model_checkpoint(const RunConfig& c, const CommandOptions& o) {
    if (!o.checkpoint.empty()) return o.checkpoint;
    if (std::filesystem::exists(c.out("finetune.ckpt"))) return c.out("finetune.ckpt");
    return c.out("pretrain.ckpt");
}

}  // namespace

void apply_numerics(const NumericsConfig& n) {
    diff::kernels::set_parallel(n.parallel_kernels);
    if (n.threads > 0) omp_set_num_threads(n.threads);
}

int exit_code_for(const std::exception_ptr& e, std::ostream& err) {
    try {
        std::rethrow_exception(e);
    } catch (const ConfigError& x) {
        err << "config error: " << x.what() << '\n';
        return exit_config;
    } catch (const diff::DivergenceError& x) {
        err << "numeric divergence: " << x.what() << '\n';
        return exit_divergence;
    } catch (const IoError& x) {
        err << "i/o error: " << x.what() << '\n';
        return exit_io;
    } catch (const diff::CheckpointError& x) {
        err << "i/o error: " << x.what() << '\n';
        return exit_io;
    } catch (const binio::ParseError& x) {
        err << "i/o error: " << x.what() << '\n';
        return exit_io;
    } catch (const std::filesystem::filesystem_error& x) {
        err << "i/o error: " << x.what() << '\n';
        return exit_io;
    } catch (const nlohmann::json::exception& x) {
        err << "config error: " << x.what() << '\n';
        return exit_config;
    } catch (const std::invalid_argument& x) {
        err << "invalid argument: " << x.what() << '\n';
        return exit_config;
    } catch (const std::out_of_range& x) {
        err << "invalid argument: " << x.what() << '\n';
        return exit_config;
    } catch (const std::exception& x) {
        err << "error: " << x.what() << '\n';
        return 1;
    }
}

gridio::Dataset load_dataset(const RunConfig& c) {
    return gridio::read_grid_file(require_file(c.data_file(), "grid file"));
}

model::ForecastModel load_model(const RunConfig& c, const gridio::GridSpec& spec, const std::filesystem::path& path) {
    model::ForecastModel m(spec, c.model, c.seed);
    diff::ParameterStore loaded;
    diff::load_checkpoint(require_file(path, "model checkpoint"), loaded);
    for (auto* p : m.params().all()) {
        if (!loaded.contains(p->name)) throw diff::CheckpointError("missing tensor '" + p->name + "' in " + path.string());
        const auto& src = loaded.get(p->name);
        if (src.shape != p->shape)
            throw diff::CheckpointError("shape mismatch for '" + p->name + "': checkpoint " + src.shape.str() +
                                        ", model " + p->shape.str());
        p->value = src.value;
    }
    return m;
}

std::vector<std::size_t> test_init_frames(const gridio::Dataset& d, std::int64_t lead, std::size_t max_count) {
    const auto all = model::admissible_frames(d, gridio::Split::test, lead);
    if (all.empty()) throw std::invalid_argument("test split too short for a " + std::to_string(lead) + "h lead");
    if (max_count == 0 || all.size() <= max_count) return all;
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < max_count; ++k) out.push_back(all[k * all.size() / max_count]);
    return out;
}

std::vector<EvalRow> evaluate_leads(const scheduler::Environment& env, const metrics::Climatology& clim,
                                    const scheduler::Chooser& choose, std::span<const std::int64_t> leads,
                                    std::size_t max_init_times) {
    const auto& d = env.data();
    const auto& spec = *d.spec;
    std::vector<EvalRow> rows;
    for (auto lead : leads) {
        const auto frames = test_init_frames(d, lead, max_init_times);
        const std::size_t V = spec.num_vars;
        std::vector<double> rmse_v(V, 0.0), acc_v(V, 0.0);
        double rmse_all = 0.0, acc_all = 0.0;
        for (auto k : frames) {
            const scheduler::EpisodeSpec es{d.frames[k].timestamp_hours, lead};
            const auto tr = scheduler::run_episode(env, es, choose);
            const auto& truth = d.at_time(es.t0_hours + lead);
            const auto& pred = *tr.final_state;
            const auto& c = clim.lookup(truth.timestamp_hours);
            rmse_all += tr.final_rmse;
            double acc_sum = 0.0;
            for (std::size_t v = 0; v < V; ++v) {
                rmse_v[v] += tr.final_rmse_per_var[v];
                const double a = metrics::acc_variable(pred.values, truth.values, c, spec, env.weights(), v);
                acc_v[v] += a;
                acc_sum += a;
            }
            acc_all += acc_sum / static_cast<double>(V);
        }
        const double n = static_cast<double>(frames.size());
        for (std::size_t v = 0; v < V; ++v)
            rows.push_back({lead, d.variable_names.at(v), rmse_v[v] / n, acc_v[v] / n, frames.size()});
        rows.push_back({lead, "all", rmse_all / n, acc_all / n, frames.size()});
    }
    return rows;
}

void cmd_gen_data(const RunConfig& c, const CommandOptions& o) {
    ensure_out_dir(c);
    const auto spec = gridio::GridSpec::equirectangular(c.data.num_vars, c.data.lat_points, c.data.lon_points,
                                                        c.data.base_step_hours);
    auto d = gridio::generate_synthetic(spec, c.data.num_steps, c.seed, c.data.regime);
    d.provenance["rollcast_version"] = kVersion;
    d.provenance["config_hash"] = provenance_line(c).substr(2);
    const auto path = c.data_file();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    gridio::write_grid_file(path, d);
    logger(o) << "wrote " << path.string() << " (" << d.size() << " frames, " << spec.num_vars << "x" << spec.lat_points
              << "x" << spec.lon_points << ")\n";
}

void cmd_pretrain(const RunConfig& c, const CommandOptions& o) {
    ensure_out_dir(c);
    apply_numerics(c.numerics);
    const auto d = load_dataset(c);
    model::ForecastModel m(*d.spec, c.model, c.seed);
    m.fit_normalizer(d);
    const auto w = metrics::lat_weights(*d.spec);
    model::Pretrainer tr(m, d, c.pretrain, w);
    const auto ckpt = c.out("pretrain.ckpt");
    if (o.resume) {
        tr.load(require_file(ckpt, "checkpoint to resume from"));
        logger(o) << "resumed at step " << tr.steps_done() << '\n';
    }
    const std::string prov = provenance_line(c);
    CsvWriter log(c.out("pretrain_log.csv"), prov, {"step", "l_delta", "aux1", "aux2", "total", "lr", "grad_norm"},
                  o.resume);
    const auto start = std::chrono::steady_clock::now();
    while (tr.steps_done() < c.pretrain.steps) {
        const auto st = tr.step();
        if (st.step % c.log_every == 0 || st.step == c.pretrain.steps || st.step == 1) {
            log.row({std::to_string(st.step), fmt(st.l_delta), fmt(st.aux1), fmt(st.aux2), fmt(st.total), fmt(st.lr),
                     fmt(st.grad_norm)});
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            logger(o) << "step " << st.step << "/" << c.pretrain.steps << " L_delta " << fmt(st.l_delta) << " total "
                      << fmt(st.total) << " (" << fmt(secs) << "s)\n";
        }
        if (c.checkpoint_every && st.step % c.checkpoint_every == 0) tr.save(ckpt);
    }
    log.flush();
    tr.save(ckpt);

    CsvWriter summary(c.out("pretrain_summary.csv"), prov,
                      {"delta_hours", "split", "model_l_delta", "persistence_l_delta", "ratio"});
    for (auto delta : c.model.intervals()) {
        const double ml = model::evaluate_l_delta(m, d, gridio::Split::val, delta, w);
        const double pl = model::persistence_l_delta(d, gridio::Split::val, delta, w);
        summary.row({std::to_string(delta), "val", fmt(ml), fmt(pl), fmt(ml / pl)});
        logger(o) << "delta " << delta << "h: L_delta " << fmt(ml) << " vs persistence " << fmt(pl) << '\n';
    }
}

void cmd_finetune(const RunConfig& c, const CommandOptions& o) {
    ensure_out_dir(c);
    apply_numerics(c.numerics);
    const auto d = load_dataset(c);
    auto m = load_model(c, *d.spec, o.checkpoint.empty() ? c.out("pretrain.ckpt") : o.checkpoint);
    const auto w = metrics::lat_weights(*d.spec);
    const double omega = resolve_omega(c, m, d, w);
    logger(o) << "omega " << fmt(omega) << '\n';
    scheduler::Environment env(scheduler::model_step(m), d, w, omega, c.model.intervals());
    scheduler::Dqn dqn(scheduler::model_embedding(m), c.model.intervals(), c.dqn, c.seed);
    scheduler::ReplayBuffer buffer(c.finetune.buffer_capacity);

    const std::string prov = provenance_line(c);
    CsvWriter log(c.out("finetune_log.csv"), prov, {"epoch", "iteration", "event", "value"});
    std::size_t td_count = 0;
    double td_sum = 0.0;
    const auto report = scheduler::adaptive_rollout_finetune(
        m, env, dqn, buffer, c.finetune, [&](const scheduler::FinetuneEvent& e) {
            static const char* names[] = {"td_loss", "sync", "rollout_loss"};
            log.row({std::to_string(e.epoch), std::to_string(e.iteration), names[e.kind], fmt(e.value)});
            if (e.kind == scheduler::FinetuneEvent::td) {
                td_sum += e.value;
                if (++td_count % 100 == 0) {
                    logger(o) << "epoch " << e.epoch << " iteration " << e.iteration + 1 << " mean TD loss "
                              << fmt(td_sum / 100.0) << '\n';
                    td_sum = 0.0;
                }
            }
        });
    log.flush();

    CsvWriter episodes(c.out("episodes.csv"), prov, {"episode", "t0_hours", "lead_hours", "intervals", "rewards", "return"});
    for (std::size_t k = 0; k < report.episodes.size(); ++k) {
        const auto& t = report.episodes[k];
        episodes.row({std::to_string(k), std::to_string(t.spec.t0_hours), std::to_string(t.spec.lead_hours),
                      join(t.intervals), join(t.rewards), fmt(t.ret)});
    }

    std::vector<const diff::Parameter*> model_params;
    for (const auto* p : std::as_const(m.params()).all()) model_params.push_back(p);
    diff::save_checkpoint(c.out("finetune.ckpt"), model_params);

    diff::ParameterStore meta;
    meta.add("meta.omega", {1, 1}, false).value[0] = omega;
    std::vector<const diff::Parameter*> dqn_params;
    for (const auto* p : std::as_const(dqn.main_params()).all()) dqn_params.push_back(p);
    for (const auto* p : std::as_const(meta).all()) dqn_params.push_back(p);
    diff::save_checkpoint(c.out("dqn.ckpt"), dqn_params);
    logger(o) << "collected " << report.transitions_collected << " transitions, " << report.syncs << " syncs, "
              << report.head_updates << " head updates\n";
}

void cmd_eval(const RunConfig& c, const CommandOptions& o) {
    ensure_out_dir(c);
    apply_numerics(c.numerics);
    const auto d = load_dataset(c);
    const auto m = load_model(c, *d.spec, default_model_checkpoint(c, o));
    const auto w = metrics::lat_weights(*d.spec);
    const auto clim = metrics::Climatology::from_training(d, c.eval.climatology_day_bin);
    scheduler::Environment env(scheduler::model_step(m), d, w, c.omega.value_or(0.0), c.model.intervals());

    LoadedDqn dqn;
    scheduler::Chooser choose;
    std::mt19937_64 rng(c.eval.random_seed);
    if (o.policy == "naive") {
        choose = [](const scheduler::EnvState&, std::span<const std::int64_t> legal) { return legal.front(); };
    } else if (o.policy == "greedy") {
        choose = [](const scheduler::EnvState&, std::span<const std::int64_t> legal) { return legal.back(); };
    } else if (o.policy == "random") {
        choose = [&rng](const scheduler::EnvState&, std::span<const std::int64_t> legal) {
            return scheduler::uniform_legal(legal, rng);
        };
    } else if (o.policy == "adaptive") {
        if (o.dqn.empty()) throw ConfigError("policy 'adaptive' needs --dqn");
        dqn = load_dqn(c, m, o.dqn);
        choose = [&](const scheduler::EnvState& s, std::span<const std::int64_t>) { return dqn.dqn->act(s, 0.0, rng); };
    } else {
        throw ConfigError("unknown policy '" + o.policy + "' (naive, greedy, random, adaptive)");
    }
    const auto rows = evaluate_leads(env, clim, choose, c.eval.leads, c.eval.max_init_times);
    CsvWriter out(c.out("eval_" + o.policy + ".csv"), provenance_line(c),
                  {"policy", "lead_hours", "variable", "rmse", "acc", "init_times"});
    for (const auto& r : rows) {
        out.row({o.policy, std::to_string(r.lead), r.variable, fmt(r.rmse), fmt(r.acc), std::to_string(r.init_times)});
        if (r.variable == "all")
            logger(o) << o.policy << " lead " << r.lead << "h: RMSE " << fmt(r.rmse) << " ACC " << fmt(r.acc) << '\n';
    }
}

void cmd_compare_rollouts(const RunConfig& c, const CommandOptions& o) {
    ensure_out_dir(c);
    apply_numerics(c.numerics);
    const auto d = load_dataset(c);
    const auto m = load_model(c, *d.spec, default_model_checkpoint(c, o));
    const auto w = metrics::lat_weights(*d.spec);
    LoadedDqn dqn;
    if (!o.dqn.empty()) dqn = load_dqn(c, m, o.dqn);
    const double omega = c.omega ? *c.omega : dqn.omega ? *dqn.omega : scheduler::auto_omega(m, d, w);
    scheduler::Environment env(scheduler::model_step(m), d, w, omega, c.model.intervals());
    const auto& acts = env.actions();
    const std::size_t V = d.spec->num_vars;

    const std::string prov = provenance_line(c);
    std::vector<std::string> header = {"policy", "lead_hours", "episodes"};
    for (const auto& name : d.variable_names) header.push_back("rmse_" + name);
    for (const char* h : {"rmse", "mean_return", "return_se", "mean_steps"}) header.push_back(h);
    CsvWriter report(c.out("compare.csv"), prov, header);
    CsvWriter per_episode(c.out("compare_episodes.csv"), prov,
                          {"policy", "lead_hours", "episode", "t0_hours", "intervals", "final_rmse", "return"});

    std::vector<std::string> policies = {"naive", "greedy", "random"};
    if (dqn.dqn) policies.push_back("adaptive");
    std::mt19937_64 rng(c.eval.random_seed);
    for (auto lead : c.eval.compare_leads) {
        const auto frames = test_init_frames(d, lead, c.eval.compare_episodes);
        for (const auto& policy : policies) {
            std::vector<double> rmse_v(V, 0.0), returns;
            double rmse = 0.0, steps = 0.0;
            for (std::size_t k = 0; k < frames.size(); ++k) {
                const scheduler::EpisodeSpec es{d.frames[frames[k]].timestamp_hours, lead};
                scheduler::Trajectory t;
                if (policy == "naive")
                    t = scheduler::run_plan(env, es, scheduler::policy_naive(lead, acts.front()));
                else if (policy == "greedy")
                    t = scheduler::run_plan(env, es, scheduler::policy_greedy(lead, acts));
                else if (policy == "random")
                    t = scheduler::run_plan(env, es, scheduler::policy_random(lead, acts, c.eval.random_seed + k));
                else
                    t = scheduler::run_episode(env, es, [&](const scheduler::EnvState& s, std::span<const std::int64_t>) {
                        return dqn.dqn->act(s, 0.0, rng);
                    });
                for (std::size_t v = 0; v < V; ++v) rmse_v[v] += t.final_rmse_per_var[v];
                rmse += t.final_rmse;
                steps += static_cast<double>(t.intervals.size());
                returns.push_back(t.ret);
                per_episode.row({policy, std::to_string(lead), std::to_string(k), std::to_string(es.t0_hours),
                                 join(t.intervals), fmt(t.final_rmse), fmt(t.ret)});
            }
            const double n = static_cast<double>(frames.size());
            double mean = 0.0, var = 0.0;
            for (double r : returns) mean += r / n;
            for (double r : returns) var += (r - mean) * (r - mean);
            const double se = n > 1 ? std::sqrt(var / (n - 1) / n) : 0.0;
            std::vector<std::string> row = {policy, std::to_string(lead), std::to_string(frames.size())};
            for (double x : rmse_v) row.push_back(fmt(x / n));
            for (double x : {rmse / n, mean, se, steps / n}) row.push_back(fmt(x));
            report.row(row);
            logger(o) << policy << " lead " << lead << "h: RMSE " << fmt(rmse / n) << " return " << fmt(mean) << " +- "
                      << fmt(se) << " steps " << fmt(steps / n) << '\n';
        }
    }
}

void cmd_pe_viz(const RunConfig& c, const CommandOptions& o) {
    ensure_out_dir(c);
    const auto ring = encoding::ring_pe_2d(o.pe_h, o.pe_w, o.pe_dim);
    const auto conv = encoding::conventional_pe(o.pe_h * o.pe_w, o.pe_dim);
    const std::string prov = provenance_line(c);
    for (const auto& [name, table] : {std::pair{"pe_ring.csv", &ring}, std::pair{"pe_conventional.csv", &conv}}) {
        const auto sim = encoding::similarity_matrix(*table);
        const std::size_t L = table->rows;
        std::vector<std::string> header;
        for (std::size_t k = 0; k < L; ++k) header.push_back("t" + std::to_string(k));
        CsvWriter out(c.out(name), prov, header);
        for (std::size_t a = 0; a < L; ++a) {
            std::vector<std::string> row;
            for (std::size_t b = 0; b < L; ++b) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.17g", sim[a * L + b]);
                row.emplace_back(buf);
            }
            out.row(row);
        }
        logger(o) << "wrote " << c.out(name).string() << " (" << L << "x" << L << ")\n";
    }
}

}  // namespace rollcast::pipeline
