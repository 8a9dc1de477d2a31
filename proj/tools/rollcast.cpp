// rollcast: synthetic data generation, pre-training, scheduler fine-tuning,
// evaluation and rollout-policy comparison.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rollcast/pipeline.hpp"

namespace pl = rollcast::pipeline;

int main(int argc, char** argv) {
    CLI::App app{"Multi-interval weather forecasting with an adaptive rollout scheduler"};
    app.require_subcommand(0, 1);
    app.fallthrough();

    std::string config_file;
    std::vector<std::string> sets;
    bool print_config = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir, data_path;
    app.add_option("-c,--config", config_file, "JSON config file");
    app.add_option("--set", sets, "Override a config key, e.g. --set pretrain.steps=500")->take_all();
    app.add_flag("--print-config", print_config, "Print the resolved config and exit");
    app.add_option("--seed", seed, "Run seed");
    app.add_option("-o,--out-dir", out_dir, "Output directory");
    app.add_option("--data", data_path, "Grid file (default <out-dir>/data.arrw)");

    pl::CommandOptions opts;
    std::optional<std::size_t> steps;

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic grid dataset");
    gen->add_option("--steps", steps, "Number of time steps");

    auto* pre = app.add_subcommand("pretrain", "Pre-train the forecasting model");
    pre->add_option("--steps", steps, "Optimizer steps");
    pre->add_flag("--resume", opts.resume, "Continue from <out-dir>/pretrain.ckpt");

    auto* fine = app.add_subcommand("finetune", "Train the rollout scheduler and fine-tune the head");
    fine->add_option("--checkpoint", opts.checkpoint, "Model checkpoint (default <out-dir>/pretrain.ckpt)");

    auto* eval = app.add_subcommand("eval", "RMSE / ACC per lead time over the test split");
    eval->add_option("--checkpoint", opts.checkpoint, "Model checkpoint");
    eval->add_option("--policy", opts.policy, "naive | greedy | random | adaptive")
        ->check(CLI::IsMember({"naive", "greedy", "random", "adaptive"}));
    eval->add_option("--dqn", opts.dqn, "Scheduler checkpoint (adaptive policy)");

    auto* cmp = app.add_subcommand("compare-rollouts", "Compare rollout policies on identical episodes");
    cmp->add_option("--checkpoint", opts.checkpoint, "Model checkpoint");
    cmp->add_option("--dqn", opts.dqn, "Scheduler checkpoint; adds the adaptive policy");

    auto* pe = app.add_subcommand("pe-viz", "Write ring and sinusoidal positional-similarity matrices");
    pe->add_option("--rows", opts.pe_h, "Token rows")->check(CLI::PositiveNumber);
    pe->add_option("--cols", opts.pe_w, "Token columns")->check(CLI::PositiveNumber);
    pe->add_option("--dim", opts.pe_dim, "Embedding width (multiple of 4)")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : pl::exit_config;
    }
    if (app.get_subcommands().empty() && !print_config) {
        std::cerr << app.help() << "a subcommand is required\n";
        return pl::exit_config;
    }

    try {
        if (seed) sets.push_back("seed=" + std::to_string(*seed));
        if (out_dir) sets.push_back("out_dir=\"" + *out_dir + "\"");
        if (data_path) sets.push_back("data_path=\"" + *data_path + "\"");
        if (steps) {
            if (gen->parsed()) sets.push_back("data.num_steps=" + std::to_string(*steps));
            if (pre->parsed()) sets.push_back("pretrain.steps=" + std::to_string(*steps));
        }
        std::optional<std::filesystem::path> file;
        if (!config_file.empty()) file = config_file;
        const auto cfg = pl::load_config(file, sets);
        if (print_config) {
            std::cout << pl::to_json(cfg).dump(2) << '\n';
            return pl::exit_ok;
        }
        opts.log = &std::cerr;
        if (gen->parsed()) pl::cmd_gen_data(cfg, opts);
        if (pre->parsed()) pl::cmd_pretrain(cfg, opts);
        if (fine->parsed()) pl::cmd_finetune(cfg, opts);
        if (eval->parsed()) pl::cmd_eval(cfg, opts);
        if (cmp->parsed()) pl::cmd_compare_rollouts(cfg, opts);
        if (pe->parsed()) pl::cmd_pe_viz(cfg, opts);
    } catch (...) {
        return pl::exit_code_for(std::current_exception(), std::cerr);
    }
    return pl::exit_ok;
}
