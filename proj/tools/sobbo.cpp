// sobbo: SOBBO experiment pipeline front end.
//
//   sobbo generate|train|evaluate|optimize|ablate --config <file>
//         [--force] [--workers N] [--seed S]
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.
// SOBBO_OUTPUT_ROOT, when set, roots relative output directories.

#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "sobbo/experiment.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  bool force = false;
  std::size_t workers = 1;
  std::int64_t seed_override = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "Experiment config JSON")->required();
  cmd->add_flag("--force", o.force, "Overwrite existing outputs");
  cmd->add_option("--workers", o.workers, "Worker threads for repeats/grid points");
  cmd->add_option("--seed", o.seed_override, "Override the config's master_seed");
}

sobbo::ExperimentConfig load(const CommonOpts& o) {
  sobbo::ExperimentConfig cfg = sobbo::load_experiment_config(o.config_path);
  if (o.seed_override >= 0) cfg.master_seed = static_cast<std::uint64_t>(o.seed_override);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic offline black-box optimization experiments"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, eval_o, opt_o, abl_o;
  std::string ablate_axis;
  std::vector<double> ablate_grid;

  CLI::App* gen = app.add_subcommand("generate", "Generate offline datasets for every repeat");
  add_common(gen, gen_o);
  CLI::App* tr = app.add_subcommand("train", "Train the configured methods on every repeat");
  add_common(tr, train_o);
  CLI::App* ev = app.add_subcommand("evaluate", "Gradient-quality curves from saved checkpoints");
  add_common(ev, eval_o);
  CLI::App* op = app.add_subcommand("optimize", "Optimization table (RS/OC/ETD/DGI with R/G init)");
  add_common(op, opt_o);
  CLI::App* ab = app.add_subcommand("ablate", "Sweep one hyperparameter axis");
  add_common(ab, abl_o);
  ab->add_option("--axis", ablate_axis,
                 "balance_weight | num_paths | integration_steps | noise")
      ->required();
  ab->add_option("--grid", ablate_grid, "Grid values (default: the shipped grid per axis)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      sobbo::cmd_generate(load(gen_o), gen_o.force, gen_o.workers);
    } else if (tr->parsed()) {
      sobbo::cmd_train(load(train_o), train_o.workers);
    } else if (ev->parsed()) {
      sobbo::cmd_evaluate(load(eval_o), eval_o.workers);
    } else if (op->parsed()) {
      sobbo::cmd_optimize(load(opt_o), opt_o.workers);
    } else if (ab->parsed()) {
      sobbo::cmd_ablate(load(abl_o), ablate_axis, ablate_grid, abl_o.force, abl_o.workers);
    }
  } catch (const sobbo::numeric_error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const sobbo::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
