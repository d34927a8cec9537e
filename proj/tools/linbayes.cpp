// linbayes: staged MAP / low-rank posterior pipeline.
#include "linbayes/pipeline/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed_data, seed_sample, seed_lanczos;
  bool verbose = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory (overrides output.directory)");
  app->add_option("--seed-data", c.seed_data, "noise seed for synthetic data");
  app->add_option("--seed-sample", c.seed_sample, "seed for prior and posterior samples");
  app->add_option("--seed-lanczos", c.seed_lanczos, "seed for the Lanczos start vector");
  app->add_flag("-v,--verbose", c.verbose, "log progress to stderr");
}

linbayes::RunOptions to_options(const Common& c) {
  linbayes::RunOptions o;
  o.config_path = c.config;
  if (!c.out.empty())
    o.out = c.out;
  o.seed_data = c.seed_data;
  o.seed_sample = c.seed_sample;
  o.seed_lanczos = c.seed_lanczos;
  o.verbose = c.verbose;
  return o;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matrix-free linearized Bayesian inversion: MAP point, low-rank posterior, variance, samples"};
  app.require_subcommand(1);

  Common run_opts;
  std::vector<std::string> stage_names;
  auto* run = app.add_subcommand("run", "run stages (all of them by default)");
  add_common(run, run_opts);
  run->add_option("--stage", stage_names, "stage to run; repeatable")
      ->check(CLI::IsMember({"sample-prior", "map", "spectrum", "variance", "sample-posterior"}));

  struct StageCommand {
    linbayes::Stage stage;
    CLI::App* app;
    Common opts;
    std::optional<linbayes::Index> count;
  };
  std::vector<std::unique_ptr<StageCommand>> stage_cmds;
  for (linbayes::Stage s : linbayes::all_stages()) {
    auto cmd = std::make_unique<StageCommand>();
    cmd->stage = s;
    cmd->app = app.add_subcommand(linbayes::stage_name(s), std::string("run only the ") + linbayes::stage_name(s) + " stage");
    add_common(cmd->app, cmd->opts);
    if (s == linbayes::Stage::sample_prior || s == linbayes::Stage::sample_posterior) {
      cmd->app->add_option("--count", cmd->count, "number of samples")->check(CLI::NonNegativeNumber);
      cmd->app->add_option("--seed", cmd->opts.seed_sample, "sample seed (same as --seed-sample)");
    }
    stage_cmds.push_back(std::move(cmd));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : linbayes::exit_code::config;
  }

  linbayes::RunOptions opts;
  if (run->parsed()) {
    opts = to_options(run_opts);
    for (const auto& n : stage_names)
      opts.stages.push_back(*linbayes::parse_stage(n));
  } else {
    for (const auto& cmd : stage_cmds)
      if (cmd->app->parsed()) {
        opts = to_options(cmd->opts);
        opts.stages = {cmd->stage};
        opts.count = cmd->count;
      }
  }

  const linbayes::RunResult r = linbayes::run_pipeline(opts);
  if (r.exit_code != 0) {
    std::cerr << "linbayes: error: " << r.message << "\n";
    return r.exit_code;
  }
  if (opts.verbose)
    std::cerr << "linbayes: artifacts in " << r.out_dir.string() << "\n";
  return 0;
}
