#include "contagion/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace contagion;

int main(int argc, char** argv) {
  CLI::App app{"Portfolio optimization under hidden regimes and contagious distress"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  RunOptions run;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--out", run.output, "output directory, overrides the configuration");
  auto* seed_opt = app.add_option("--seed", seed, "Monte Carlo seed, overrides the configuration");
  app.add_option("--threads", run.threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);

  auto* solve = app.add_subcommand("solve", "solve the recursive HJB system and write value surfaces");
  auto* sweep = app.add_subcommand("sweep", "re-solve over a parameter and tabulate strategies at t = 0");
  auto* verify = app.add_subcommand("verify", "check the PDE value against both Monte Carlo estimators");
  auto* demo = app.add_subcommand("filter-demo", "simulate one market path and its filters");

  std::string parameter;
  std::vector<double> values;
  sweep->add_option("--parameter", parameter, "gamma, rate, horizon, drift.i.k, intensity.i.k or volatility.i");
  sweep->add_option("--values", values, "values of the swept parameter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(Status::config_error);
  }
  if (*seed_opt) run.seed = seed;

  try {
    ExperimentConfig config = load_experiment(config_path);
    if (!parameter.empty() || !values.empty()) {
      SweepSettings s = config.sweep.value_or(SweepSettings{});
      if (!parameter.empty()) s.parameter = parameter;
      if (!values.empty()) s.values = values;
      config.sweep = s;
    }
    Status status = Status::ok;
    if (*solve) status = cmd_solve(config, run, std::cout);
    if (*sweep) status = cmd_sweep(config, run, std::cout);
    if (*verify) status = cmd_verify(config, run, std::cout);
    if (*demo) status = cmd_filter_demo(config, run, std::cout);
    return static_cast<int>(status);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return static_cast<int>(Status::config_error);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return static_cast<int>(Status::numerical_failure);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(Status::numerical_failure);
  }
}
