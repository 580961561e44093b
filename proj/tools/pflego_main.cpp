#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pflego/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Personalized federated learning lab: PFLEGO and baselines"};
  app.require_subcommand(1);

  std::string config_path, out_dir, algorithm;
  std::string dir_a, dir_b;
  std::uint64_t seed = 0;
  std::size_t rounds = 0, threads = 0;

  CLI::App* run = app.add_subcommand("run", "Run a configured experiment");
  run->add_option("--config", config_path, "Config file")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Override the seed");
  auto* rounds_opt = run->add_option("--rounds", rounds, "Override the round count");
  auto* alg_opt = run->add_option("--algorithm", algorithm,
                                  "Override the algorithm (pflego|fedavg|fedper|fedrecon)");
  auto* threads_opt = run->add_option("--threads", threads, "Worker threads");
  run->add_option("--out", out_dir,
                  "Output directory (fresh; default runs/<algorithm>-seed<S>-<time>)");

  CLI::App* compare = app.add_subcommand("compare", "Compare two finished runs");
  compare->add_option("dir_a", dir_a, "First run directory")->required();
  compare->add_option("dir_b", dir_b, "Second run directory")->required();

  CLI::App* verify = app.add_subcommand("verify",
                                        "Run the unbiasedness and oracle suites");
  verify->add_option("--config", config_path, "Config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      pflego::CliOverrides overrides;
      if (seed_opt->count()) overrides.seed = seed;
      if (rounds_opt->count()) overrides.rounds = rounds;
      if (alg_opt->count()) overrides.algorithm = algorithm;
      if (threads_opt->count()) overrides.threads = threads;
      return pflego::run_command(config_path, overrides, out_dir);
    }
    if (compare->parsed()) {
      return pflego::compare_command(dir_a, dir_b);
    }
    if (verify->parsed()) {
      return pflego::verify_command(config_path);
    }
  } catch (const pflego::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
