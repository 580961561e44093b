#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pflego/config.hpp"
#include "pflego/errors.hpp"
#include "pflego/gradient_check.hpp"
#include "pflego/orchestrator.hpp"
#include "pflego/report.hpp"

namespace pflego {

inline constexpr const char* kArtifactVersion = "0.1.0";

namespace detail {

inline nlohmann::json config_echo(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["experiment"]["seed"] = cfg.seed;
  j["experiment"]["rounds"] = cfg.rounds;
  j["experiment"]["eval_every"] = cfg.eval_every;
  j["experiment"]["threads"] = cfg.threads;
  j["algorithm"]["name"] = algorithm_name(cfg.algorithm.algorithm);
  j["algorithm"]["tau"] = cfg.algorithm.tau;
  j["algorithm"]["beta"] = cfg.algorithm.beta;
  j["algorithm"]["rho"] = cfg.algorithm.schedule.rho0;
  j["algorithm"]["rho_schedule"] =
      cfg.algorithm.schedule.mode == RateMode::Constant ? "constant" : "robbins_monro";
  j["algorithm"]["server_optimizer"] =
      cfg.algorithm.server_mode == ServerMode::Adam ? "adam" : "sgd";
  j["algorithm"]["alpha_in_head_update"] = cfg.algorithm.alpha_in_head_update;
  if (cfg.participation.mode == ParticipationMode::FixedCount) {
    j["participation"]["mode"] = "fixed_count";
    j["participation"]["rate"] = cfg.participation.r;
  } else {
    j["participation"]["mode"] = "binomial";
    j["participation"]["probability"] = cfg.participation.probability;
  }
  switch (cfg.personalization.degree) {
    case Personalization::High: j["personalization"]["degree"] = "high"; break;
    case Personalization::Medium: j["personalization"]["degree"] = "medium"; break;
    case Personalization::None: j["personalization"]["degree"] = "none"; break;
  }
  j["model"]["hidden"] = cfg.hidden_dims;
  j["data"]["clients"] = cfg.clients;
  j["data"]["train_fraction"] = cfg.train_fraction;
  if (cfg.data.synthetic) {
    j["data"]["source"] = "synthetic";
    j["data"]["classes"] = cfg.data.synthetic->classes;
    j["data"]["input_dim"] = cfg.data.synthetic->input_dim;
    j["data"]["samples_per_class"] = cfg.data.synthetic->samples_per_class;
    j["data"]["sigma"] = cfg.data.synthetic->cluster_spread;
  } else {
    j["data"]["source"] = "idx";
    j["data"]["images"] = cfg.data.idx_images;
    j["data"]["labels"] = cfg.data.idx_labels;
  }
  return j;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline nlohmann::json summary_from_reports(const ExperimentConfig& cfg,
                                           const std::vector<RoundReport>& reports) {
  std::vector<double> losses, accuracies;
  for (const auto& r : reports) {
    losses.push_back(r.global_train_loss);
    accuracies.push_back(r.mean_test_accuracy);
  }
  const MetricSummary loss = summarize_final_window(losses);
  const MetricSummary acc = summarize_final_window(accuracies);

  nlohmann::json j;
  j["algorithm"] = algorithm_name(cfg.algorithm.algorithm);
  j["seed"] = cfg.seed;
  j["rounds"] = cfg.rounds;
  j["evaluated_rounds"] = reports.size();
  j["final_window"]["size"] = std::min<std::size_t>(10, reports.size());
  j["final_window"]["global_train_loss"]["mean"] = loss.mean;
  j["final_window"]["global_train_loss"]["stddev"] = loss.stddev;
  j["final_window"]["mean_test_accuracy"]["mean"] = acc.mean;
  j["final_window"]["mean_test_accuracy"]["stddev"] = acc.stddev;
  return j;
}

}  // namespace detail

// Executes a configured experiment and persists manifest.json (written
// before the run), rounds.csv and summary.json into a fresh directory. An
// empty out_dir picks runs/<algorithm>-seed<S>-<timestamp>.
inline int run_command(const std::string& config_path, const CliOverrides& overrides,
                       std::string out_dir, std::ostream& log = std::cout) {
  const ExperimentConfig cfg = parse_config(config_path, overrides);

  if (out_dir.empty()) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::gmtime(&t));
    out_dir = std::string("runs/") + detail::algorithm_name(cfg.algorithm.algorithm) +
              "-seed" + std::to_string(cfg.seed) + "-" + stamp;
  }
  const std::filesystem::path dir(out_dir);
  if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir)) {
    throw UsageError("output directory " + out_dir +
                     " already contains files; run directories are never reused");
  }
  std::filesystem::create_directories(dir);

  nlohmann::json manifest;
  manifest["version"] = kArtifactVersion;
  manifest["seed"] = cfg.seed;
  manifest["started_at"] = detail::timestamp_utc();
  manifest["config"] = detail::config_echo(cfg);
  manifest["outputs"]["rounds_csv"] = (dir / "rounds.csv").string();
  manifest["outputs"]["summary_json"] = (dir / "summary.json").string();
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  ExperimentRun run = run_experiment(cfg);

  detail::write_file(dir / "rounds.csv", rounds_csv(run.reports));
  detail::write_file(dir / "summary.json",
                     detail::summary_from_reports(cfg, run.reports).dump(2) + "\n");

  log << "wrote " << (dir / "rounds.csv").string() << " (" << run.reports.size()
      << " rows)\n";
  return 0;
}

// Prints final-window means, stddevs and deltas for two finished runs,
// aligned on their common evaluated rounds.
inline int compare_command(const std::string& dir_a, const std::string& dir_b,
                           std::ostream& out = std::cout) {
  const auto rows_a = parse_rounds_csv(detail::read_file(
      std::filesystem::path(dir_a) / "rounds.csv"));
  const auto rows_b = parse_rounds_csv(detail::read_file(
      std::filesystem::path(dir_b) / "rounds.csv"));

  std::vector<double> loss_a, loss_b, acc_a, acc_b;
  std::size_t common = 0;
  std::size_t ia = 0, ib = 0;
  while (ia < rows_a.size() && ib < rows_b.size()) {
    if (rows_a[ia].round < rows_b[ib].round) {
      ++ia;
    } else if (rows_b[ib].round < rows_a[ia].round) {
      ++ib;
    } else {
      loss_a.push_back(rows_a[ia].global_train_loss);
      loss_b.push_back(rows_b[ib].global_train_loss);
      acc_a.push_back(rows_a[ia].mean_test_accuracy);
      acc_b.push_back(rows_b[ib].mean_test_accuracy);
      ++common;
      ++ia;
      ++ib;
    }
  }
  if (common == 0) throw UsageError("compare: the runs share no evaluated rounds");
  if (common != rows_a.size() || common != rows_b.size()) {
    out << "note: cadences differ; aligned on " << common << " common rounds\n";
  }

  const MetricSummary la = summarize_final_window(loss_a);
  const MetricSummary lb = summarize_final_window(loss_b);
  const MetricSummary aa = summarize_final_window(acc_a);
  const MetricSummary ab = summarize_final_window(acc_b);

  out << "metric                        A mean    A stddev    B mean    B stddev    "
         "delta (B-A)\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-26s %9.5f %11.5f %9.5f %11.5f %14.5f\n",
                "global_train_loss", la.mean, la.stddev, lb.mean, lb.stddev,
                lb.mean - la.mean);
  out << line;
  std::snprintf(line, sizeof(line), "%-26s %9.5f %11.5f %9.5f %11.5f %14.5f\n",
                "mean_test_accuracy", aa.mean, aa.stddev, ab.mean, ab.stddev,
                ab.mean - aa.mean);
  out << line;
  return 0;
}

// Runs the analytic verification battery on the configured federation:
// gradient correctness against finite differences, exhaustive (or Monte
// Carlo) unbiasedness of the assembled stochastic gradient, and trajectory
// equivalence between full-participation pure-SGD rounds and centralized
// full-gradient descent.
inline int verify_command(const std::string& config_path, std::ostream& out = std::cout) {
  ExperimentConfig cfg = parse_config(config_path);
  const auto class_samples = cfg.data.load();
  PersonalizationSpec pers = cfg.personalization;
  pers.total_classes = class_samples.size();
  auto datasets = build_federation(class_samples, pers, cfg.clients,
                                   cfg.train_fraction, cfg.seed);

  bool all_pass = true;
  auto report = [&](const std::string& name, bool pass, const std::string& detail) {
    out << (pass ? "PASS" : "FAIL") << "  " << name << "  (" << detail << ")\n";
    all_pass = all_pass && pass;
  };

  // exact gradients vs central differences on the first client
  {
    ExperimentConfig probe = cfg;
    probe.algorithm.algorithm = Algorithm::Pflego;
    FederationState state = init_federation(probe, class_samples.front().cols(),
                                            class_samples.size());
    state.ensure_head(datasets.front());
    const ClientDataset& d = datasets.front();
    JointGradient joint = joint_gradient(state.model.theta, state.model.backbone,
                                         state.model.head(d.client_id), d);
    auto theta_loss = [&](const ParamVector& p) {
      return client_loss(p, state.model.backbone, state.model.head(d.client_id), d);
    };
    auto head_loss = [&](const ParamVector& w) {
      return client_loss(state.model.theta, state.model.backbone, w, d);
    };
    // coordinates below the central-difference noise floor pass absolutely
    const double noise_floor = 1e-9;
    const double err_theta = finite_difference_check(theta_loss, state.model.theta,
                                                     joint.theta, 1e-5, noise_floor);
    const double err_head = finite_difference_check(
        head_loss, state.model.head(d.client_id), joint.head, 1e-5, noise_floor);
    const double worst = std::max(err_theta, err_head);
    report("gradient finite-difference check", worst < 1e-6,
           "max relative error " + format_double(worst) +
           " above the 1e-9 absolute noise floor");
  }

  // unbiasedness of the stochastic gradient under the configured process
  {
    ExperimentConfig probe = cfg;
    probe.algorithm.algorithm = Algorithm::Pflego;
    FederationState state = init_federation(probe, class_samples.front().cols(),
                                            class_samples.size());
    for (const auto& d : datasets) state.ensure_head(d);
    ParticipationConfig part = cfg.participation;
    part.clients = datasets.size();
    auto rep = verify_unbiasedness(state.model, datasets, part);
    if (rep.exhaustive) {
      report("stochastic gradient unbiasedness (exhaustive)",
             rep.max_abs_deviation < 1e-12,
             "max deviation " + format_double(rep.max_abs_deviation));
    } else {
      report("stochastic gradient unbiasedness (Monte Carlo, " +
                 std::to_string(rep.draws) + " draws)",
             rep.max_abs_deviation < 4.0 * rep.max_standard_error,
             "max deviation " + format_double(rep.max_abs_deviation) + ", 4*SE " +
                 format_double(4.0 * rep.max_standard_error));
    }
  }

  // exact-SGD equivalence over 10 full-participation pure-SGD rounds
  {
    ExperimentConfig probe = cfg;
    probe.algorithm.algorithm = Algorithm::Pflego;
    probe.algorithm.tau = 1;
    probe.algorithm.server_mode = ServerMode::PureSgd;
    probe.algorithm.schedule = {RateMode::Constant, probe.algorithm.schedule.rho0};
    probe.algorithm.alpha_in_head_update = true;
    probe.participation.mode = ParticipationMode::FixedCount;
    probe.participation.r = datasets.size();
    probe.participation.clients = datasets.size();

    FederationState state = init_federation(probe, class_samples.front().cols(),
                                            class_samples.size());
    for (const auto& d : datasets) state.ensure_head(d);
    PersonalizedModel oracle = state.model;

    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
      run_round(state, datasets, probe);
      centralized_oracle_step(oracle, datasets, probe.algorithm.schedule.rho0);
      worst = std::max(worst, max_abs_difference(state.model.theta, oracle.theta));
      for (const auto& d : datasets) {
        worst = std::max(worst, max_abs_difference(state.model.heads.at(d.client_id),
                                                   oracle.heads.at(d.client_id)));
      }
    }
    report("exact-SGD oracle equivalence (10 rounds)", worst < 1e-12,
           "max deviation " + format_double(worst));
  }

  return all_pass ? 0 : 1;
}

}  // namespace pflego
