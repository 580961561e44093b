#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pflego/data.hpp"
#include "pflego/errors.hpp"
#include "pflego/fl.hpp"
#include "pflego/idx.hpp"
#include "pflego/model.hpp"
#include "pflego/nn.hpp"
#include "pflego/optim.hpp"

namespace pflego {

namespace detail {

// Runs fn(i) for i in [0, n) on `threads` workers. Workers take disjoint
// index strides and write only to per-index slots, so results do not depend
// on the worker count; reductions happen afterwards in index order.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

// Where the training data comes from: a synthetic spec or an IDX file pair.
struct DataSource {
  std::optional<SyntheticSpec> synthetic;
  std::string idx_images;
  std::string idx_labels;

  std::vector<Matrix> load() const {
    if (synthetic) return generate_synthetic(*synthetic);
    if (idx_images.empty() || idx_labels.empty()) {
      throw ConfigError("data source: set either synthetic parameters or IDX paths");
    }
    return load_idx(idx_images, idx_labels);
  }
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t rounds = 200;  // T
  std::size_t eval_every = 1;
  std::size_t threads = 1;
  std::size_t clients = 20;  // I
  std::vector<std::size_t> hidden_dims = {200};  // backbone layers, last is M
  double train_fraction = 0.75;
  AlgorithmConfig algorithm;
  ParticipationConfig participation;  // `clients` is copied in at build time
  PersonalizationSpec personalization;
  DataSource data;

  void validate() const {
    if (rounds < 1) throw ConfigError("experiment: rounds must be >= 1");
    if (eval_every < 1) throw ConfigError("experiment: eval_every must be >= 1");
    if (hidden_dims.empty()) throw ConfigError("experiment: need at least one backbone layer");
    algorithm.validate();
  }
};

struct RoundReport {
  std::size_t round = 0;
  double global_train_loss = 0.0;
  double mean_test_accuracy = 0.0;
  std::vector<int> participants;
  std::vector<std::int64_t> forward_passes;  // per client, this round
  double wall_time_s = 0.0;

  std::int64_t forward_passes_total() const {
    std::int64_t t = 0;
    for (auto c : forward_passes) t += c;
    return t;
  }
};

// All mutable training state: the model, the server optimizer, and the round
// counter. FedAvg keeps the classifier inside theta and leaves heads empty.
struct FederationState {
  Algorithm algorithm = Algorithm::Pflego;
  PersonalizedModel model;
  std::vector<LayerSpec> full_specs;  // backbone + classifier (FedAvg only)
  AdamState server_adam;
  std::uint64_t round = 0;  // t, number of completed rounds
  std::uint64_t seed = 0;
  std::size_t global_classes = 0;  // C

  bool uses_heads() const { return algorithm != Algorithm::FedAvg; }

  const std::vector<LayerSpec>& theta_specs() const {
    return algorithm == Algorithm::FedAvg ? full_specs : model.backbone;
  }

  // Heads are created the first time a client is touched, from a per-client
  // stream, so visit order cannot change the draw.
  void ensure_head(const ClientDataset& data) {
    if (!uses_heads()) return;
    if (model.heads.count(data.client_id)) return;
    model.heads.emplace(data.client_id,
                        init_head(data.class_ids.size(), model.feature_dim, seed,
                                  data.client_id));
  }
};

inline std::vector<LayerSpec> make_backbone_specs(std::size_t input_dim,
                                                  const std::vector<std::size_t>& hidden) {
  std::vector<LayerSpec> specs;
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    specs.push_back({in, h, Activation::ReLU, true});
    in = h;
  }
  return specs;
}

inline FederationState init_federation(const ExperimentConfig& cfg,
                                       std::size_t input_dim,
                                       std::size_t global_classes) {
  FederationState state;
  state.algorithm = cfg.algorithm.algorithm;
  state.seed = cfg.seed;
  state.global_classes = global_classes;

  std::vector<LayerSpec> backbone = make_backbone_specs(input_dim, cfg.hidden_dims);
  if (state.algorithm == Algorithm::FedAvg) {
    state.full_specs = backbone;
    state.full_specs.push_back(
        {backbone.back().out_dim, global_classes, Activation::Identity, false});
    state.model.backbone = backbone;
    state.model.feature_dim = backbone.back().out_dim;
    state.model.theta = init_backbone_theta(state.full_specs, cfg.seed);
  } else {
    state.model = make_model(backbone, cfg.seed);
  }
  state.server_adam = AdamState::init(state.model.theta, cfg.algorithm.schedule.rho0);
  return state;
}

struct EvaluationResult {
  double global_train_loss = 0.0;
  double mean_test_accuracy = 0.0;
};

namespace detail {

inline std::size_t argmax_row(const Matrix& m, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < m.cols(); ++j) {
    if (m(row, j) > m(row, best)) best = j;  // ties keep the lowest index
  }
  return best;
}

struct ClientMetrics {
  double train_loss = 0.0;
  double test_accuracy = 0.0;
};

inline ClientMetrics evaluate_client(const FederationState& state,
                                     const ClientDataset& data) {
  ClientMetrics m;
  if (state.algorithm == Algorithm::FedAvg) {
    Matrix train_logits =
        forward_features(state.model.theta, state.full_specs, data.train.inputs);
    m.train_loss =
        softmax_cross_entropy(train_logits, detail::global_labels(data, data.train)).loss;
    Matrix test_logits =
        forward_features(state.model.theta, state.full_specs, data.test.inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_logits.rows(); ++i) {
      const int truth = data.class_ids[static_cast<std::size_t>(data.test.labels[i])];
      if (argmax_row(test_logits, i) == static_cast<std::size_t>(truth)) ++correct;
    }
    m.test_accuracy =
        static_cast<double>(correct) / static_cast<double>(test_logits.rows());
    return m;
  }

  const ParamVector& head = state.model.head(data.client_id);
  m.train_loss = client_loss(state.model.theta, state.model.backbone, head, data);
  Matrix features =
      forward_features(state.model.theta, state.model.backbone, data.test.inputs);
  Matrix logits = head_logits(features, head);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (argmax_row(logits, i) == static_cast<std::size_t>(data.test.labels[i])) {
      ++correct;
    }
  }
  m.test_accuracy = static_cast<double>(correct) / static_cast<double>(logits.rows());
  return m;
}

}  // namespace detail

// Global training loss over ALL clients (not just the round's participants)
// plus the unweighted mean of per-client test accuracy. Lazily initializes
// heads for clients that were never visited.
inline EvaluationResult evaluate(FederationState& state,
                                 const std::vector<ClientDataset>& datasets,
                                 std::size_t threads = 1) {
  if (datasets.empty()) throw InputError("evaluate: empty federation");
  for (const auto& data : datasets) state.ensure_head(data);

  std::vector<detail::ClientMetrics> metrics(datasets.size());
  const FederationState& frozen = state;
  detail::parallel_for(datasets.size(), threads, [&](std::size_t i) {
    metrics[i] = detail::evaluate_client(frozen, datasets[i]);
  });

  EvaluationResult result;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    result.global_train_loss += datasets[i].alpha_i * metrics[i].train_loss;
    result.mean_test_accuracy += metrics[i].test_accuracy;
  }
  result.mean_test_accuracy /= static_cast<double>(datasets.size());
  return result;
}

// Advances the federation by one round: sample participants, run their
// client updates (possibly in parallel), aggregate in ascending client-id
// order. Returns the participant set. An empty Binomial draw advances t but
// changes nothing else.
inline std::vector<int> run_round(FederationState& state,
                                  const std::vector<ClientDataset>& datasets,
                                  const ExperimentConfig& cfg,
                                  ForwardPassCounter* fp = nullptr,
                                  std::size_t threads = 1) {
  state.round += 1;
  ParticipationConfig part = cfg.participation;
  part.clients = datasets.size();

  Rng part_rng(derive_seed(state.seed, Stream::Participation, state.round));
  const std::vector<int> participants = sample_participants(part, part_rng);
  if (participants.empty()) return participants;

  RoundContext ctx;
  ctx.rho_t = cfg.algorithm.schedule.at(state.round);
  ctx.upscale = part.upscale();

  std::vector<double> alphas(datasets.size(), 0.0);
  for (const auto& d : datasets) {
    alphas[static_cast<std::size_t>(d.client_id)] = d.alpha_i;
  }

  for (int id : participants) state.ensure_head(datasets[static_cast<std::size_t>(id)]);

  std::vector<ClientRoundResult> results(participants.size());
  const FederationState& frozen = state;
  detail::parallel_for(participants.size(), threads, [&](std::size_t k) {
    const ClientDataset& data = datasets[static_cast<std::size_t>(participants[k])];
    switch (cfg.algorithm.algorithm) {
      case Algorithm::Pflego:
        results[k] = pflego_client_round(frozen.model, data,
                                         frozen.model.head(data.client_id),
                                         cfg.algorithm, ctx, fp);
        break;
      case Algorithm::FedAvg:
        results[k] = fedavg_client_round(frozen.model.theta, frozen.full_specs, data,
                                         cfg.algorithm, fp);
        break;
      case Algorithm::FedPer:
        results[k] = fedper_client_round(frozen.model, data,
                                         frozen.model.head(data.client_id),
                                         cfg.algorithm, fp);
        break;
      case Algorithm::FedRecon:
        results[k] = fedrecon_client_round(frozen.model, data,
                                           frozen.model.head(data.client_id),
                                           cfg.algorithm, fp);
        break;
    }
  });

  std::vector<std::pair<int, ParamVector>> returns;
  returns.reserve(participants.size());
  for (std::size_t k = 0; k < participants.size(); ++k) {
    returns.emplace_back(participants[k], std::move(results[k].theta_return));
    if (state.uses_heads()) {
      state.model.heads[participants[k]] = std::move(results[k].head);
    }
  }

  switch (cfg.algorithm.algorithm) {
    case Algorithm::Pflego:
    case Algorithm::FedRecon:
      state.model.theta = pflego_server_aggregate(state.model.theta, returns, alphas,
                                                  cfg.algorithm, ctx,
                                                  &state.server_adam);
      break;
    case Algorithm::FedAvg:
    case Algorithm::FedPer:
      state.model.theta = fedavg_aggregate(returns, alphas);
      break;
  }
  state.model.bump_version();
  return participants;
}

// T rounds with evaluation on the configured cadence. Deterministic for a
// seed: all parallel reductions run in fixed client order.
inline std::vector<RoundReport> run_experiment(const ExperimentConfig& cfg,
                                               const std::vector<ClientDataset>& datasets,
                                               FederationState& state) {
  cfg.validate();
  std::vector<RoundReport> reports;
  ForwardPassCounter fp;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    fp.reset(datasets.size());
    std::vector<int> participants;
    try {
      participants = run_round(state, datasets, cfg, &fp, cfg.threads);
    } catch (const std::exception& e) {
      throw std::runtime_error("round " + std::to_string(t) + ": " + e.what());
    }
    if (t % cfg.eval_every == 0) {
      RoundReport report;
      report.round = t;
      const auto eval = evaluate(state, datasets, cfg.threads);
      report.global_train_loss = eval.global_train_loss;
      report.mean_test_accuracy = eval.mean_test_accuracy;
      report.participants = participants;
      report.forward_passes = fp.counts;
      report.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
              .count();
      reports.push_back(std::move(report));
    }
  }
  return reports;
}

// Convenience entry: build data, build state, run.
struct ExperimentRun {
  std::vector<ClientDataset> datasets;
  FederationState state;
  std::vector<RoundReport> reports;
};

inline ExperimentRun run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto class_samples = cfg.data.load();
  ExperimentRun run;
  PersonalizationSpec pers = cfg.personalization;
  pers.total_classes = class_samples.size();
  run.datasets = build_federation(class_samples, pers, cfg.clients,
                                  cfg.train_fraction, cfg.seed);
  run.state = init_federation(cfg, class_samples.front().cols(), class_samples.size());
  run.reports = run_experiment(cfg, run.datasets, run.state);
  return run;
}

// ---------------------------------------------------------------------------
// Verification machinery: the centralized oracle and the unbiasedness check.

// One exact full-gradient descent step over psi = {theta, W_1, ..., W_I}:
// grad theta = sum_i alpha_i grad_theta l_i, grad W_i = alpha_i grad_Wi l_i.
inline void centralized_oracle_step(PersonalizedModel& psi,
                                    const std::vector<ClientDataset>& datasets,
                                    double rate) {
  ParamVector theta_grad(psi.theta.shapes());
  std::vector<std::pair<int, ParamVector>> head_grads;
  for (const auto& data : datasets) {
    JointGradient g =
        joint_gradient(psi.theta, psi.backbone, psi.head(data.client_id), data);
    axpy_inplace(theta_grad, data.alpha_i, g.theta);
    head_grads.emplace_back(data.client_id, scaled(g.head, data.alpha_i));
  }
  psi.theta = gd_step(psi.theta, theta_grad, rate);
  for (auto& [id, g] : head_grads) {
    psi.heads[id] = gd_step(psi.heads[id], g, rate);
  }
  psi.bump_version();
}

struct UnbiasednessReport {
  double max_abs_deviation = 0.0;
  bool exhaustive = true;
  std::size_t draws = 0;          // Monte Carlo only
  double max_standard_error = 0;  // Monte Carlo only
};

namespace detail {

// Per-client joint gradients at a fixed psi, plus the exact full gradient.
struct GradientTable {
  std::vector<ParamVector> theta;  // by client index
  std::vector<ParamVector> head;
  std::vector<double> alpha;
  ParamVector exact_theta;
  std::vector<ParamVector> exact_head;  // alpha_i * grad_Wi
};

inline GradientTable collect_gradients(const PersonalizedModel& psi,
                                       const std::vector<ClientDataset>& datasets) {
  GradientTable table;
  table.exact_theta = ParamVector(psi.theta.shapes());
  for (const auto& data : datasets) {
    JointGradient g =
        joint_gradient(psi.theta, psi.backbone, psi.head(data.client_id), data);
    axpy_inplace(table.exact_theta, data.alpha_i, g.theta);
    table.exact_head.push_back(scaled(g.head, data.alpha_i));
    table.theta.push_back(std::move(g.theta));
    table.head.push_back(std::move(g.head));
    table.alpha.push_back(data.alpha_i);
  }
  return table;
}

// The stochastic gradient for one participant subset:
//   theta block: upscale * sum_{i in S} alpha_i g_i
//   W_i block:   1(i in S) * upscale * alpha_i * grad_Wi
// `upscale` is I/r for an unbiased estimator; tests may pass something else
// to demonstrate the check catches a mis-scaled assembly.
struct StochasticGradient {
  ParamVector theta;
  std::vector<ParamVector> heads;
};

inline StochasticGradient assemble_stochastic_gradient(const GradientTable& table,
                                                       const std::vector<int>& subset,
                                                       double upscale) {
  StochasticGradient sg;
  sg.theta = ParamVector(table.exact_theta.shapes());
  for (std::size_t i = 0; i < table.theta.size(); ++i) {
    sg.heads.emplace_back(table.head[i].shapes());
  }
  for (int id : subset) {
    const auto i = static_cast<std::size_t>(id);
    axpy_inplace(sg.theta, table.alpha[i] * upscale, table.theta[i]);
    axpy_inplace(sg.heads[i], table.alpha[i] * upscale, table.head[i]);
  }
  return sg;
}

inline void accumulate_weighted(StochasticGradient& acc, const StochasticGradient& sg,
                                double weight) {
  axpy_inplace(acc.theta, weight, sg.theta);
  for (std::size_t i = 0; i < acc.heads.size(); ++i) {
    axpy_inplace(acc.heads[i], weight, sg.heads[i]);
  }
}

inline double deviation_from_exact(const StochasticGradient& mean,
                                   const GradientTable& table) {
  double dev = max_abs_difference(mean.theta, table.exact_theta);
  for (std::size_t i = 0; i < mean.heads.size(); ++i) {
    dev = std::max(dev, max_abs_difference(mean.heads[i], table.exact_head[i]));
  }
  return dev;
}

inline void for_each_subset_of_size(
    std::size_t n, std::size_t r,
    const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> subset(r);
  std::iota(subset.begin(), subset.end(), 0);
  while (true) {
    fn(subset);
    // next combination in lexicographic order
    std::size_t i = r;
    while (i > 0 && subset[i - 1] == static_cast<int>(n - r + i - 1)) --i;
    if (i == 0) break;
    ++subset[i - 1];
    for (std::size_t j = i; j < r; ++j) subset[j] = subset[j - 1] + 1;
  }
}

inline double binomial_coefficient(std::size_t n, std::size_t r) {
  double c = 1.0;
  for (std::size_t i = 0; i < r; ++i) {
    c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
  }
  return c;
}

}  // namespace detail

// Averages the assembled stochastic gradient over the participation process
// and reports the worst coordinate's deviation from the exact gradient, over
// the theta block and every W_i block. FixedCount enumerates all C(I, r)
// subsets when that is at most 10^4 and falls back to Monte Carlo otherwise;
// Binomial weights all 2^I subsets by their exact probabilities.
inline UnbiasednessReport verify_unbiasedness(const PersonalizedModel& psi,
                                              const std::vector<ClientDataset>& datasets,
                                              const ParticipationConfig& participation) {
  participation.validate();
  const std::size_t n = datasets.size();
  const auto table = detail::collect_gradients(psi, datasets);
  const double upscale = participation.upscale();

  detail::StochasticGradient mean =
      detail::assemble_stochastic_gradient(table, {}, upscale);  // zeros

  UnbiasednessReport report;
  if (participation.mode == ParticipationMode::Binomial && n <= 20) {
    const double p = participation.probability;
    for (std::uint64_t bits = 0; bits < (1ULL << n); ++bits) {
      std::vector<int> subset;
      for (std::size_t i = 0; i < n; ++i) {
        if (bits & (1ULL << i)) subset.push_back(static_cast<int>(i));
      }
      const double weight = std::pow(p, static_cast<double>(subset.size())) *
                            std::pow(1.0 - p, static_cast<double>(n - subset.size()));
      auto sg = detail::assemble_stochastic_gradient(table, subset, upscale);
      detail::accumulate_weighted(mean, sg, weight);
    }
    report.max_abs_deviation = detail::deviation_from_exact(mean, table);
    return report;
  }

  if (participation.mode == ParticipationMode::FixedCount) {
    const std::size_t r = participation.r;
    const double n_subsets = detail::binomial_coefficient(n, r);
    if (n_subsets <= 1e4) {
      const double weight = 1.0 / n_subsets;
      detail::for_each_subset_of_size(n, r, [&](const std::vector<int>& subset) {
        auto sg = detail::assemble_stochastic_gradient(table, subset, upscale);
        detail::accumulate_weighted(mean, sg, weight);
      });
      report.max_abs_deviation = detail::deviation_from_exact(mean, table);
      return report;
    }
  }

  // Monte Carlo fallback with the per-coordinate standard error of the mean.
  constexpr std::size_t kDraws = 100000;
  report.exhaustive = false;
  report.draws = kDraws;
  Rng rng(derive_seed(0x5eedULL, Stream::Participation, 0xabcd));
  ParticipationConfig cfg = participation;
  cfg.clients = n;
  detail::StochasticGradient m2 = mean;  // running sum of squares
  for (std::size_t d = 0; d < kDraws; ++d) {
    auto subset = sample_participants(cfg, rng);
    auto sg = detail::assemble_stochastic_gradient(table, subset, upscale);
    detail::accumulate_weighted(mean, sg, 1.0 / kDraws);
    for (std::size_t i = 0; i < sg.theta.size(); ++i) {
      m2.theta[i] += sg.theta[i] * sg.theta[i] / kDraws;
    }
    for (std::size_t h = 0; h < sg.heads.size(); ++h) {
      for (std::size_t i = 0; i < sg.heads[h].size(); ++i) {
        m2.heads[h][i] += sg.heads[h][i] * sg.heads[h][i] / kDraws;
      }
    }
  }
  report.max_abs_deviation = detail::deviation_from_exact(mean, table);
  double max_se = 0.0;
  auto se_of = [&](double sum_sq, double mu) {
    const double var = std::max(0.0, sum_sq - mu * mu);
    return std::sqrt(var / kDraws);
  };
  for (std::size_t i = 0; i < mean.theta.size(); ++i) {
    max_se = std::max(max_se, se_of(m2.theta[i], mean.theta[i]));
  }
  for (std::size_t h = 0; h < mean.heads.size(); ++h) {
    for (std::size_t i = 0; i < mean.heads[h].size(); ++i) {
      max_se = std::max(max_se, se_of(m2.heads[h][i], mean.heads[h][i]));
    }
  }
  report.max_standard_error = max_se;
  return report;
}

}  // namespace pflego
