#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "pflego/data.hpp"
#include "pflego/errors.hpp"
#include "pflego/model.hpp"
#include "pflego/nn.hpp"
#include "pflego/optim.hpp"
#include "pflego/param_vector.hpp"
#include "pflego/rng.hpp"

namespace pflego {

enum class Algorithm { Pflego, FedAvg, FedPer, FedRecon };

enum class ParticipationMode { FixedCount, Binomial };

// Client selection per round. Under either mode every client's marginal
// inclusion probability is r/I (with r = I*p for Binomial).
struct ParticipationConfig {
  ParticipationMode mode = ParticipationMode::FixedCount;
  std::size_t clients = 0;   // I
  std::size_t r = 0;         // FixedCount only
  double probability = 0.0;  // Binomial only

  void validate() const {
    if (clients < 1) throw ConfigError("participation: need at least one client");
    if (mode == ParticipationMode::FixedCount) {
      if (r < 1 || r > clients) {
        throw ConfigError("participation: r must satisfy 1 <= r <= " +
                          std::to_string(clients));
      }
    } else if (probability <= 0.0 || probability > 1.0) {
      throw ConfigError("participation: probability must be in (0, 1]");
    }
  }

  // Expected participants; may be fractional in Binomial mode.
  double expected_r() const {
    return mode == ParticipationMode::FixedCount
               ? static_cast<double>(r)
               : probability * static_cast<double>(clients);
  }

  // The unbiasedness factor I/r (equivalently 1/p).
  double upscale() const { return static_cast<double>(clients) / expected_r(); }
};

// FixedCount: a uniform r-subset without replacement. Binomial: each client
// independently with probability p; the result may be empty, in which case
// the round performs no update. Ids come back ascending.
inline std::vector<int> sample_participants(const ParticipationConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<int> picked;
  if (cfg.mode == ParticipationMode::FixedCount) {
    std::vector<int> ids(cfg.clients);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t j = 0; j < cfg.r; ++j) {
      std::size_t pick = j + static_cast<std::size_t>(rng.below(cfg.clients - j));
      std::swap(ids[j], ids[pick]);
    }
    picked.assign(ids.begin(), ids.begin() + static_cast<long>(cfg.r));
  } else {
    for (std::size_t i = 0; i < cfg.clients; ++i) {
      if (rng.uniform() < cfg.probability) picked.push_back(static_cast<int>(i));
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

enum class ServerMode { PureSgd, Adam };

struct AlgorithmConfig {
  Algorithm algorithm = Algorithm::Pflego;
  std::size_t tau = 50;  // local updates per participating client
  double beta = 0.007;   // client GD rate
  ServerMode server_mode = ServerMode::Adam;
  LrSchedule schedule;  // rho_t for PureSgd; schedule.rho0 is Adam's base rate
  // Scale the final PFLEGO head step by alpha_i, which is what makes the
  // combined client/server round an exact SGD step over the full parameter
  // set; false applies the unscaled client rule instead.
  bool alpha_in_head_update = true;

  void validate() const {
    if (tau < 1) throw ConfigError("algorithm: tau must be >= 1");
    if (beta <= 0.0) throw ConfigError("algorithm: beta must be > 0");
    if (schedule.rho0 <= 0.0) throw ConfigError("algorithm: rho must be > 0");
  }
};

// Per-round quantities shared by all participating clients.
struct RoundContext {
  double rho_t = 0.0;
  double upscale = 1.0;  // I/r
};

// What a client sends back: a theta-gradient (PFLEGO, FedRecon) or a locally
// updated theta copy (FedAvg, FedPer), plus the head it keeps.
struct ClientRoundResult {
  ParamVector head;          // unused for FedAvg
  ParamVector theta_return;  // gradient or updated copy, layout of theta
};

// PFLEGO client work: one cached forward pass, tau-1 head-only GD steps at
// rate beta, then the joint gradient (second and final backbone pass), a
// single scaled head step, and the theta-gradient back to the server. The
// returned gradient is evaluated at the head value before the final step.
inline ClientRoundResult pflego_client_round(const PersonalizedModel& model,
                                             const ClientDataset& data,
                                             const ParamVector& head_in,
                                             const AlgorithmConfig& cfg,
                                             const RoundContext& ctx,
                                             ForwardPassCounter* fp = nullptr) {
  cfg.validate();
  FeatureCache cache = build_feature_cache(model, data, fp);
  ParamVector head = head_in;
  for (std::size_t s = 1; s < cfg.tau; ++s) {
    ParamVector g = head_gradient_cached(cache, head, data.train.labels,
                                         model.theta_version);
    head = gd_step(head, g, cfg.beta);
  }
  JointGradient joint = joint_gradient(model.theta, model.backbone, head, data, fp);
  double scale = ctx.rho_t * ctx.upscale;
  if (cfg.alpha_in_head_update) scale *= data.alpha_i;
  head = gd_step(head, joint.head, scale);
  return {std::move(head), std::move(joint.theta)};
}

// Assembles G = upscale * sum_i alpha_i g_i over the participants (ascending
// client id) and applies one server step to theta. Caller bumps the model's
// theta version. Returns are (client_id, gradient) pairs.
inline ParamVector pflego_server_aggregate(
    const ParamVector& theta,
    const std::vector<std::pair<int, ParamVector>>& returns,
    const std::vector<double>& alphas, const AlgorithmConfig& cfg,
    const RoundContext& ctx, AdamState* adam) {
  if (returns.empty()) throw InputError("server aggregate: no client returns");
  ParamVector assembled(theta.shapes());
  for (const auto& [id, g] : returns) {
    require_same_layout(g, theta, "server aggregate");
    axpy_inplace(assembled, alphas[static_cast<std::size_t>(id)], g);
  }
  for (auto& v : assembled.values()) v *= ctx.upscale;

  if (cfg.server_mode == ServerMode::PureSgd) {
    return gd_step(theta, assembled, ctx.rho_t);
  }
  if (adam == nullptr) throw ConfigError("server aggregate: Adam state missing");
  return adam_step(*adam, theta, assembled);
}

namespace detail {

// Loss and full-parameter gradient of a network whose final layer is the
// classifier (the FedAvg view, where the head lives inside theta).
inline ParamVector full_network_gradient(const ParamVector& theta,
                                         const std::vector<LayerSpec>& specs,
                                         const Matrix& inputs,
                                         const std::vector<int>& labels,
                                         int client_id, ForwardPassCounter* fp) {
  auto trace = forward_trace(theta, specs, inputs);
  if (fp) fp->add(client_id);
  auto ce = softmax_cross_entropy(trace.activations.back(), labels);
  return backward_from_trace(theta, specs, trace, ce.dlogits);
}

inline std::vector<int> global_labels(const ClientDataset& data, const Batch& batch) {
  std::vector<int> out;
  out.reserve(batch.labels.size());
  for (int local : batch.labels) {
    out.push_back(data.class_ids[static_cast<std::size_t>(local)]);
  }
  return out;
}

}  // namespace detail

// FedAvg client work: tau joint GD steps over a local copy of the full
// parameter set (labels mapped to global class indices), returning the copy.
inline ClientRoundResult fedavg_client_round(const ParamVector& theta,
                                             const std::vector<LayerSpec>& full_specs,
                                             const ClientDataset& data,
                                             const AlgorithmConfig& cfg,
                                             ForwardPassCounter* fp = nullptr) {
  cfg.validate();
  const std::vector<int> labels = detail::global_labels(data, data.train);
  ParamVector local = theta;
  for (std::size_t s = 0; s < cfg.tau; ++s) {
    ParamVector g = detail::full_network_gradient(local, full_specs, data.train.inputs,
                                                  labels, data.client_id, fp);
    local = gd_step(local, g, cfg.beta);
  }
  return {ParamVector{}, std::move(local)};
}

// Weighted average of returned parameter copies. Raw alpha_i weights do not
// sum to one over a partial participant set, so they are renormalized to
// keep the aggregate a convex combination.
inline ParamVector fedavg_aggregate(
    const std::vector<std::pair<int, ParamVector>>& returns,
    const std::vector<double>& alphas) {
  if (returns.empty()) throw InputError("fedavg aggregate: no client returns");
  double weight_sum = 0.0;
  for (const auto& [id, unused] : returns) {
    weight_sum += alphas[static_cast<std::size_t>(id)];
  }
  ParamVector out(returns.front().second.shapes());
  for (const auto& [id, theta_i] : returns) {
    require_same_layout(theta_i, out, "fedavg aggregate");
    axpy_inplace(out, alphas[static_cast<std::size_t>(id)] / weight_sum, theta_i);
  }
  return out;
}

// FedPer client work: tau simultaneous GD steps on the head and a local
// theta copy, both at rate beta; the theta copy goes back for averaging and
// the head persists on the client.
inline ClientRoundResult fedper_client_round(const PersonalizedModel& model,
                                             const ClientDataset& data,
                                             const ParamVector& head_in,
                                             const AlgorithmConfig& cfg,
                                             ForwardPassCounter* fp = nullptr) {
  cfg.validate();
  ParamVector head = head_in;
  ParamVector local = model.theta;
  for (std::size_t s = 0; s < cfg.tau; ++s) {
    JointGradient joint = joint_gradient(local, model.backbone, head, data, fp);
    head = gd_step(head, joint.head, cfg.beta);
    local = gd_step(local, joint.theta, cfg.beta);
  }
  return {std::move(head), std::move(local)};
}

// FedRecon client work: tau head-only GD steps off the cached features, then
// the theta-gradient at the final head. Unlike PFLEGO there is no scaled
// final head step, which makes it block-coordinate rather than joint SGD.
inline ClientRoundResult fedrecon_client_round(const PersonalizedModel& model,
                                               const ClientDataset& data,
                                               const ParamVector& head_in,
                                               const AlgorithmConfig& cfg,
                                               ForwardPassCounter* fp = nullptr) {
  cfg.validate();
  FeatureCache cache = build_feature_cache(model, data, fp);
  ParamVector head = head_in;
  for (std::size_t s = 0; s < cfg.tau; ++s) {
    ParamVector g = head_gradient_cached(cache, head, data.train.labels,
                                         model.theta_version);
    head = gd_step(head, g, cfg.beta);
  }
  JointGradient joint = joint_gradient(model.theta, model.backbone, head, data, fp);
  return {std::move(head), std::move(joint.theta)};
}

}  // namespace pflego
