#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pflego/data.hpp"
#include "pflego/errors.hpp"
#include "pflego/matrix.hpp"
#include "pflego/nn.hpp"
#include "pflego/param_vector.hpp"
#include "pflego/rng.hpp"

namespace pflego {

// Counts full-backbone evaluations per client within one round. Reset at the
// start of each round; evaluation passes that are not part of an algorithm's
// client work bypass it (callers pass nullptr).
struct ForwardPassCounter {
  std::vector<std::int64_t> counts;

  void reset(std::size_t clients) { counts.assign(clients, 0); }

  void add(int client_id, std::int64_t n = 1) {
    if (client_id >= 0 && static_cast<std::size_t>(client_id) < counts.size()) {
      counts[client_id] += n;
    }
  }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

// Shared backbone theta plus one linear head per client. Heads carry no bias:
// logits are W_i * phi(x; theta). theta_version increments on every server
// update so cached features can detect staleness.
struct PersonalizedModel {
  std::vector<LayerSpec> backbone;
  std::size_t feature_dim = 0;  // M, the last backbone out_dim
  ParamVector theta;
  std::uint64_t theta_version = 0;
  std::map<int, ParamVector> heads;  // client id -> K_i x M

  void bump_version() { ++theta_version; }

  const ParamVector& head(int client_id) const {
    auto it = heads.find(client_id);
    if (it == heads.end()) {
      throw StateError("no head for client " + std::to_string(client_id));
    }
    return it->second;
  }
};

// Backbone weights start uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
inline ParamVector init_backbone_theta(const std::vector<LayerSpec>& specs,
                                       std::uint64_t seed) {
  validate_specs(specs);
  ParamVector theta(layer_shapes(specs));
  Rng rng(derive_seed(seed, Stream::ThetaInit));
  std::size_t seg = 0;
  for (const auto& spec : specs) {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
    for (double& w : theta.segment(seg)) w = rng.uniform(-bound, bound);
    ++seg;
    if (spec.has_bias) ++seg;  // biases stay zero
  }
  return theta;
}

// Heads start uniform in [0, 1), drawn from a per-client stream so the
// initial head does not depend on when the client is first visited.
inline ParamVector init_head(std::size_t classes, std::size_t feature_dim,
                             std::uint64_t seed, int client_id) {
  ParamVector head = ParamVector::matrix(classes, feature_dim);
  Rng rng(derive_seed(seed, Stream::HeadInit, static_cast<std::uint64_t>(client_id)));
  for (double& w : head.values()) w = rng.uniform();
  return head;
}

inline PersonalizedModel make_model(std::vector<LayerSpec> backbone,
                                    std::uint64_t seed) {
  PersonalizedModel model;
  model.theta = init_backbone_theta(backbone, seed);
  model.feature_dim = backbone.back().out_dim;
  model.backbone = std::move(backbone);
  return model;
}

inline void require_head_shape(const ParamVector& head, std::size_t classes,
                               std::size_t feature_dim) {
  if (head.segment_count() != 1 ||
      head.shapes()[0] != SegmentShape{classes, feature_dim}) {
    throw ConfigError("head shape must be " + std::to_string(classes) + "x" +
                      std::to_string(feature_dim));
  }
}

inline Matrix head_logits(const Matrix& features, const ParamVector& head) {
  const SegmentShape& s = head.shapes()[0];
  Matrix w(s.rows, s.cols,
           std::vector<double>(head.values().begin(), head.values().end()));
  return matmul_nt(features, w);  // N x K_i
}

// Mean cross-entropy of W_i * phi(x) over the client's training batch.
// One full backbone pass.
inline double client_loss(const ParamVector& theta,
                          const std::vector<LayerSpec>& backbone,
                          const ParamVector& head, const ClientDataset& data,
                          ForwardPassCounter* fp = nullptr) {
  if (data.train.labels.empty()) throw InputError("client_loss: empty dataset");
  require_head_shape(head, data.class_ids.size(), backbone.back().out_dim);
  Matrix features = forward_features(theta, backbone, data.train.inputs);
  if (fp) fp->add(data.client_id);
  return softmax_cross_entropy(head_logits(features, head), data.train.labels).loss;
}

struct JointGradient {
  ParamVector head;
  ParamVector theta;
};

// Exact gradients of the client loss w.r.t. head and theta together: one
// forward pass (with retained intermediates) and one reverse pass.
inline JointGradient joint_gradient(const ParamVector& theta,
                                    const std::vector<LayerSpec>& backbone,
                                    const ParamVector& head,
                                    const ClientDataset& data,
                                    ForwardPassCounter* fp = nullptr) {
  if (data.train.labels.empty()) throw InputError("joint_gradient: empty dataset");
  require_head_shape(head, data.class_ids.size(), backbone.back().out_dim);

  auto trace = detail::forward_trace(theta, backbone, data.train.inputs);
  if (fp) fp->add(data.client_id);
  const Matrix& features = trace.activations.back();

  auto ce = softmax_cross_entropy(head_logits(features, head), data.train.labels);

  JointGradient grad;
  grad.head = ParamVector(head.shapes());
  Matrix gw = matmul_tn(ce.dlogits, features);  // K_i x M
  grad.head.values() = gw.data();

  const SegmentShape& s = head.shapes()[0];
  Matrix w(s.rows, s.cols,
           std::vector<double>(head.values().begin(), head.values().end()));
  Matrix upstream = matmul(ce.dlogits, w);  // N x M
  grad.theta = detail::backward_from_trace(theta, backbone, trace, upstream);
  return grad;
}

// Features computed once per round and reused for the head-only steps.
struct FeatureCache {
  int client_id = -1;
  Matrix features;  // N_i x M
  std::uint64_t theta_version = 0;
};

inline FeatureCache build_feature_cache(const PersonalizedModel& model,
                                        const ClientDataset& data,
                                        ForwardPassCounter* fp = nullptr) {
  FeatureCache cache;
  cache.client_id = data.client_id;
  cache.features = forward_features(model.theta, model.backbone, data.train.inputs);
  cache.theta_version = model.theta_version;
  if (fp) fp->add(data.client_id);
  return cache;
}

// Head gradient from cached features; costs zero backbone passes. Refuses
// to run against a theta that has moved since the cache was built.
inline ParamVector head_gradient_cached(const FeatureCache& cache,
                                        const ParamVector& head,
                                        const std::vector<int>& labels,
                                        std::uint64_t current_theta_version) {
  if (cache.theta_version != current_theta_version) {
    throw StateError("feature cache is stale: built at theta version " +
                     std::to_string(cache.theta_version) + ", model is at " +
                     std::to_string(current_theta_version));
  }
  auto ce = softmax_cross_entropy(head_logits(cache.features, head), labels);
  ParamVector grad(head.shapes());
  Matrix gw = matmul_tn(ce.dlogits, cache.features);
  grad.values() = gw.data();
  return grad;
}

// Global training loss: sum of alpha_i-weighted client losses. Evaluation
// only; forward passes here are not counted.
inline double global_loss(const PersonalizedModel& model,
                          const std::vector<ClientDataset>& datasets) {
  if (datasets.empty()) throw InputError("global_loss: empty federation");
  double total = 0.0;
  for (const auto& data : datasets) {
    total += data.alpha_i *
             client_loss(model.theta, model.backbone, model.head(data.client_id), data);
  }
  return total;
}

}  // namespace pflego
