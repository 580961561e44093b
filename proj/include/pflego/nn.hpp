#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pflego/errors.hpp"
#include "pflego/matrix.hpp"
#include "pflego/param_vector.hpp"

namespace pflego {

enum class Activation { ReLU, Identity };

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::ReLU;
  bool has_bias = true;
};

// One client's samples. Labels are local head indices in [0, K_i).
struct Batch {
  Matrix inputs;            // N x D
  std::vector<int> labels;  // N entries
};

inline void validate_specs(const std::vector<LayerSpec>& specs) {
  if (specs.empty()) throw ConfigError("network needs at least one layer");
  for (std::size_t l = 0; l < specs.size(); ++l) {
    if (specs[l].in_dim < 1 || specs[l].out_dim < 1) {
      throw ConfigError("layer " + std::to_string(l) + ": dimensions must be >= 1");
    }
    if (l > 0 && specs[l].in_dim != specs[l - 1].out_dim) {
      throw ConfigError("layer " + std::to_string(l) +
                        ": in_dim does not match previous out_dim");
    }
  }
}

// Parameter layout for a dense stack: per layer, a (out x in) weight matrix
// followed by a length-out bias vector when the layer has one.
inline std::vector<SegmentShape> layer_shapes(const std::vector<LayerSpec>& specs) {
  std::vector<SegmentShape> shapes;
  for (const auto& s : specs) {
    shapes.push_back({s.out_dim, s.in_dim});
    if (s.has_bias) shapes.push_back({s.out_dim, 0});
  }
  return shapes;
}

inline void require_theta_matches(const ParamVector& theta,
                                  const std::vector<LayerSpec>& specs) {
  if (theta.shapes() != layer_shapes(specs)) {
    throw ConfigError("theta segments do not match layer specs");
  }
}

namespace detail {

// Per-layer intermediates retained for the reverse pass.
struct ForwardTrace {
  std::vector<Matrix> activations;  // activations[0] is the input batch
  std::vector<Matrix> preacts;      // preacts[l] = Z of layer l
};

inline ForwardTrace forward_trace(const ParamVector& theta,
                                  const std::vector<LayerSpec>& specs,
                                  const Matrix& inputs) {
  validate_specs(specs);
  require_theta_matches(theta, specs);
  if (inputs.cols() != specs.front().in_dim) {
    throw ConfigError("input column count does not match first layer in_dim");
  }

  ForwardTrace trace;
  trace.activations.reserve(specs.size() + 1);
  trace.preacts.reserve(specs.size());
  trace.activations.push_back(inputs);

  std::size_t seg = 0;
  for (const auto& spec : specs) {
    const Matrix& prev = trace.activations.back();
    const SegmentShape wshape = theta.shapes()[seg];
    Matrix w(wshape.rows, wshape.cols,
             std::vector<double>(theta.segment(seg).begin(), theta.segment(seg).end()));
    ++seg;

    Matrix z = matmul_nt(prev, w);  // N x out
    if (spec.has_bias) {
      auto bias = theta.segment(seg);
      ++seg;
      for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += bias[j];
      }
    }

    Matrix a = z;
    if (spec.activation == Activation::ReLU) {
      for (auto& v : a.data()) {
        if (v < 0.0) v = 0.0;
      }
    }
    trace.preacts.push_back(std::move(z));
    trace.activations.push_back(std::move(a));
  }
  return trace;
}

// Gradient of sum(upstream .* output) with respect to theta, using retained
// intermediates. ReLU subgradient at exactly 0 is 0.
inline ParamVector backward_from_trace(const ParamVector& theta,
                                       const std::vector<LayerSpec>& specs,
                                       const ForwardTrace& trace,
                                       const Matrix& upstream) {
  const Matrix& out = trace.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw ConfigError("upstream shape does not match feature output");
  }

  ParamVector grad(theta.shapes());
  Matrix g = upstream;  // gradient w.r.t. the current layer's activation

  // Segment index just past the last layer's parameters.
  std::size_t seg = theta.segment_count();
  for (std::size_t l = specs.size(); l-- > 0;) {
    const LayerSpec& spec = specs[l];
    const Matrix& z = trace.preacts[l];
    if (spec.activation == Activation::ReLU) {
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) {
          if (z(i, j) <= 0.0) g(i, j) = 0.0;
        }
      }
    }

    if (spec.has_bias) {
      --seg;
      auto gb = grad.segment(seg);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
      }
    }
    --seg;
    {
      Matrix gw = matmul_tn(g, trace.activations[l]);  // out x in
      auto dst = grad.segment(seg);
      for (std::size_t i = 0; i < gw.size(); ++i) dst[i] = gw.data()[i];
    }

    if (l > 0) {
      const SegmentShape wshape = theta.shapes()[seg];
      Matrix w(wshape.rows, wshape.cols,
               std::vector<double>(theta.segment(seg).begin(), theta.segment(seg).end()));
      g = matmul(g, w);  // N x in
    }
  }
  return grad;
}

}  // namespace detail

// Feature map of the shared backbone: one N x M row per input sample.
// Pure function of its arguments.
inline Matrix forward_features(const ParamVector& theta,
                               const std::vector<LayerSpec>& specs,
                               const Matrix& inputs) {
  Matrix out = detail::forward_trace(theta, specs, inputs).activations.back();
  for (double v : out.data()) {
    if (!std::isfinite(v)) throw NumericError("forward_features: non-finite output");
  }
  return out;
}

struct SoftmaxCrossEntropy {
  double loss = 0.0;
  Matrix dlogits;  // (softmax - onehot) / N
};

// Mean cross-entropy over rows with row-max stabilization. The max shift
// cancels in the softmax, so the stabilized value is mathematically the
// unstabilized one.
inline SoftmaxCrossEntropy softmax_cross_entropy(const Matrix& logits,
                                                 const std::vector<int>& labels) {
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  if (n < 1) throw InputError("softmax_cross_entropy: empty batch");
  if (labels.size() != n) {
    throw InputError("softmax_cross_entropy: label count does not match rows");
  }

  SoftmaxCrossEntropy result;
  result.dlogits = Matrix(n, k);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw InputError("softmax_cross_entropy: label " + std::to_string(label) +
                       " out of range for " + std::to_string(k) + " classes");
    }
    double row_max = logits(i, 0);
    for (std::size_t j = 1; j < k; ++j) row_max = std::max(row_max, logits(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(logits(i, j) - row_max);
    const double log_denom = std::log(denom);
    loss_sum += log_denom - (logits(i, label) - row_max);
    for (std::size_t j = 0; j < k; ++j) {
      double p = std::exp(logits(i, j) - row_max) / denom;
      result.dlogits(i, j) = p / static_cast<double>(n);
    }
    result.dlogits(i, label) -= 1.0 / static_cast<double>(n);
  }
  result.loss = loss_sum / static_cast<double>(n);
  return result;
}

// Gradient of sum(upstream .* forward_features(theta, specs, inputs)) w.r.t.
// theta; recomputes the forward intermediates internally.
inline ParamVector backward(const ParamVector& theta,
                            const std::vector<LayerSpec>& specs,
                            const Matrix& inputs, const Matrix& upstream) {
  auto trace = detail::forward_trace(theta, specs, inputs);
  return detail::backward_from_trace(theta, specs, trace, upstream);
}

}  // namespace pflego
