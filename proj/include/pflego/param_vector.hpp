#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pflego/errors.hpp"
#include "pflego/matrix.hpp"

namespace pflego {

// Shape of one parameter segment: a (rows x cols) matrix or a flat vector
// of `rows` entries (cols == 0).
struct SegmentShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  bool is_vector() const { return cols == 0; }
  std::size_t count() const { return is_vector() ? rows : rows * cols; }
  bool operator==(const SegmentShape&) const = default;
};

// Flat 64-bit parameter storage with shape metadata. The shared parameters
// theta and each client head are ParamVectors; optimizers treat them as one
// contiguous array while the network code views individual segments.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(std::vector<SegmentShape> shapes)
      : shapes_(std::move(shapes)) {
    std::size_t total = 0;
    for (const auto& s : shapes_) total += s.count();
    values_.assign(total, 0.0);
  }

  ParamVector(std::vector<SegmentShape> shapes, std::vector<double> values)
      : shapes_(std::move(shapes)), values_(std::move(values)) {
    std::size_t total = 0;
    for (const auto& s : shapes_) total += s.count();
    if (total != values_.size()) {
      throw ConfigError("ParamVector: segment counts sum to " +
                        std::to_string(total) + " but " +
                        std::to_string(values_.size()) + " values given");
    }
  }

  // Single-matrix convenience (client heads are one K_i x M segment).
  static ParamVector matrix(std::size_t rows, std::size_t cols) {
    return ParamVector({SegmentShape{rows, cols}});
  }

  std::size_t size() const { return values_.size(); }
  std::size_t segment_count() const { return shapes_.size(); }
  const std::vector<SegmentShape>& shapes() const { return shapes_; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> segment(std::size_t idx) {
    return {values_.data() + offset(idx), shapes_[idx].count()};
  }
  std::span<const double> segment(std::size_t idx) const {
    return {values_.data() + offset(idx), shapes_[idx].count()};
  }

  // Copies segment idx out as a Matrix (row-major, matching storage).
  Matrix segment_matrix(std::size_t idx) const {
    const SegmentShape& s = shapes_[idx];
    if (s.is_vector()) throw ConfigError("segment_matrix: segment is a vector");
    auto sp = segment(idx);
    return Matrix(s.rows, s.cols, std::vector<double>(sp.begin(), sp.end()));
  }

  bool same_layout(const ParamVector& other) const {
    return shapes_ == other.shapes_;
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const ParamVector&) const = default;

 private:
  std::size_t offset(std::size_t idx) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx; ++i) off += shapes_[i].count();
    return off;
  }

  std::vector<SegmentShape> shapes_;
  std::vector<double> values_;
};

inline void require_same_layout(const ParamVector& a, const ParamVector& b,
                                const char* where) {
  if (!a.same_layout(b)) {
    throw ConfigError(std::string(where) + ": parameter layouts differ");
  }
}

inline void require_finite(const ParamVector& p, const char* where) {
  if (!p.all_finite()) {
    throw NumericError(std::string(where) + ": non-finite parameter value");
  }
}

// a + s*b, layout-checked.
inline ParamVector axpy(const ParamVector& a, double s, const ParamVector& b) {
  require_same_layout(a, b, "axpy");
  ParamVector out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * b[i];
  return out;
}

inline void axpy_inplace(ParamVector& a, double s, const ParamVector& b) {
  require_same_layout(a, b, "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

inline ParamVector scaled(const ParamVector& a, double s) {
  ParamVector out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

inline double max_abs_difference(const ParamVector& a, const ParamVector& b) {
  require_same_layout(a, b, "max_abs_difference");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace pflego
