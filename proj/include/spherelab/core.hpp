#pragma once

// Vector and batch primitives shared by every other module: normalization,
// angular similarities, norm statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spherelab/error.hpp"

namespace spherelab {

// Unqualified math calls in the templates resolve to these for builtin
// floating types and to argument-dependent overloads for extended types.
using std::abs;
using std::acos;
using std::cos;
using std::exp;
using std::floor;
using std::log;
using std::sin;
using std::sqrt;

using Index = Eigen::Index;

template <class Real>
using MatrixX = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using VectorX = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// Norms at or below this are treated as degenerate embeddings.
inline constexpr double kMinNorm = 1e-30;

/// N embeddings of dimension D (one per row) with integer class labels.
template <class Real = double>
struct EmbeddingBatch {
  MatrixX<Real> data;
  std::vector<int> labels;

  Index size() const { return data.rows(); }
  Index dim() const { return data.cols(); }

  void validate() const {
    if (data.rows() < 1 || data.cols() < 2) {
      throw Error(ErrorCode::BadParams, "batch needs N >= 1 rows and D >= 2 columns");
    }
    if (static_cast<Index>(labels.size()) != data.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "label count does not match batch rows");
    }
    if (!data.allFinite()) throw Error(ErrorCode::NonFinite, "batch contains non-finite entries");
    for (int y : labels) {
      if (y < 0) throw Error(ErrorCode::BadLabel, "negative label " + std::to_string(y));
    }
  }

  template <class Other>
  EmbeddingBatch<Other> cast() const {
    return {data.template cast<Other>(), labels};
  }
};

template <class Real = double>
struct UnitEmbedding {
  VectorX<Real> direction;
  Real source_norm{};
};

struct NormStats {
  double mean = 0.0;
  double variance = 0.0;
  std::vector<double> edges;  // bins + 1 edges
  std::vector<std::size_t> counts;
};

template <class Derived>
UnitEmbedding<typename Derived::Scalar> l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  using Real = typename Derived::Scalar;
  const Real norm = v.norm();
  if (!(norm > Real(kMinNorm))) {
    throw Error(ErrorCode::ZeroNorm, "cannot normalize a vector with norm <= 1e-30");
  }
  VectorX<Real> direction = v.reshaped() / norm;
  return {std::move(direction), norm};
}

template <class Real>
Real clamp_unit(Real c) {
  return std::clamp(c, Real(-1), Real(1));
}

/// <a/|a|, b/|b|>, clamped to [-1, 1].
template <class DerivedA, class DerivedB>
typename DerivedA::Scalar cosine_distance(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  const auto ua = l2_normalize(a);
  const auto ub = l2_normalize(b);
  return clamp_unit(ua.direction.dot(ub.direction));
}

/// |a/|a| - b/|b||^2, in [0, 4].
template <class DerivedA, class DerivedB>
typename DerivedA::Scalar normalized_euclidean(const Eigen::MatrixBase<DerivedA>& a,
                                               const Eigen::MatrixBase<DerivedB>& b) {
  using Real = typename DerivedA::Scalar;
  const auto ua = l2_normalize(a);
  const auto ub = l2_normalize(b);
  const Real d = (ua.direction - ub.direction).squaredNorm();
  return std::clamp(d, Real(0), Real(4));
}

/// Row norms of a matrix.
template <class Real>
VectorX<Real> row_norms(const MatrixX<Real>& m) {
  return m.rowwise().norm();
}

/// Directions and norms of every row; throws ZeroNorm on a degenerate row.
template <class Real>
struct UnitRows {
  MatrixX<Real> directions;
  VectorX<Real> norms;
};

template <class Real>
UnitRows<Real> unit_rows(const MatrixX<Real>& m) {
  UnitRows<Real> out{MatrixX<Real>(m.rows(), m.cols()), VectorX<Real>(m.rows())};
  for (Index i = 0; i < m.rows(); ++i) {
    const Real n = m.row(i).norm();
    if (!(n > Real(kMinNorm))) {
      throw Error(ErrorCode::ZeroNorm, "row " + std::to_string(i) + " has norm <= 1e-30");
    }
    out.norms(i) = n;
    out.directions.row(i) = m.row(i) / n;
  }
  return out;
}

/// Chain rule through row normalization: given dL/d(unit row), returns
/// dL/d(row) = (1/|f|)(I - u u^T) dL/du for every row.
template <class Real>
MatrixX<Real> backprop_normalization(const MatrixX<Real>& grad_unit, const UnitRows<Real>& units) {
  MatrixX<Real> grad(grad_unit.rows(), grad_unit.cols());
  for (Index i = 0; i < grad_unit.rows(); ++i) {
    const auto u = units.directions.row(i);
    const Real radial = u.dot(grad_unit.row(i));
    grad.row(i) = (grad_unit.row(i) - radial * u) / units.norms(i);
  }
  return grad;
}

/// Mean and population variance of row norms plus a histogram with
/// `bins` equal-width bins over [min, max] of the observed norms.
template <class Real>
NormStats batch_norm_stats(const EmbeddingBatch<Real>& batch, int bins = 20) {
  if (batch.size() < 1) throw Error(ErrorCode::BadParams, "empty batch");
  if (bins < 1) throw Error(ErrorCode::BadParams, "histogram needs at least one bin");
  const Index n = batch.size();
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) norms[static_cast<std::size_t>(i)] = static_cast<double>(batch.data.row(i).norm());

  NormStats stats;
  double sum = 0.0;
  for (double v : norms) sum += v;
  stats.mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (double v : norms) sq += (v - stats.mean) * (v - stats.mean);
  stats.variance = sq / static_cast<double>(n);

  const auto [lo_it, hi_it] = std::minmax_element(norms.begin(), norms.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  stats.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) stats.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
  stats.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : norms) {
    auto b = static_cast<int>((v - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    ++stats.counts[static_cast<std::size_t>(b)];
  }
  return stats;
}

}  // namespace spherelab
