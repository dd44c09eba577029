#pragma once

// Finite-difference gradient checking.

#include <cmath>
#include <concepts>

#include <boost/multiprecision/float128.hpp>
#include <boost/multiprecision/eigen.hpp>

#include "spherelab/core.hpp"

namespace spherelab {

/// Quad-precision scalar for the finite-difference oracle. Rounding in the
/// loss value stays far below the O(h^4) stencil error, so the check keeps
/// relative accuracy even for tiny (saturated softmax) coordinates.
using Precise = boost::multiprecision::float128;
using PreciseMatrix = MatrixX<Precise>;

/// Worst coordinate of a finite-difference comparison.
struct GradCheckResult {
  double max_rel_error = 0.0;
  Index row = -1;
  Index col = -1;
};

/// Compares `analytic` with central differences of `value` around `point`.
/// `value` is evaluated in extended precision with the fourth-order central stencil
/// (f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h; the error of a coordinate
/// is |numeric - analytic| / max(1e-12, |analytic|).
template <class ValueFn>
  requires std::invocable<ValueFn&, const PreciseMatrix&>
GradCheckResult finite_diff_check_detailed(ValueFn&& value, const Matrix& point, const Matrix& analytic, double h = 1e-5) {
  if (!(h >= 1e-8 && h <= 1e-3)) throw Error(ErrorCode::BadParams, "step h must lie in [1e-8, 1e-3]");
  if (point.rows() != analytic.rows() || point.cols() != analytic.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "analytic gradient shape does not match the point");
  }
  if (!analytic.allFinite()) throw Error(ErrorCode::NonFinite, "analytic gradient is not finite");

  PreciseMatrix x = point.template cast<Precise>();
  const Precise step(h);
  auto eval = [&]() {
    const Precise v = static_cast<Precise>(value(static_cast<const PreciseMatrix&>(x)));
    if (!std::isfinite(static_cast<double>(v))) throw Error(ErrorCode::NonFinite, "loss value is not finite");
    return v;
  };

  GradCheckResult res;
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      const Precise orig = x(r, c);
      x(r, c) = orig + step;
      const Precise p1 = eval();
      x(r, c) = orig - step;
      const Precise m1 = eval();
      x(r, c) = orig + 2 * step;
      const Precise p2 = eval();
      x(r, c) = orig - 2 * step;
      const Precise m2 = eval();
      x(r, c) = orig;
      const double numeric = static_cast<double>((m2 - 8 * m1 + 8 * p1 - p2) / (12 * step));
      const double err = std::abs(numeric - analytic(r, c)) / std::max(1e-12, std::abs(analytic(r, c)));
      if (err > res.max_rel_error || res.row < 0) {
        res.max_rel_error = err;
        res.row = r;
        res.col = c;
      }
    }
  }
  return res;
}

template <class ValueFn>
double finite_diff_check(ValueFn&& value, const Matrix& point, const Matrix& analytic, double h = 1e-5) {
  return finite_diff_check_detailed(std::forward<ValueFn>(value), point, analytic, h).max_rel_error;
}

}  // namespace spherelab
