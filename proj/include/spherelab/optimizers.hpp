#pragma once

// SGD, SGD with momentum and Adam written out by hand, plus the first-order
// predictions of how each one moves an embedding's direction.

#include <cmath>
#include <numbers>
#include <string_view>

#include "spherelab/core.hpp"
#include "spherelab/losses.hpp"

namespace spherelab {

enum class OptimizerKind { sgd, momentum, adam };

/// Adam second moment: one accumulator per coordinate (standard), or one
/// scalar per parameter row accumulating the row's squared gradient norm.
enum class AdamMoment { per_coordinate, per_row };

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}
inline std::string_view to_string(AdamMoment m) { return m == AdamMoment::per_row ? "per_row" : "per_coordinate"; }

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  AdamMoment adam_moment = AdamMoment::per_coordinate;

  void validate() const {
    // lr = 0 is accepted so a run can be frozen for comparison.
    if (!(lr >= 0)) throw Error(ErrorCode::BadParams, "learning rate must be non-negative");
    auto unit = [](double b) { return b >= 0 && b < 1; };
    if (!unit(momentum) || !unit(beta1) || !unit(beta2)) {
      throw Error(ErrorCode::BadParams, "momentum and Adam decay rates must lie in [0, 1)");
    }
    if (!(epsilon > 0)) throw Error(ErrorCode::BadParams, "Adam epsilon must be positive");
  }
};

struct OptimizerState {
  Matrix v;  // first moment / velocity, same shape as the parameters
  Matrix g;  // second moment: same shape (per_coordinate) or rows x 1 (per_row)
  long t = 0;

  bool empty() const { return v.size() == 0; }
};

inline OptimizerState make_optimizer_state(Index rows, Index cols, const OptimizerConfig& cfg) {
  OptimizerState s;
  s.v = Matrix::Zero(rows, cols);
  if (cfg.kind == OptimizerKind::adam) {
    s.g = cfg.adam_moment == AdamMoment::per_row ? Matrix::Zero(rows, 1) : Matrix::Zero(rows, cols);
  }
  return s;
}

/// One update of `params` with `grads`; returns the new parameters and state.
inline std::pair<Matrix, OptimizerState> optimizer_step(const Matrix& params, const Matrix& grads,
                                                        const OptimizerConfig& cfg, OptimizerState state) {
  cfg.validate();
  if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient shape does not match parameter shape");
  }
  if (!grads.allFinite()) throw Error(ErrorCode::NonFinite, "non-finite gradient");
  if (state.empty()) state = make_optimizer_state(params.rows(), params.cols(), cfg);
  if (state.v.rows() != params.rows() || state.v.cols() != params.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state shape does not match parameters");
  }

  Matrix next;
  switch (cfg.kind) {
    case OptimizerKind::sgd:
      next = params - cfg.lr * grads;
      break;
    case OptimizerKind::momentum:
      state.v = cfg.momentum * state.v + grads;
      next = params - cfg.lr * state.v;
      break;
    case OptimizerKind::adam: {
      const long step = state.t + 1;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      state.v = cfg.beta1 * state.v + (1.0 - cfg.beta1) * grads;
      if (cfg.adam_moment == AdamMoment::per_row) {
        if (state.g.rows() != params.rows() || state.g.cols() != 1) {
          throw Error(ErrorCode::ShapeMismatch, "per-row Adam state must be rows x 1");
        }
        state.g = cfg.beta2 * state.g + (1.0 - cfg.beta2) * grads.rowwise().squaredNorm();
        next = params;
        for (Index r = 0; r < params.rows(); ++r) {
          const double denom = std::sqrt(state.g(r, 0) / bc2) + cfg.epsilon;
          next.row(r) -= cfg.lr * (state.v.row(r) / bc1) / denom;
        }
      } else {
        if (state.g.rows() != params.rows() || state.g.cols() != params.cols()) {
          throw Error(ErrorCode::ShapeMismatch, "per-coordinate Adam state must match parameters");
        }
        state.g = cfg.beta2 * state.g + (1.0 - cfg.beta2) * grads.cwiseProduct(grads);
        const Matrix denom = ((state.g.array() / bc2).sqrt() + cfg.epsilon).matrix();
        next = params - cfg.lr * ((state.v.array() / bc1) / denom.array()).matrix();
      }
      break;
    }
  }
  ++state.t;
  return {std::move(next), std::move(state)};
}

struct DirectionDelta {
  double delta_theta = 0.0;      // radians in [0, pi]
  double tan_delta_theta = 0.0;  // +inf once delta_theta >= pi/2
};

inline DirectionDelta direction_delta_from_angle(double theta) {
  const double tan_value = theta < std::numbers::pi / 2 ? std::tan(theta) : std::numeric_limits<double>::infinity();
  return {theta, tan_value};
}

/// Angle between the directions of an embedding before and after an update.
/// 2 atan2(|a - b|, |a + b|) on unit vectors stays accurate for tiny angles,
/// where acos of the cosine loses half the digits.
template <class DerivedA, class DerivedB>
DirectionDelta measure_direction_change(const Eigen::MatrixBase<DerivedA>& before, const Eigen::MatrixBase<DerivedB>& after) {
  const Vector a = l2_normalize(Vector(before.template cast<double>().reshaped())).direction;
  const Vector b = l2_normalize(Vector(after.template cast<double>().reshaped())).direction;
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "vectors differ in dimension");
  return direction_delta_from_angle(2.0 * std::atan2((a - b).norm(), (a + b).norm()));
}

/// tan(dtheta) = |sum phi_ij tangent_ij| / |f_i|^2 for a plain gradient step
/// with unit learning rate (multiply by alpha for a step of size alpha).
template <class Derived>
DirectionDelta tan_delta_closed_form(const Eigen::MatrixBase<Derived>& f_i, const std::vector<PairGradient>& pairs) {
  const double norm = static_cast<double>(f_i.norm());
  if (!(norm > kMinNorm)) throw Error(ErrorCode::ZeroNorm, "embedding has zero norm");
  Vector sum = Vector::Zero(f_i.size());
  for (const auto& p : pairs) sum += p.weight * p.tangent;
  const double t = sum.norm() / (norm * norm);
  return {std::atan(t), t};
}

/// Optimizer state restricted to one embedding row.
struct RowOptimizerState {
  Vector v;
  double g = 0.0;  // per-row Adam second moment
  long t = 0;
};

inline RowOptimizerState row_state(const OptimizerState& state, Index row) {
  RowOptimizerState out;
  out.v = state.v.row(row).transpose();
  out.g = state.g.size() > 0 ? state.g(row, 0) : 0.0;
  out.t = state.t;
  return out;
}

/// First-order prediction of the unit direction after one optimizer step,
/// given dL/d(f/|f|). The O(alpha^2) remainder is dropped. Adam predictions
/// require the per-row second moment.
template <class DerivedF, class DerivedU>
Vector predicted_unit_update(const Eigen::MatrixBase<DerivedF>& f_t, const Eigen::MatrixBase<DerivedU>& grad_wrt_unit,
                             const OptimizerConfig& cfg, const RowOptimizerState& state) {
  const auto unit = l2_normalize(f_t);
  const double norm = unit.source_norm;
  const Vector& u = unit.direction;
  const Vector du = grad_wrt_unit.reshaped();
  if (du.size() != u.size()) throw Error(ErrorCode::ShapeMismatch, "gradient dimension mismatch");
  auto project = [&](const Vector& x) -> Vector { return x - u * u.dot(x); };
  const Vector pdu = project(du);
  const double alpha = cfg.lr;

  switch (cfg.kind) {
    case OptimizerKind::sgd:
      return u - alpha / (norm * norm) * pdu;
    case OptimizerKind::momentum: {
      const Vector v = state.v.size() ? state.v : Vector::Zero(u.size());
      return u - alpha / (norm * norm) * project(norm * cfg.momentum * v + pdu);
    }
    case OptimizerKind::adam: {
      if (cfg.adam_moment != AdamMoment::per_row) {
        throw Error(ErrorCode::BadParams, "direction prediction for Adam needs the per-row second moment");
      }
      const Vector v = state.v.size() ? state.v : Vector::Zero(u.size());
      const double step = static_cast<double>(state.t + 1);
      const double bc1 = 1.0 - std::pow(cfg.beta1, step);
      const double sqrt_bc2 = std::sqrt(1.0 - std::pow(cfg.beta2, step));
      const Vector numer = sqrt_bc2 * (norm * cfg.beta1 * v + (1.0 - cfg.beta1) * pdu);
      const double quad = du.dot(pdu);
      const double denom =
          bc1 * (std::sqrt(norm * norm * cfg.beta2 * state.g + (1.0 - cfg.beta2) * quad) + cfg.epsilon * norm * sqrt_bc2);
      if (denom == 0.0) return u;
      return u - alpha / norm * project(numer / denom);
    }
  }
  throw Error(ErrorCode::BadParams, "unknown optimizer");
}

}  // namespace spherelab
