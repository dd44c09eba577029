#pragma once

// Norm regularizers: the spherical embedding constraint (SEC) with batch-mean,
// fixed or EMA target norm, plain L2 norm regularization, and penalty-weight
// schedules.

#include <algorithm>
#include <string>
#include <string_view>

#include "spherelab/core.hpp"
#include "spherelab/losses.hpp"

namespace spherelab {

enum class RegularizerKind { none, sec, l2reg };
enum class MuMode { batch_mean, fixed, ema };
enum class EtaSchedule { constant, linear_ramp, capped_ramp, warmup_epochs };
/// How the EMA target is seeded: from the first processed batch, or from a
/// full pass over the training set before the first step.
enum class MuInit { first_batch, full_pass };

inline std::string_view to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::none: return "none";
    case RegularizerKind::sec: return "sec";
    case RegularizerKind::l2reg: return "l2reg";
  }
  return "?";
}
inline std::string_view to_string(MuMode m) {
  switch (m) {
    case MuMode::batch_mean: return "batch_mean";
    case MuMode::fixed: return "fixed";
    case MuMode::ema: return "ema";
  }
  return "?";
}
inline std::string_view to_string(EtaSchedule s) {
  switch (s) {
    case EtaSchedule::constant: return "constant";
    case EtaSchedule::linear_ramp: return "linear_ramp";
    case EtaSchedule::capped_ramp: return "capped_ramp";
    case EtaSchedule::warmup_epochs: return "warmup_epochs";
  }
  return "?";
}
inline std::string_view to_string(MuInit m) { return m == MuInit::first_batch ? "first_batch" : "full_pass"; }

struct RegularizerConfig {
  RegularizerKind kind = RegularizerKind::none;
  MuMode mu_mode = MuMode::batch_mean;
  double mu_fixed = 1.0;
  double rho = 0.1;
  MuInit mu_init = MuInit::first_batch;
  double eta = 0.0;
  EtaSchedule schedule = EtaSchedule::constant;
  int start_epoch = 0;    // warmup_epochs: epochs with eta = 0
  int epoch_length = 1;   // warmup_epochs: iterations per epoch

  void validate() const {
    if (!(eta >= 0)) throw Error(ErrorCode::BadParams, "eta must be non-negative");
    if (!(rho >= 0 && rho <= 1)) throw Error(ErrorCode::BadParams, "rho must lie in [0, 1]");
    // mu = 0 is accepted: it is exactly L2 regularization.
    if (mu_mode == MuMode::fixed && !(mu_fixed >= 0)) throw Error(ErrorCode::BadParams, "fixed mu must be non-negative");
    if (start_epoch < 0 || epoch_length < 1) throw Error(ErrorCode::BadParams, "bad warm-up epoch settings");
  }
};

struct RegularizerState {
  double mu = 0.0;
  long step = 0;
  bool initialized = false;
};

/// Target norm for this batch, and the state after observing it.
inline RegularizerState advance_mu(const RegularizerConfig& cfg, const RegularizerState& state, double batch_mean) {
  RegularizerState next = state;
  switch (cfg.mu_mode) {
    case MuMode::batch_mean:
      next.mu = batch_mean;
      break;
    case MuMode::fixed:
      next.mu = cfg.mu_fixed;
      break;
    case MuMode::ema:
      if (!state.initialized) next.mu = batch_mean;
      else next.mu = (1.0 - cfg.rho) * state.mu + cfg.rho * batch_mean;
      break;
  }
  next.initialized = true;
  next.step = state.step + 1;
  return next;
}

/// (1/N) sum_i (|f_i| - mu)^2 with a given, non-differentiated mu.
template <class Real>
LossOutput<Real> sec_loss_at(const EmbeddingBatch<Real>& batch, Real mu) {
  const Index n = batch.size();
  const Real inv_n = Real(1) / static_cast<Real>(n);
  LossOutput<Real> out;
  out.grad_embeddings = MatrixX<Real>::Zero(n, batch.dim());
  out.value = 0;
  for (Index i = 0; i < n; ++i) {
    const Real norm = batch.data.row(i).norm();
    const Real gap = norm - mu;
    out.value += gap * gap * inv_n;
    if (norm > Real(kMinNorm)) {
      out.grad_embeddings.row(i) = Real(2) * inv_n * gap * batch.data.row(i) / norm;
    } else if (mu != Real(0)) {
      throw Error(ErrorCode::ZeroNorm, "SEC gradient undefined at a zero row");
    }
  }
  return out;
}

/// SEC loss and gradient (2/N)(|f_i| - mu) f_i/|f_i|; mu comes from the
/// configured mode and is treated as a constant.
template <class Real>
std::pair<LossOutput<Real>, RegularizerState> sec_loss(const EmbeddingBatch<Real>& batch, const RegularizerConfig& cfg,
                                                       const RegularizerState& state) {
  cfg.validate();
  if (batch.size() < 1) throw Error(ErrorCode::BadParams, "empty batch");
  if (cfg.mu_mode != MuMode::fixed || cfg.mu_fixed != 0.0) {
    for (Index i = 0; i < batch.size(); ++i) {
      if (!(batch.data.row(i).norm() > Real(kMinNorm))) {
        throw Error(ErrorCode::ZeroNorm, "row " + std::to_string(i) + " has norm <= 1e-30");
      }
    }
  }
  Real sum = 0;
  for (Index i = 0; i < batch.size(); ++i) sum += batch.data.row(i).norm();
  const double batch_mean = static_cast<double>(sum / static_cast<Real>(batch.size()));
  const RegularizerState next = advance_mu(cfg, state, batch_mean);
  // batch_mean mode keeps the exact (non-rounded) mean in the working precision.
  const Real mu = cfg.mu_mode == MuMode::batch_mean ? sum / static_cast<Real>(batch.size()) : Real(next.mu);
  return {sec_loss_at(batch, mu), next};
}

/// (1/N) sum_i |f_i|^2.
template <class Real>
LossOutput<Real> l2_reg_loss(const EmbeddingBatch<Real>& batch, const RegularizerConfig& = {}) {
  const Index n = batch.size();
  if (n < 1) throw Error(ErrorCode::BadParams, "empty batch");
  const Real inv_n = Real(1) / static_cast<Real>(n);
  LossOutput<Real> out;
  out.value = batch.data.squaredNorm() * inv_n;
  out.grad_embeddings = Real(2) * inv_n * batch.data;
  return out;
}

/// Penalty weight at iteration t of `total`.
inline double eta_schedule(const RegularizerConfig& cfg, long t, long total) {
  if (total <= 0) throw Error(ErrorCode::BadSchedule, "schedule total must be positive");
  if (t < 0 || t > total) throw Error(ErrorCode::BadSchedule, "iteration outside [0, total]");
  const double frac = static_cast<double>(t) / static_cast<double>(total);
  switch (cfg.schedule) {
    case EtaSchedule::constant: return cfg.eta;
    case EtaSchedule::linear_ramp: return cfg.eta * frac;
    case EtaSchedule::capped_ramp: return std::min(cfg.eta, 500.0 * frac);
    case EtaSchedule::warmup_epochs: {
      const long begin = static_cast<long>(cfg.start_epoch) * cfg.epoch_length;
      if (t < begin) return 0.0;
      if (t >= begin + cfg.epoch_length) return cfg.eta;
      return cfg.eta * static_cast<double>(t - begin) / static_cast<double>(cfg.epoch_length);
    }
  }
  throw Error(ErrorCode::BadSchedule, "unknown schedule");
}

/// Regularizer value and gradient for any kind (zero for none).
template <class Real>
std::pair<LossOutput<Real>, RegularizerState> evaluate_regularizer(const EmbeddingBatch<Real>& batch,
                                                                   const RegularizerConfig& cfg,
                                                                   const RegularizerState& state) {
  switch (cfg.kind) {
    case RegularizerKind::sec: return sec_loss(batch, cfg, state);
    case RegularizerKind::l2reg: return {l2_reg_loss(batch, cfg), state};
    case RegularizerKind::none: break;
  }
  LossOutput<Real> out;
  out.value = 0;
  out.grad_embeddings = MatrixX<Real>::Zero(batch.size(), batch.dim());
  return {out, state};
}

}  // namespace spherelab
