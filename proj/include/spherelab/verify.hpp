#pragma once

// Numerical verification suites: finite-difference gradient checks for every
// loss and regularizer, and the norm/direction propositions checked against
// actual optimizer steps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "spherelab/core.hpp"
#include "spherelab/format.hpp"
#include "spherelab/gradcheck.hpp"
#include "spherelab/losses.hpp"
#include "spherelab/optimizers.hpp"
#include "spherelab/regularizers.hpp"

namespace spherelab {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string detail;  // e.g. "slope" or "max rel err"
};

/// One sampled point of a gradient check: where to evaluate, the analytic
/// gradient there, and the loss value as a function of the point.
struct GradCheckPoint {
  Matrix point;
  Matrix analytic;
  std::function<Precise(const PreciseMatrix&)> value;
};

/// A user-supplied gradient check, e.g. a deliberately broken gradient used
/// as a negative control.
struct GradCheckCase {
  std::string name;
  std::function<GradCheckPoint(std::mt19937_64&)> sample;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  int gradcheck_points = 100;
  double gradcheck_tol = 1e-6;
  int prop1_batches = 100;
  int prop_configs = 50;
  std::vector<GradCheckCase> extra_cases;
};

enum class Suite { prop1, prop2, prop3, prop4, prop5, gradcheck, all };

inline std::string_view to_string(Suite s) {
  switch (s) {
    case Suite::prop1: return "prop1";
    case Suite::prop2: return "prop2";
    case Suite::prop3: return "prop3";
    case Suite::prop4: return "prop4";
    case Suite::prop5: return "prop5";
    case Suite::gradcheck: return "gradcheck";
    case Suite::all: return "all";
  }
  return "?";
}

inline Suite parse_suite(std::string_view name) {
  for (Suite s : {Suite::prop1, Suite::prop2, Suite::prop3, Suite::prop4, Suite::prop5, Suite::gradcheck, Suite::all}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::ConfigError, "unknown verification suite '" + std::string(name) + "'");
}

namespace verify_detail {

/// Label pattern 0,0,1,1,2,2,... so every class has a positive pair.
inline std::vector<int> paired_labels(Index n) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i / 2);
  return labels;
}

/// Gaussian rows rescaled to log-uniform norms in [0.3, 3].
inline Matrix random_rows(Index n, Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> log_norm(std::log(0.3), std::log(3.0));
  Matrix m(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) m(i, j) = normal(rng);
    m.row(i) *= std::exp(log_norm(rng)) / m.row(i).norm();
  }
  return m;
}

inline EmbeddingBatch<double> random_batch(Index n, Index d, std::mt19937_64& rng) {
  return {random_rows(n, d, rng), paired_labels(n)};
}

/// Loss configurations covered by the checks: the pair losses in both
/// distances where they are defined, and all softmax variants.
struct NamedLoss {
  std::string name;
  LossConfig cfg;
};

inline std::vector<NamedLoss> pair_losses() {
  return {
      {"triplet", LossConfig::defaults(LossKind::triplet)},
      {"semihard_triplet", LossConfig::defaults(LossKind::semihard_triplet)},
      {"npair", LossConfig::defaults(LossKind::npair)},
      {"multi_similarity", LossConfig::defaults(LossKind::multi_similarity)},
      {"ntxent", LossConfig::defaults(LossKind::ntxent)},
  };
}

inline std::vector<NamedLoss> softmax_losses() {
  return {
      {"cos_softmax_plain", LossConfig::defaults(LossKind::cos_softmax, SoftmaxVariant::plain)},
      {"cos_softmax_sphereface", LossConfig::defaults(LossKind::cos_softmax, SoftmaxVariant::sphereface)},
      {"cos_softmax_cosface", LossConfig::defaults(LossKind::cos_softmax, SoftmaxVariant::cosface)},
      {"cos_softmax_arcface", LossConfig::defaults(LossKind::cos_softmax, SoftmaxVariant::arcface)},
  };
}

inline constexpr Index kTemplateClasses = 3;
inline constexpr double kBoundaryGap = 1e-3;

/// Smallest distance of any target angle to a point where the softmax
/// variant's target logit is not smooth (arccos clamp, sphereface pieces).
inline double softmax_boundary_gap(const EmbeddingBatch<double>& batch, const Matrix& templates, const LossConfig& cfg) {
  const auto units = unit_rows(batch.data);
  const auto w = unit_rows(templates);
  double gap = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < batch.size(); ++i) {
    const double c = units.directions.row(i).dot(w.directions.row(batch.labels[static_cast<std::size_t>(i)]));
    const double theta = std::acos(clamp_unit(c));
    gap = std::min({gap, theta, std::numbers::pi - theta});
    if (cfg.softmax_variant == SoftmaxVariant::sphereface) {
      const double m = cfg.margin;
      for (int k = 1; k < static_cast<int>(m); ++k) gap = std::min(gap, std::abs(theta - k * std::numbers::pi / m));
    }
  }
  return gap;
}

/// Smallest distance of any semihard band comparison (d_an vs d_ap and
/// d_an vs d_ap + m) or hinge slack to its switching point.
inline double semihard_boundary_gap(const EmbeddingBatch<double>& batch, const LossConfig& cfg) {
  const auto units = unit_rows(batch.data);
  auto dist = [&](Index i, Index j) { return (units.directions.row(i) - units.directions.row(j)).squaredNorm(); };
  double gap = std::numeric_limits<double>::infinity();
  const Index n = batch.size();
  for (Index a = 0; a < n; ++a) {
    for (Index p = 0; p < n; ++p) {
      if (p == a || batch.labels[a] != batch.labels[p]) continue;
      const double d_ap = dist(a, p);
      std::vector<double> negs;
      for (Index q = 0; q < n; ++q) {
        if (batch.labels[q] == batch.labels[a]) continue;
        const double d_an = dist(a, q);
        negs.push_back(d_an);
        gap = std::min({gap, std::abs(d_an - d_ap), std::abs(d_ap + cfg.margin - d_an)});
      }
      std::sort(negs.begin(), negs.end());
      if (negs.size() > 1) gap = std::min(gap, negs[1] - negs[0]);  // hardest-negative ties
    }
  }
  return gap;
}

inline double min_abs_slack(const EmbeddingBatch<double>& batch, const std::vector<Triplet>& triplets, double margin) {
  double gap = std::numeric_limits<double>::infinity();
  for (double s : triplet_slacks(batch, triplets, margin)) gap = std::min(gap, std::abs(s));
  return gap;
}

/// Draws a batch for `loss` away from its non-smooth set and returns the
/// gradient-check point for the embeddings (or templates, when `templates`).
inline GradCheckPoint sample_loss_point(const LossConfig& cfg, std::mt19937_64& rng, bool wrt_templates = false) {
  constexpr Index kRows = 6;
  constexpr Index kDim = 4;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    EmbeddingBatch<double> batch = random_batch(kRows, kDim, rng);
    Matrix templates;
    if (cfg.kind == LossKind::cos_softmax) {
      templates = random_rows(kTemplateClasses, kDim, rng);
      for (auto& y : batch.labels) y %= static_cast<int>(kTemplateClasses);
      if (softmax_boundary_gap(batch, templates, cfg) < kBoundaryGap) continue;
    }
    const std::uint64_t mining_seed = rng();
    switch (cfg.kind) {
      case LossKind::triplet:
        if (min_abs_slack(batch, all_triplets(batch.labels), cfg.margin) < kBoundaryGap) continue;
        break;
      case LossKind::semihard_triplet: {
        if (semihard_boundary_gap(batch, cfg) < kBoundaryGap) continue;
        if (min_abs_slack(batch, semihard_mine(batch, cfg, mining_seed), cfg.margin) < kBoundaryGap) continue;
        break;
      }
      case LossKind::multi_similarity:
        if (multi_similarity_filter_gap(batch, cfg) < kBoundaryGap) continue;
        break;
      default:
        break;
    }

    ClassTemplates<double> w{templates};
    LossContext<double> ctx;
    ctx.templates = &w;
    ctx.mining_seed = mining_seed;
    const auto out = evaluate_loss(batch, cfg, ctx);
    const auto labels = batch.labels;
    const PreciseMatrix precise_templates = templates.cast<Precise>();
    const PreciseMatrix precise_batch = batch.data.cast<Precise>();

    if (wrt_templates) {
      return {templates, *out.grad_templates, [cfg, labels, precise_batch](const PreciseMatrix& x) {
                ClassTemplates<Precise> tw{x};
                LossContext<Precise> c;
                c.templates = &tw;
                return evaluate_loss(EmbeddingBatch<Precise>{precise_batch, labels}, cfg, c).value;
              }};
    }
    // Mining is redone at every perturbed point; the boundary gap keeps the
    // selection identical to the one at the sampled point.
    return {batch.data, out.grad_embeddings, [cfg, labels, precise_templates, mining_seed](const PreciseMatrix& x) {
              ClassTemplates<Precise> tw{precise_templates};
              LossContext<Precise> c;
              c.templates = &tw;
              c.mining_seed = mining_seed;
              return evaluate_loss(EmbeddingBatch<Precise>{x, labels}, cfg, c).value;
            }};
  }
  throw Error(ErrorCode::BadParams, "could not sample a point away from the loss's non-smooth set");
}

/// Regularizer gradient check. In EMA and fixed modes mu is a constant of the
/// value function; in batch-mean mode mu is recomputed at every point, and
/// the frozen-mu gradient still matches because d/dmu vanishes at the mean.
inline GradCheckPoint sample_regularizer_point(const RegularizerConfig& cfg, std::mt19937_64& rng) {
  const EmbeddingBatch<double> batch = random_batch(6, 4, rng);
  RegularizerState state;
  if (cfg.mu_mode == MuMode::ema) {
    state.mu = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    state.initialized = true;
  }
  const auto [out, next] = evaluate_regularizer(batch, cfg, state);
  const auto labels = batch.labels;
  const double frozen_mu = next.mu;
  return {batch.data, out.grad_embeddings, [cfg, labels, frozen_mu](const PreciseMatrix& x) {
            EmbeddingBatch<Precise> b{x, labels};
            if (cfg.kind == RegularizerKind::l2reg) return l2_reg_loss(b, cfg).value;
            if (cfg.mu_mode == MuMode::batch_mean) return sec_loss(b, cfg, RegularizerState{}).first.value;
            return sec_loss_at(b, Precise(frozen_mu)).value;
          }};
}

inline CheckResult run_gradcheck_case(const GradCheckCase& c, int points, double tol, std::mt19937_64& rng) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    const auto pt = c.sample(rng);
    worst = std::max(worst, finite_diff_check(pt.value, pt.point, pt.analytic));
  }
  return {"gradcheck " + c.name, worst, tol, worst < tol, "max rel err"};
}

/// Least-squares slope of log(residual) against log(alpha).
inline double log_log_slope(const std::vector<double>& alphas, const std::vector<double>& residuals) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(alphas.size());
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    const double x = std::log(alphas[k]);
    const double y = std::log(residuals[k]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Alphas from 1e-2 down to 1e-4 in quarter decades.
inline std::vector<double> slope_alphas() {
  std::vector<double> a;
  for (int k = 0; k <= 8; ++k) a.push_back(std::pow(10.0, -2.0 - k / 4.0));
  return a;
}

/// A random loss evaluated on a random batch: the row picked for the
/// direction analysis, its embedding and dL/d(unit direction).
struct RowGradient {
  Vector f;
  Vector grad_unit;
};

inline RowGradient random_row_gradient(std::mt19937_64& rng) {
  auto losses = pair_losses();
  for (auto& l : softmax_losses()) losses.push_back(l);
  const auto& named = losses[std::uniform_int_distribution<std::size_t>(0, losses.size() - 1)(rng)];
  for (int attempt = 0; attempt < 1000; ++attempt) {
    EmbeddingBatch<double> batch = random_batch(8, 6, rng);
    ClassTemplates<double> w{random_rows(kTemplateClasses, 6, rng)};
    if (named.cfg.kind == LossKind::cos_softmax) {
      for (auto& y : batch.labels) y %= static_cast<int>(kTemplateClasses);
    }
    LossContext<double> ctx;
    ctx.templates = &w;
    ctx.mining_seed = rng();
    const auto out = evaluate_loss(batch, named.cfg, ctx);
    const Index row = std::uniform_int_distribution<Index>(0, batch.size() - 1)(rng);
    const double g = out.grad_embeddings.row(row).norm();
    if (!(g > 1e-8)) continue;
    // Rescaled (a loss weight) so a step of size alpha turns the direction by
    // about alpha; the second-order residual then stays far above rounding.
    const double norm = batch.data.row(row).norm();
    return {batch.data.row(row).transpose(), norm * out.grad_embeddings.row(row).transpose() * (norm / g)};
  }
  throw Error(ErrorCode::BadParams, "could not draw a row with a non-zero gradient");
}

inline Vector normalized(const Vector& v) { return v / v.norm(); }

}  // namespace verify_detail

/// Analytic gradients against fourth-order central differences evaluated in
/// quad precision, for every loss, template gradients, and each regularizer.
inline std::vector<CheckResult> verify_gradcheck(const VerifyOptions& opt) {
  using namespace verify_detail;
  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<GradCheckCase> cases;
  auto losses = pair_losses();
  for (auto& l : softmax_losses()) losses.push_back(l);
  for (const auto& l : losses) {
    const LossConfig cfg = l.cfg;
    cases.push_back({l.name, [cfg](std::mt19937_64& r) { return sample_loss_point(cfg, r); }});
  }
  for (const auto& l : softmax_losses()) {
    const LossConfig cfg = l.cfg;
    cases.push_back({l.name + " templates", [cfg](std::mt19937_64& r) { return sample_loss_point(cfg, r, true); }});
  }
  auto reg_case = [&](std::string name, RegularizerConfig cfg) {
    cases.push_back({std::move(name), [cfg](std::mt19937_64& r) { return sample_regularizer_point(cfg, r); }});
  };
  RegularizerConfig sec;
  sec.kind = RegularizerKind::sec;
  sec.mu_mode = MuMode::batch_mean;
  reg_case("sec batch_mean", sec);
  sec.mu_mode = MuMode::fixed;
  sec.mu_fixed = 1.3;
  reg_case("sec fixed", sec);
  sec.mu_mode = MuMode::ema;
  sec.rho = 0.1;
  reg_case("sec ema", sec);
  RegularizerConfig l2;
  l2.kind = RegularizerKind::l2reg;
  reg_case("l2reg", l2);
  for (const auto& c : opt.extra_cases) cases.push_back(c);

  std::vector<CheckResult> out;
  for (const auto& c : cases) out.push_back(run_gradcheck_case(c, opt.gradcheck_points, opt.gradcheck_tol, rng));
  return out;
}

/// Embedding gradients of angular losses are orthogonal to the embedding:
/// max over rows of |<f_i, g_i>| / (|f_i| |g_i|). Also checks that the
/// per-pair decomposition rebuilds the same gradient with tangent vectors.
inline std::vector<CheckResult> verify_prop1(const VerifyOptions& opt) {
  using namespace verify_detail;
  std::mt19937_64 rng(opt.seed ^ 0x51ed270b2c5a1e43ULL);
  auto losses = pair_losses();
  for (auto& l : softmax_losses()) losses.push_back(l);
  std::vector<CheckResult> out;
  for (const auto& l : losses) {
    double worst = 0.0;
    double worst_decomp = 0.0;
    for (int b = 0; b < opt.prop1_batches; ++b) {
      EmbeddingBatch<double> batch = random_batch(12, 8, rng);
      ClassTemplates<double> w{random_rows(4, 8, rng)};
      if (l.cfg.kind == LossKind::cos_softmax) {
        for (auto& y : batch.labels) y %= 4;
      }
      LossContext<double> ctx;
      ctx.templates = &w;
      ctx.mining_seed = rng();
      const auto res = evaluate_loss(batch, l.cfg, ctx);
      for (Index i = 0; i < batch.size(); ++i) {
        const double g = res.grad_embeddings.row(i).norm();
        if (g == 0.0) continue;
        const double ratio = std::abs(batch.data.row(i).dot(res.grad_embeddings.row(i))) / (batch.data.row(i).norm() * g);
        worst = std::max(worst, ratio);
      }
      if (l.cfg.kind != LossKind::cos_softmax) {
        const Matrix rebuilt = reconstruct_gradient(decompose_pair_gradients(res, batch), batch);
        const double scale = std::max(1e-300, res.grad_embeddings.cwiseAbs().maxCoeff());
        worst_decomp = std::max(worst_decomp, (rebuilt - res.grad_embeddings).cwiseAbs().maxCoeff() / scale);
      }
    }
    out.push_back({"prop1 orthogonality " + l.name, worst, 1e-10, worst < 1e-10, "max |cos|"});
    if (l.cfg.kind != LossKind::cos_softmax) {
      out.push_back({"prop1 pair decomposition " + l.name, worst_decomp, 1e-10, worst_decomp < 1e-10, "max rel err"});
    }
  }
  return out;
}

/// tan of the direction change scales as 1/c^2 when one embedding is scaled
/// by c with the pairs held fixed, and matches an actual SGD step.
inline std::vector<CheckResult> verify_prop2(const VerifyOptions& opt) {
  using namespace verify_detail;
  std::mt19937_64 rng(opt.seed ^ 0x2545f4914f6cdd1dULL);
  std::vector<CheckResult> out;
  for (const auto& l : pair_losses()) {
    double worst_scale = 0.0;
    double worst_step = 0.0;
    int checked = 0;
    for (int b = 0; b < opt.prop1_batches; ++b) {
      const EmbeddingBatch<double> batch = random_batch(8, 6, rng);
      const std::uint64_t mining_seed = rng();
      LossContext<double> ctx;
      ctx.mining_seed = mining_seed;
      const auto res = evaluate_loss(batch, l.cfg, ctx);
      const auto pairs = decompose_pair_gradients(res, batch);
      const Index i = std::uniform_int_distribution<Index>(0, batch.size() - 1)(rng);
      const auto base = tan_delta_closed_form(batch.data.row(i), pairs_for(i, pairs));
      if (!(base.tan_delta_theta > 1e-8)) continue;
      ++checked;

      // Actual SGD step on row i against the closed form times alpha.
      const double alpha = 0.05 * batch.data.row(i).norm() / res.grad_embeddings.row(i).norm();
      const Vector before = batch.data.row(i).transpose();
      const Vector after = before - alpha * res.grad_embeddings.row(i).transpose();
      const double measured = measure_direction_change(before, after).tan_delta_theta;
      worst_step = std::max(worst_step, std::abs(measured - alpha * base.tan_delta_theta) / (alpha * base.tan_delta_theta));

      for (double c : {0.5, 2.0, 10.0}) {
        // Scaling f_i leaves every direction, hence every pair, unchanged;
        // the loss is re-evaluated at the scaled batch.
        EmbeddingBatch<double> scaled = batch;
        scaled.data.row(i) *= c;
        LossContext<double> sctx;
        sctx.triplets = l.cfg.kind == LossKind::semihard_triplet
                            ? std::optional(semihard_mine(batch, l.cfg, mining_seed))
                            : std::nullopt;
        const auto sres = evaluate_loss(scaled, l.cfg, sctx);
        const auto spairs = decompose_pair_gradients(sres, scaled);
        const auto t = tan_delta_closed_form(scaled.data.row(i), pairs_for(i, spairs));
        worst_scale = std::max(worst_scale, std::abs(t.tan_delta_theta * c * c - base.tan_delta_theta) / base.tan_delta_theta);
      }
    }
    const bool enough = checked > opt.prop1_batches / 2;
    out.push_back({"prop2 1/c^2 scaling " + l.name, worst_scale, 1e-8, enough && worst_scale < 1e-8, "max rel err"});
    out.push_back({"prop2 closed form vs SGD step " + l.name, worst_step, 1e-8, enough && worst_step < 1e-8, "max rel err"});
  }
  return out;
}

namespace verify_detail {

struct SlopeStats {
  double min_slope = std::numeric_limits<double>::infinity();
  double max_slope = -std::numeric_limits<double>::infinity();

  void add(double s) {
    min_slope = std::min(min_slope, s);
    max_slope = std::max(max_slope, s);
  }
  double worst_deviation() const { return std::max(std::abs(min_slope - 2.0), std::abs(max_slope - 2.0)); }
  /// The fitted slope furthest from 2.
  double worst_slope() const { return std::abs(min_slope - 2.0) > std::abs(max_slope - 2.0) ? min_slope : max_slope; }
};

/// Fits the residual slope of the first-order direction prediction against
/// actual optimizer steps for random rows and states.
inline SlopeStats direction_update_slopes(OptimizerKind kind, int configs, std::mt19937_64& rng) {
  SlopeStats stats;
  const auto alphas = slope_alphas();
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < configs; ++c) {
    const auto rg = random_row_gradient(rng);
    const Index d = rg.f.size();
    const double norm = rg.f.norm();
    const Vector u = rg.f / norm;
    const Vector grad_f = (rg.grad_unit - u * u.dot(rg.grad_unit)) / norm;

    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.momentum = 0.9;
    cfg.adam_moment = AdamMoment::per_row;
    RowOptimizerState rs;
    rs.v = Vector::Zero(d);
    if (kind != OptimizerKind::sgd) {
      for (Index k = 0; k < d; ++k) rs.v(k) = normal(rng);
      rs.v *= grad_f.norm() * std::exp(normal(rng)) / rs.v.norm();
    }
    if (kind == OptimizerKind::adam) {
      rs.g = grad_f.squaredNorm() * std::exp(normal(rng));
      rs.t = std::uniform_int_distribution<long>(0, 50)(rng);
    }

    std::vector<double> residuals;
    for (double alpha : alphas) {
      cfg.lr = alpha;
      OptimizerState state;
      state.v = rs.v.transpose();
      state.t = rs.t;
      if (kind == OptimizerKind::adam) state.g = Matrix::Constant(1, 1, rs.g);
      const auto [next, ignored] = optimizer_step(Matrix(rg.f.transpose()), Matrix(grad_f.transpose()), cfg, state);
      const Vector actual = normalized(next.row(0).transpose());
      const Vector predicted = predicted_unit_update(rg.f, rg.grad_unit, cfg, rs);
      residuals.push_back((actual - predicted).norm());
    }
    stats.add(log_log_slope(alphas, residuals));
  }
  return stats;
}

}  // namespace verify_detail

/// SGD: first-order unit update u - alpha/|f|^2 P g_u. Also checks that
/// plain SGD never shrinks an embedding under an angular loss.
inline std::vector<CheckResult> verify_prop3(const VerifyOptions& opt) {
  using namespace verify_detail;
  std::mt19937_64 rng(opt.seed ^ 0x3c6ef372fe94f82bULL);
  const auto s = direction_update_slopes(OptimizerKind::sgd, opt.prop_configs, rng);
  std::vector<CheckResult> out;
  out.push_back({"prop3 sgd residual slope", s.worst_slope(), 0.15,
                 s.worst_deviation() <= 0.15, "slope, |slope - 2| <= 0.15"});

  double worst_shrink = 0.0;
  for (int c = 0; c < opt.prop_configs; ++c) {
    const auto rg = random_row_gradient(rng);
    const double norm = rg.f.norm();
    const Vector u = rg.f / norm;
    const Vector grad_f = (rg.grad_unit - u * u.dot(rg.grad_unit)) / norm;
    for (double alpha : slope_alphas()) {
      const double after = (rg.f - alpha * grad_f).norm();
      worst_shrink = std::max(worst_shrink, (norm - after) / norm);
    }
  }
  out.push_back({"prop3 sgd norm never decreases", worst_shrink, 1e-15, worst_shrink <= 1e-15, "max relative shrink"});
  return out;
}

inline std::vector<CheckResult> verify_prop4(const VerifyOptions& opt) {
  using namespace verify_detail;
  std::mt19937_64 rng(opt.seed ^ 0xa54ff53a5f1d36f1ULL);
  const auto s = direction_update_slopes(OptimizerKind::momentum, opt.prop_configs, rng);
  return {{"prop4 momentum residual slope", s.worst_slope(), 0.15, s.worst_deviation() <= 0.15,
           "slope, |slope - 2| <= 0.15"}};
}

inline std::vector<CheckResult> verify_prop5(const VerifyOptions& opt) {
  using namespace verify_detail;
  std::mt19937_64 rng(opt.seed ^ 0x510e527fade682d1ULL);
  const auto s = direction_update_slopes(OptimizerKind::adam, opt.prop_configs, rng);
  return {{"prop5 adam residual slope", s.worst_slope(), 0.15, s.worst_deviation() <= 0.15,
           "slope, |slope - 2| <= 0.15"}};
}

inline std::vector<CheckResult> run_suite(Suite suite, const VerifyOptions& opt) {
  std::vector<CheckResult> out;
  auto add = [&](std::vector<CheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  const bool all = suite == Suite::all;
  if (all || suite == Suite::prop1) add(verify_prop1(opt));
  if (all || suite == Suite::prop2) add(verify_prop2(opt));
  if (all || suite == Suite::prop3) add(verify_prop3(opt));
  if (all || suite == Suite::prop4) add(verify_prop4(opt));
  if (all || suite == Suite::prop5) add(verify_prop5(opt));
  if (all || suite == Suite::gradcheck) add(verify_gradcheck(opt));
  return out;
}

inline bool all_pass(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.pass; });
}

/// Fixed-width table: check, measured, threshold, PASS/FAIL.
inline void print_report(const std::vector<CheckResult>& results, std::ostream& os) {
  std::size_t width = 5;
  for (const auto& r : results) width = std::max(width, r.name.size());
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  os << pad("check", width) << "  " << pad("measured", 24) << "  " << pad("threshold", 10) << "  result\n";
  for (const auto& r : results) {
    os << pad(r.name, width) << "  " << pad(format_double(r.measured), 24) << "  " << pad(format_double(r.threshold), 10)
       << "  " << (r.pass ? "PASS" : "FAIL") << "\n";
  }
  os << (all_pass(results) ? "all checks passed" : "some checks FAILED") << "\n";
}

}  // namespace spherelab
