#pragma once

// Training loop: sample a class-balanced batch, embed it, add the metric
// loss and the scheduled norm penalty, step the optimizer, and log norm and
// direction-change statistics plus periodic retrieval/clustering metrics.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spherelab/core.hpp"
#include "spherelab/dataset.hpp"
#include "spherelab/losses.hpp"
#include "spherelab/metrics.hpp"
#include "spherelab/model.hpp"
#include "spherelab/optimizers.hpp"
#include "spherelab/regularizers.hpp"

namespace spherelab {

/// Everything a run needs. Defaults follow the triplet-loss setting on a
/// 10-class synthetic set.
struct RunConfig {
  SyntheticParams dataset;
  ModelConfig model;
  BatchSpec batch;
  bool metric_loss = true;  // false: optimize the regularizer alone
  LossConfig loss = LossConfig::defaults(LossKind::triplet);
  RegularizerConfig regularizer;
  OptimizerConfig optimizer = {OptimizerKind::adam, 1e-3};
  long iterations = 2000;
  long eval_interval = 100;
  std::vector<int> recall_ks = {1, 2, 4, 8};
  bool cluster_metrics = true;
  int hist_bins = 20;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
};

struct IterRecord {
  long iter = 0;
  double loss = 0.0;      // metric loss
  double sec_loss = 0.0;  // eta_t times the regularizer value
  double norm_mean = 0.0;
  double norm_var = 0.0;
  double dtheta_mean = 0.0;
  double dtheta_var = 0.0;
};

struct MetricRecord {
  long iter = 0;
  std::vector<double> recall;  // one per RunLog::recall_ks entry
  double nmi = 0.0;
  double f1 = 0.0;
  bool clustering_ok = true;
};

struct RunLog {
  std::vector<int> recall_ks;
  std::vector<IterRecord> records;
  std::vector<MetricRecord> metrics;
  NormStats final_norms;
  bool diverged = false;
  std::string message;
};

/// Thrown when the loss turns non-finite or an embedding norm exceeds 1e12;
/// carries everything logged up to that point.
class DivergenceDetected : public Error {
 public:
  DivergenceDetected(const std::string& what, RunLog partial)
      : Error(ErrorCode::DivergenceDetected, what), partial_(std::move(partial)) {}

  const RunLog& partial() const noexcept { return partial_; }

 private:
  RunLog partial_;
};

inline constexpr double kDivergenceNorm = 1e12;

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double population_variance(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline MetricRecord evaluate_metrics(const Matrix& embeddings, const SyntheticDataset& ds, const std::vector<int>& ks,
                                     bool cluster, std::uint64_t seed, long iter) {
  MetricRecord rec;
  rec.iter = iter;
  if (!ks.empty()) rec.recall = recall_at_k(embeddings, ds.labels, ks);
  if (cluster) {
    try {
      const auto scores = nmi_f1(embeddings, ds.labels, ds.classes, seed);
      rec.nmi = scores.nmi;
      rec.f1 = scores.f1;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateClustering) throw;
      rec.clustering_ok = false;
    }
  }
  return rec;
}

}  // namespace detail

inline void validate(const RunConfig& cfg) {
  cfg.loss.validate();
  cfg.regularizer.validate();
  cfg.optimizer.validate();
  if (cfg.iterations < 0) throw Error(ErrorCode::ConfigError, "iterations must be non-negative");
  if (cfg.eval_interval < 1) throw Error(ErrorCode::ConfigError, "eval_interval must be positive");
  if (cfg.hist_bins < 1) throw Error(ErrorCode::ConfigError, "hist_bins must be positive");
  if (cfg.metric_loss && cfg.loss.kind != LossKind::cos_softmax && cfg.batch.samples_per_class < 2) {
    throw Error(ErrorCode::ConfigError, "pair-based losses need batch.samples_per_class >= 2");
  }
  if (cfg.metric_loss && cfg.loss.kind == LossKind::ntxent && cfg.batch.samples_per_class != 2) {
    throw Error(ErrorCode::ConfigError, "ntxent pairs rows 2i, 2i+1: batch.samples_per_class must be 2");
  }
}

/// Runs cfg.iterations steps. Deterministic for a fixed config.
inline RunLog train(const RunConfig& cfg) {
  validate(cfg);
  const SyntheticDataset ds = gen_synthetic(cfg.dataset);
  std::mt19937_64 rng(cfg.seed);
  Model model(cfg.model, ds, rng);

  std::vector<int> ks;
  for (int k : cfg.recall_ks) {
    if (k < ds.size()) ks.push_back(k);
  }

  std::optional<ClassTemplates<double>> templates;
  OptimizerState template_state;
  if (cfg.metric_loss && cfg.loss.kind == LossKind::cos_softmax) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix w(ds.classes, cfg.model.dim);
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = normal(rng);
    templates = ClassTemplates<double>{std::move(w)};
  }

  std::vector<OptimizerState> states(model.params().size());
  RegularizerState reg_state;
  if (cfg.regularizer.kind == RegularizerKind::sec && cfg.regularizer.mu_mode == MuMode::ema &&
      cfg.regularizer.mu_init == MuInit::full_pass) {
    reg_state.mu = static_cast<double>(row_norms(model.embed_all()).mean());
    reg_state.initialized = true;
  }

  RunLog log;
  log.recall_ks = ks;
  log.records.reserve(static_cast<std::size_t>(cfg.iterations));
  log.metrics.push_back(detail::evaluate_metrics(model.embed_all(), ds, ks, cfg.cluster_metrics, cfg.seed, 0));

  std::vector<double> dtheta;
  for (long it = 1; it <= cfg.iterations; ++it) {
    const auto ids = sample_batch(ds, cfg.batch, rng);
    EmbeddingBatch<double> batch;
    batch.data = model.forward(ids);
    batch.labels.reserve(ids.size());
    for (Index id : ids) batch.labels.push_back(ds.labels[static_cast<std::size_t>(id)]);

    const NormStats stats = batch_norm_stats(batch, cfg.hist_bins);
    const double max_norm = static_cast<double>(row_norms(batch.data).maxCoeff());
    if (!std::isfinite(max_norm) || max_norm > kDivergenceNorm) {
      log.diverged = true;
      log.message = "embedding norm exceeded 1e12 at iteration " + std::to_string(it);
      throw DivergenceDetected(log.message, std::move(log));
    }

    IterRecord rec;
    rec.iter = it;
    rec.norm_mean = stats.mean;
    rec.norm_var = stats.variance;

    Matrix grad = Matrix::Zero(batch.size(), batch.dim());
    std::optional<Matrix> template_grad;
    if (cfg.metric_loss) {
      LossContext<double> ctx;
      ctx.templates = templates ? &*templates : nullptr;
      if (cfg.loss.kind == LossKind::semihard_triplet) ctx.mining_seed = rng();
      auto out = evaluate_loss(batch, cfg.loss, ctx);
      rec.loss = out.value;
      grad = std::move(out.grad_embeddings);
      template_grad = std::move(out.grad_templates);
    }
    const double eta = eta_schedule(cfg.regularizer, it - 1, std::max(cfg.iterations, 1L));
    auto [reg_out, next_reg_state] = evaluate_regularizer(batch, cfg.regularizer, reg_state);
    reg_state = next_reg_state;
    rec.sec_loss = eta * reg_out.value;
    grad += eta * reg_out.grad_embeddings;

    if (!std::isfinite(rec.loss) || !std::isfinite(rec.sec_loss) || !grad.allFinite()) {
      log.diverged = true;
      log.message = "non-finite loss at iteration " + std::to_string(it);
      throw DivergenceDetected(log.message, std::move(log));
    }

    const auto param_grads = model.backward(ids, grad);
    for (std::size_t g = 0; g < param_grads.size(); ++g) {
      auto [next, state] = optimizer_step(model.params()[g], param_grads[g], cfg.optimizer, std::move(states[g]));
      model.params()[g] = std::move(next);
      states[g] = std::move(state);
    }
    if (templates && template_grad) {
      auto [next, state] = optimizer_step(templates->weights, *template_grad, cfg.optimizer, std::move(template_state));
      templates->weights = std::move(next);
      template_state = std::move(state);
    }

    const Matrix after = model.forward(ids);
    dtheta.clear();
    for (Index r = 0; r < after.rows(); ++r) {
      dtheta.push_back(measure_direction_change(batch.data.row(r), after.row(r)).delta_theta);
    }
    rec.dtheta_mean = detail::mean_of(dtheta);
    rec.dtheta_var = detail::population_variance(dtheta);
    log.records.push_back(rec);

    if (it % cfg.eval_interval == 0 || it == cfg.iterations) {
      log.metrics.push_back(detail::evaluate_metrics(model.embed_all(), ds, ks, cfg.cluster_metrics, cfg.seed, it));
    }
  }

  EmbeddingBatch<double> all{model.embed_all(), ds.labels};
  log.final_norms = batch_norm_stats(all, cfg.hist_bins);
  return log;
}

}  // namespace spherelab
