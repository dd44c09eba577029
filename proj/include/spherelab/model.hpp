#pragma once

// Embedding models: a free table with one trainable row per sample, and a
// one-hidden-layer tanh MLP mapping input points to embeddings.

#include <cmath>
#include <random>
#include <string_view>
#include <vector>

#include "spherelab/core.hpp"
#include "spherelab/dataset.hpp"

namespace spherelab {

enum class ModelKind { free_table, mlp };

inline std::string_view to_string(ModelKind k) { return k == ModelKind::mlp ? "mlp" : "free_table"; }

struct ModelConfig {
  ModelKind kind = ModelKind::free_table;
  int dim = 32;
  int hidden = 64;
  double init_scale = 1.0;
};

/// Parameters are stored as a list of matrices so one optimizer state can
/// be kept per group. free_table: {table}. mlp: {W1, b1, W2, b2}.
class Model {
 public:
  Model(const ModelConfig& cfg, const SyntheticDataset& ds, std::mt19937_64& rng) : cfg_(cfg), inputs_(&ds.points) {
    if (cfg.dim < 2) throw Error(ErrorCode::BadParams, "embedding dimension must be at least 2");
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gaussian = [&](Index r, Index c, double scale) {
      Matrix m(r, c);
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = scale * normal(rng);
      return m;
    };
    const Index din = ds.points.cols();
    if (cfg.kind == ModelKind::free_table) {
      // A random linear read-out of the points, so the table starts with the
      // data's cluster structure and its spread of norms.
      const Matrix projection = gaussian(din, cfg.dim, cfg.init_scale / std::sqrt(static_cast<double>(din)));
      params_.push_back(ds.points * projection);
    } else {
      if (cfg.hidden < 1) throw Error(ErrorCode::BadParams, "hidden width must be positive");
      params_.push_back(gaussian(din, cfg.hidden, cfg.init_scale / std::sqrt(static_cast<double>(din))));
      params_.push_back(Matrix::Zero(1, cfg.hidden));
      params_.push_back(gaussian(cfg.hidden, cfg.dim, cfg.init_scale / std::sqrt(static_cast<double>(cfg.hidden))));
      params_.push_back(Matrix::Zero(1, cfg.dim));
    }
  }

  ModelKind kind() const { return cfg_.kind; }
  int dim() const { return cfg_.dim; }

  std::vector<Matrix>& params() { return params_; }
  const std::vector<Matrix>& params() const { return params_; }

  Matrix forward(const std::vector<Index>& ids) const {
    if (cfg_.kind == ModelKind::free_table) return params_[0](ids, Eigen::all);
    const Matrix x = (*inputs_)(ids, Eigen::all);
    return hidden(x) * params_[2] + params_[3].replicate(x.rows(), 1);
  }

  Matrix embed_all() const {
    if (cfg_.kind == ModelKind::free_table) return params_[0];
    return hidden(*inputs_) * params_[2] + params_[3].replicate(inputs_->rows(), 1);
  }

  /// Parameter gradients given dL/d(embedding) for the rows in `ids`.
  std::vector<Matrix> backward(const std::vector<Index>& ids, const Matrix& grad_embeddings) const {
    std::vector<Matrix> grads;
    if (cfg_.kind == ModelKind::free_table) {
      Matrix g = Matrix::Zero(params_[0].rows(), params_[0].cols());
      for (std::size_t r = 0; r < ids.size(); ++r) g.row(ids[r]) += grad_embeddings.row(static_cast<Index>(r));
      grads.push_back(std::move(g));
      return grads;
    }
    const Matrix x = (*inputs_)(ids, Eigen::all);
    const Matrix h = hidden(x);
    const Matrix dh = ((grad_embeddings * params_[2].transpose()).array() * (1.0 - h.array().square())).matrix();
    grads.push_back(x.transpose() * dh);
    grads.push_back(dh.colwise().sum());
    grads.push_back(h.transpose() * grad_embeddings);
    grads.push_back(grad_embeddings.colwise().sum());
    return grads;
  }

 private:
  Matrix hidden(const Matrix& x) const {
    return (x * params_[0] + params_[1].replicate(x.rows(), 1)).array().tanh().matrix();
  }

  ModelConfig cfg_;
  const Matrix* inputs_;
  std::vector<Matrix> params_;
};

}  // namespace spherelab
