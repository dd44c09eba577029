#pragma once

// Retrieval and clustering quality: Recall@K under cosine similarity, and
// NMI / pairwise F1 of a seeded k-means clustering against the labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "spherelab/core.hpp"

namespace spherelab {

/// Fraction of queries whose k nearest neighbours (cosine similarity, the
/// query itself excluded, ties broken by lower index) include a same-label
/// point, for every k in `ks`.
inline std::vector<double> recall_at_k(const Matrix& embeddings, const std::vector<int>& labels, const std::vector<int>& ks) {
  const Index m = embeddings.rows();
  if (static_cast<Index>(labels.size()) != m) throw Error(ErrorCode::ShapeMismatch, "label count mismatch");
  if (ks.empty()) throw Error(ErrorCode::BadK, "no k given");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1 || ks[i] >= m) throw Error(ErrorCode::BadK, "k must lie in [1, M)");
    if (i > 0 && ks[i] < ks[i - 1]) throw Error(ErrorCode::BadK, "ks must be sorted ascending");
  }
  const auto units = unit_rows(embeddings);
  const Matrix sim = units.directions * units.directions.transpose();

  std::vector<long> hits(ks.size(), 0);
  for (Index q = 0; q < m; ++q) {
    // Rank of the nearest same-label point = 1 + number of points ranked ahead of it.
    std::optional<Index> best;
    for (Index j = 0; j < m; ++j) {
      if (j == q || labels[static_cast<std::size_t>(j)] != labels[static_cast<std::size_t>(q)]) continue;
      if (!best || sim(q, j) > sim(q, *best)) best = j;
    }
    if (!best) continue;
    const double s_best = sim(q, *best);
    long ahead = 0;
    for (Index j = 0; j < m; ++j) {
      if (j == q || j == *best) continue;
      if (sim(q, j) > s_best || (sim(q, j) == s_best && j < *best)) ++ahead;
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (ahead + 1 <= ks[i]) ++hits[i];
    }
  }
  std::vector<double> out(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) out[i] = static_cast<double>(hits[i]) / static_cast<double>(m);
  return out;
}

/// Normalized mutual information 2 I(A;B) / (H(A) + H(B)); 1 when both
/// partitions are trivial.
inline double nmi(const std::vector<int>& assignment, const std::vector<int>& labels) {
  if (assignment.size() != labels.size() || labels.empty()) throw Error(ErrorCode::ShapeMismatch, "partition size mismatch");
  const double n = static_cast<double>(labels.size());
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ca[assignment[i]] += 1;
    cb[labels[i]] += 1;
    joint[{assignment[i], labels[i]}] += 1;
  }
  auto entropy = [n](const std::map<int, double>& c) {
    double h = 0;
    for (const auto& [k, v] : c) h -= v / n * std::log(v / n);
    return h;
  };
  const double ha = entropy(ca);
  const double hb = entropy(cb);
  double mi = 0;
  for (const auto& [key, v] : joint) mi += v / n * std::log(v * n / (ca[key.first] * cb[key.second]));
  if (ha + hb <= 0) return 1.0;
  return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

/// F1 over sample pairs: a pair is predicted positive when both samples
/// share a cluster and is truly positive when they share a label.
inline double pairwise_f1(const std::vector<int>& assignment, const std::vector<int>& labels) {
  if (assignment.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "partition size mismatch");
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ca[assignment[i]] += 1;
    cb[labels[i]] += 1;
    joint[{assignment[i], labels[i]}] += 1;
  }
  auto pairs = [](double c) { return c * (c - 1) / 2; };
  double tp = 0, pred = 0, truth = 0;
  for (const auto& [k, v] : joint) tp += pairs(v);
  for (const auto& [k, v] : ca) pred += pairs(v);
  for (const auto& [k, v] : cb) truth += pairs(v);
  const double precision = pred > 0 ? tp / pred : 0.0;
  const double recall = truth > 0 ? tp / truth : 0.0;
  if (precision + recall <= 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

/// Lloyd's k-means with k-means++ seeding. Returns nullopt if a cluster
/// empties during the iterations.
inline std::optional<std::vector<int>> kmeans(const Matrix& points, int k, std::mt19937_64& rng, int max_iter = 100) {
  const Index m = points.rows();
  if (k < 1 || k > m) throw Error(ErrorCode::BadParams, "k-means needs 1 <= K <= M");
  Matrix centers(k, points.cols());
  std::uniform_int_distribution<Index> first(0, m - 1);
  centers.row(0) = points.row(first(rng));
  Vector d2(m);
  for (int c = 1; c < k; ++c) {
    for (Index i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) best = std::min(best, (points.row(i) - centers.row(j)).squaredNorm());
      d2(i) = best;
    }
    const double total = d2.sum();
    Index chosen = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (chosen = 0; chosen < m - 1; ++chosen) {
        target -= d2(chosen);
        if (target < 0) break;
      }
    } else {
      chosen = first(rng);
    }
    centers.row(c) = points.row(chosen);
  }

  std::vector<int> assign(static_cast<std::size_t>(m), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Index i = 0; i < m; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < m; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) return std::nullopt;
      centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    }
    if (!changed) break;
  }
  return assign;
}

struct ClusterScores {
  double nmi = 0.0;
  double f1 = 0.0;
};

/// k-means (K clusters, at most 100 iterations) on the unit directions,
/// scored against the labels. One re-seed is attempted if a cluster empties.
inline ClusterScores nmi_f1(const Matrix& embeddings, const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::BadParams, "clustering needs K >= 2");
  if (static_cast<Index>(labels.size()) != embeddings.rows()) throw Error(ErrorCode::ShapeMismatch, "label count mismatch");
  const auto units = unit_rows(embeddings);
  std::mt19937_64 rng(seed);
  auto assign = kmeans(units.directions, k, rng);
  if (!assign) assign = kmeans(units.directions, k, rng);
  if (!assign) throw Error(ErrorCode::DegenerateClustering, "a k-means cluster emptied twice");
  return {nmi(*assign, labels), pairwise_f1(*assign, labels)};
}

}  // namespace spherelab
