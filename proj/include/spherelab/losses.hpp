#pragma once

// Angular metric-learning losses with analytic gradients.
//
// Every pair-based loss is written as L = L(S) over similarity terms
// S_ij between unit directions. The gradient is formed by accumulating
// phi_ij = dL/dS_ij into dL/du (u = f/|f|) and pushing it back through the
// normalization, which keeps it in the tangent plane of each embedding.
// The (i, j, phi_ij) triples are recorded so decompose_pair_gradients can
// rebuild the same gradient from the pair-weight form independently.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "spherelab/core.hpp"

namespace spherelab {

enum class LossKind { triplet, semihard_triplet, npair, multi_similarity, cos_softmax, ntxent };
enum class Distance { normalized_euclidean, cosine };
enum class SoftmaxVariant { plain, sphereface, cosface, arcface };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::triplet: return "triplet";
    case LossKind::semihard_triplet: return "semihard_triplet";
    case LossKind::npair: return "npair";
    case LossKind::multi_similarity: return "multi_similarity";
    case LossKind::cos_softmax: return "cos_softmax";
    case LossKind::ntxent: return "ntxent";
  }
  return "?";
}

inline std::string_view to_string(Distance d) {
  return d == Distance::cosine ? "cosine" : "normalized_euclidean";
}

inline std::string_view to_string(SoftmaxVariant v) {
  switch (v) {
    case SoftmaxVariant::plain: return "plain";
    case SoftmaxVariant::sphereface: return "sphereface";
    case SoftmaxVariant::cosface: return "cosface";
    case SoftmaxVariant::arcface: return "arcface";
  }
  return "?";
}

/// kappa in dS_ij/df_i = (kappa/|f_i|)(-u_j + cos(theta_ij) u_i).
inline double kappa(Distance d) { return d == Distance::cosine ? -1.0 : 2.0; }

struct MultiSimilarityParams {
  double epsilon = 0.1;
  double lambda = 0.5;
  double alpha = 2.0;
  double beta = 40.0;
};

struct LossConfig {
  LossKind kind = LossKind::triplet;
  double margin = 1.0;
  double scale = 25.0;
  double temperature = 0.5;
  Distance distance = Distance::normalized_euclidean;
  SoftmaxVariant softmax_variant = SoftmaxVariant::plain;
  MultiSimilarityParams ms;

  /// Defaults used in the deep metric learning, face recognition and
  /// contrastive experiments.
  static LossConfig defaults(LossKind kind, SoftmaxVariant variant = SoftmaxVariant::cosface) {
    LossConfig cfg;
    cfg.kind = kind;
    switch (kind) {
      case LossKind::triplet:
        cfg.margin = 1.0;
        cfg.distance = Distance::normalized_euclidean;
        break;
      case LossKind::semihard_triplet:
        cfg.margin = 0.2;
        cfg.distance = Distance::normalized_euclidean;
        break;
      case LossKind::npair:
        cfg.scale = 25.0;
        cfg.distance = Distance::cosine;
        break;
      case LossKind::multi_similarity:
        cfg.distance = Distance::cosine;
        cfg.ms = MultiSimilarityParams{};
        break;
      case LossKind::cos_softmax:
        cfg.distance = Distance::cosine;
        cfg.softmax_variant = variant;
        cfg.scale = 64.0;
        switch (variant) {
          case SoftmaxVariant::plain: cfg.margin = 0.0; break;
          case SoftmaxVariant::sphereface: cfg.margin = 3.0; break;
          case SoftmaxVariant::cosface: cfg.margin = 0.35; break;
          case SoftmaxVariant::arcface: cfg.margin = 0.45; break;
        }
        break;
      case LossKind::ntxent:
        cfg.temperature = 0.5;
        cfg.distance = Distance::cosine;
        break;
    }
    return cfg;
  }

  void validate() const {
    if (!(scale > 0)) throw Error(ErrorCode::BadParams, "scale must be positive");
    if (!(temperature > 0)) throw Error(ErrorCode::BadParams, "temperature must be positive");
    if (!(margin >= 0)) throw Error(ErrorCode::BadParams, "margin must be non-negative");
    if (kind == LossKind::cos_softmax && softmax_variant == SoftmaxVariant::sphereface &&
        margin != floor(margin)) {
      throw Error(ErrorCode::BadParams, "sphereface margin must be an integer");
    }
    if (kind == LossKind::multi_similarity && !(ms.alpha > 0 && ms.beta > 0)) {
      throw Error(ErrorCode::BadParams, "multi-similarity alpha and beta must be positive");
    }
  }
};

/// phi = dL/dS_ij for the similarity term between rows i and j, seen from i.
struct PairWeight {
  Index i = 0;
  Index j = 0;
  double phi = 0.0;
};

/// One pair's share of dL/df_i: weight * tangent / |f_i|, where
/// tangent = kappa (-u_j + cos(theta_ij) u_i) is orthogonal to u_i.
struct PairGradient {
  Index i = 0;
  Index j = 0;
  double weight = 0.0;
  Vector tangent;
};

template <class Real = double>
struct ClassTemplates {
  MatrixX<Real> weights;  // K x D

  Index classes() const { return weights.rows(); }
};

template <class Real = double>
struct LossOutput {
  Real value{};
  MatrixX<Real> grad_embeddings;
  std::optional<MatrixX<Real>> grad_templates;
  std::vector<PairWeight> pair_records;
  LossKind kind = LossKind::triplet;
  Distance distance = Distance::cosine;
};

struct Triplet {
  Index anchor = 0;
  Index positive = 0;
  Index negative = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

namespace detail {

/// Accumulates phi_ij * dS_ij/du into dL/du and records pair weights.
template <class Real>
class PairAccumulator {
 public:
  PairAccumulator(const UnitRows<Real>& units, Distance distance)
      : units_(units),
        distance_(distance),
        grad_unit_(MatrixX<Real>::Zero(units.directions.rows(), units.directions.cols())) {}

  Real similarity(Index i, Index j) const {
    const auto ui = units_.directions.row(i);
    const auto uj = units_.directions.row(j);
    if (distance_ == Distance::cosine) return ui.dot(uj);
    return (ui - uj).squaredNorm();
  }

  void add(Index i, Index j, Real phi) {
    const auto ui = units_.directions.row(i);
    const auto uj = units_.directions.row(j);
    if (distance_ == Distance::cosine) {
      grad_unit_.row(i) += phi * uj;
      grad_unit_.row(j) += phi * ui;
    } else {
      grad_unit_.row(i) += Real(2) * phi * (ui - uj);
      grad_unit_.row(j) += Real(2) * phi * (uj - ui);
    }
    records_.push_back({i, j, static_cast<double>(phi)});
    records_.push_back({j, i, static_cast<double>(phi)});
  }

  LossOutput<Real> finish(Real value, LossKind kind) && {
    LossOutput<Real> out;
    out.value = value;
    out.grad_embeddings = backprop_normalization(grad_unit_, units_);
    out.pair_records = std::move(records_);
    out.kind = kind;
    out.distance = distance_;
    return out;
  }

 private:
  const UnitRows<Real>& units_;
  Distance distance_;
  MatrixX<Real> grad_unit_;
  std::vector<PairWeight> records_;
};

/// log(1 + sum_k exp(z_k)), stable for large z.
template <class Real>
Real log1p_sum_exp(const std::vector<Real>& z) {
  Real top = 0;
  for (Real v : z) top = std::max(top, v);
  Real acc = exp(-top);
  for (Real v : z) acc += exp(v - top);
  return top + log(acc);
}

inline void require_labels(const std::vector<int>& labels, Index n) {
  if (static_cast<Index>(labels.size()) != n) {
    throw Error(ErrorCode::ShapeMismatch, "label count does not match batch rows");
  }
}

inline bool has_positive_pair(const std::vector<int>& labels) {
  for (std::size_t a = 0; a < labels.size(); ++a) {
    for (std::size_t b = a + 1; b < labels.size(); ++b) {
      if (labels[a] == labels[b]) return true;
    }
  }
  return false;
}

}  // namespace detail

/// Every (a, p, n) with y_a = y_p != y_n and a != p, in index order.
inline std::vector<Triplet> all_triplets(const std::vector<int>& labels) {
  std::vector<Triplet> out;
  const auto n = static_cast<Index>(labels.size());
  for (Index a = 0; a < n; ++a) {
    for (Index p = 0; p < n; ++p) {
      if (p == a || labels[a] != labels[p]) continue;
      for (Index q = 0; q < n; ++q) {
        if (labels[q] != labels[a]) out.push_back({a, p, q});
      }
    }
  }
  return out;
}

/// Hinge slack |f_a - f_p|^2 - |f_a - f_n|^2 + m on unit directions.
template <class Real>
std::vector<Real> triplet_slacks(const EmbeddingBatch<Real>& batch, const std::vector<Triplet>& triplets,
                                 double margin) {
  const auto units = unit_rows(batch.data);
  std::vector<Real> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) {
    const auto ua = units.directions.row(t.anchor);
    out.push_back((ua - units.directions.row(t.positive)).squaredNorm() -
                  (ua - units.directions.row(t.negative)).squaredNorm() + Real(margin));
  }
  return out;
}

/// Mean hinge triplet loss over the given triplets on normalized Euclidean
/// distances. Triplets at or below the hinge contribute zero gradient.
template <class Real>
LossOutput<Real> triplet_loss(const EmbeddingBatch<Real>& batch, const std::vector<Triplet>& triplets,
                              const LossConfig& cfg) {
  cfg.validate();
  if (cfg.distance != Distance::normalized_euclidean) {
    throw Error(ErrorCode::BadParams, "triplet loss is defined on normalized Euclidean distance");
  }
  const Index n = batch.size();
  detail::require_labels(batch.labels, n);
  if (triplets.empty()) throw Error(ErrorCode::NoValidPairs, "no triplets given");
  for (const auto& t : triplets) {
    const bool in_range = t.anchor >= 0 && t.anchor < n && t.positive >= 0 && t.positive < n &&
                          t.negative >= 0 && t.negative < n;
    if (!in_range || t.anchor == t.positive || batch.labels[t.anchor] != batch.labels[t.positive] ||
        batch.labels[t.anchor] == batch.labels[t.negative]) {
      throw Error(ErrorCode::InvalidTriplet, "triplet (" + std::to_string(t.anchor) + ", " +
                                                 std::to_string(t.positive) + ", " +
                                                 std::to_string(t.negative) + ") violates y_a = y_p != y_n");
    }
  }

  const auto units = unit_rows(batch.data);
  detail::PairAccumulator<Real> acc(units, Distance::normalized_euclidean);
  const Real inv_t = Real(1) / static_cast<Real>(triplets.size());
  Real value = 0;
  for (const auto& t : triplets) {
    const Real slack = acc.similarity(t.anchor, t.positive) - acc.similarity(t.anchor, t.negative) + Real(cfg.margin);
    if (slack <= 0) continue;
    value += slack * inv_t;
    acc.add(t.anchor, t.positive, inv_t);
    acc.add(t.anchor, t.negative, -inv_t);
  }
  return std::move(acc).finish(value, LossKind::triplet);
}

/// For each anchor-positive pair picks a negative inside the semihard band
/// d_ap < d_an < d_ap + m (uniformly at random among candidates); without
/// one, falls back to the hardest negative (smallest d_an).
template <class Real>
std::vector<Triplet> semihard_mine(const EmbeddingBatch<Real>& batch, const LossConfig& cfg, std::uint64_t rng_seed) {
  const Index n = batch.size();
  detail::require_labels(batch.labels, n);
  if (!detail::has_positive_pair(batch.labels)) {
    throw Error(ErrorCode::NoValidPairs, "no class in the batch has two samples");
  }
  const auto units = unit_rows(batch.data);
  auto dist = [&](Index i, Index j) { return (units.directions.row(i) - units.directions.row(j)).squaredNorm(); };

  std::mt19937_64 rng(rng_seed);
  std::vector<Triplet> out;
  std::vector<Index> band;
  for (Index a = 0; a < n; ++a) {
    for (Index p = 0; p < n; ++p) {
      if (p == a || batch.labels[a] != batch.labels[p]) continue;
      const Real d_ap = dist(a, p);
      band.clear();
      Index hardest = -1;
      Real hardest_d = 0;
      for (Index q = 0; q < n; ++q) {
        if (batch.labels[q] == batch.labels[a]) continue;
        const Real d_an = dist(a, q);
        if (d_an > d_ap && d_an < d_ap + Real(cfg.margin)) band.push_back(q);
        if (hardest < 0 || d_an < hardest_d) {
          hardest = q;
          hardest_d = d_an;
        }
      }
      if (hardest < 0) continue;
      Index chosen = hardest;
      if (!band.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, band.size() - 1);
        chosen = band[pick(rng)];
      }
      out.push_back({a, p, chosen});
    }
  }
  if (out.empty()) throw Error(ErrorCode::NoValidPairs, "no anchor has both a positive and a negative");
  return out;
}

/// Normalized N-pair (tuplet) loss: for every anchor and each of its
/// positives, log(1 + sum_n exp(s (S_an - S_ap))); averaged over tuples.
template <class Real>
LossOutput<Real> npair_loss(const EmbeddingBatch<Real>& batch, const LossConfig& cfg) {
  cfg.validate();
  const Index n = batch.size();
  detail::require_labels(batch.labels, n);
  if (!detail::has_positive_pair(batch.labels)) {
    throw Error(ErrorCode::NoValidPairs, "no class in the batch has two samples");
  }
  const auto units = unit_rows(batch.data);
  detail::PairAccumulator<Real> acc(units, Distance::cosine);
  const Real s = Real(cfg.scale);

  struct Tuple {
    Index a, p;
  };
  std::vector<Tuple> tuples;
  for (Index a = 0; a < n; ++a) {
    bool has_negative = false;
    for (Index q = 0; q < n; ++q) has_negative = has_negative || batch.labels[q] != batch.labels[a];
    if (!has_negative) continue;
    for (Index p = 0; p < n; ++p) {
      if (p != a && batch.labels[p] == batch.labels[a]) tuples.push_back({a, p});
    }
  }
  if (tuples.empty()) throw Error(ErrorCode::NoValidPairs, "no anchor has both a positive and a negative");

  const Real inv_t = Real(1) / static_cast<Real>(tuples.size());
  Real value = 0;
  std::vector<Real> z;
  std::vector<Index> negatives;
  for (const auto& [a, p] : tuples) {
    const Real s_ap = acc.similarity(a, p);
    z.clear();
    negatives.clear();
    for (Index q = 0; q < n; ++q) {
      if (batch.labels[q] == batch.labels[a]) continue;
      negatives.push_back(q);
      z.push_back(s * (acc.similarity(a, q) - s_ap));
    }
    const Real lse = detail::log1p_sum_exp(z);
    value += lse * inv_t;
    // d/dz_n = exp(z_n - lse); S_ap enters every z_n with weight -s.
    Real total = 0;
    for (std::size_t k = 0; k < negatives.size(); ++k) {
      const Real resp = exp(z[k] - lse);
      total += resp;
      acc.add(a, negatives[k], s * resp * inv_t);
    }
    acc.add(a, p, -s * total * inv_t);
  }
  return std::move(acc).finish(value, LossKind::npair);
}

/// Distance of the closest similarity to a multi-similarity mining threshold;
/// finite-difference checks need this to stay clear of zero.
template <class Real>
Real multi_similarity_filter_gap(const EmbeddingBatch<Real>& batch, const LossConfig& cfg) {
  const auto units = unit_rows(batch.data);
  const MatrixX<Real> sim = units.directions * units.directions.transpose();
  const Index n = batch.size();
  const Real eps = Real(cfg.ms.epsilon);
  Real gap = std::numeric_limits<Real>::infinity();
  for (Index a = 0; a < n; ++a) {
    Real min_pos = std::numeric_limits<Real>::infinity();
    Real max_neg = -std::numeric_limits<Real>::infinity();
    for (Index j = 0; j < n; ++j) {
      if (j == a) continue;
      if (batch.labels[j] == batch.labels[a]) min_pos = std::min(min_pos, sim(a, j));
      else max_neg = std::max(max_neg, sim(a, j));
    }
    if (!std::isfinite(static_cast<double>(min_pos)) || !std::isfinite(static_cast<double>(max_neg))) continue;
    for (Index j = 0; j < n; ++j) {
      if (j == a) continue;
      if (batch.labels[j] == batch.labels[a]) gap = std::min(gap, abs(sim(a, j) - eps - max_neg));
      else gap = std::min(gap, abs(sim(a, j) + eps - min_pos));
    }
  }
  return gap;
}

/// Multi-similarity loss with epsilon-margin pair mining. Negatives are kept
/// when S_an + eps > min positive similarity, positives when
/// S_ap - eps < max negative similarity; anchors left without a kept positive
/// or negative contribute nothing. Summed anchor losses are divided by N.
template <class Real>
LossOutput<Real> multi_similarity_loss(const EmbeddingBatch<Real>& batch, const LossConfig& cfg) {
  cfg.validate();
  const Index n = batch.size();
  detail::require_labels(batch.labels, n);
  if (!detail::has_positive_pair(batch.labels)) {
    throw Error(ErrorCode::NoValidPairs, "no class in the batch has two samples");
  }
  const auto units = unit_rows(batch.data);
  detail::PairAccumulator<Real> acc(units, Distance::cosine);
  const Real eps = Real(cfg.ms.epsilon);
  const Real lambda = Real(cfg.ms.lambda);
  const Real alpha = Real(cfg.ms.alpha);
  const Real beta = Real(cfg.ms.beta);
  const Real inv_n = Real(1) / static_cast<Real>(n);

  Real value = 0;
  std::vector<Index> pos, neg;
  std::vector<Real> zp, zn;
  for (Index a = 0; a < n; ++a) {
    Real min_pos = std::numeric_limits<Real>::infinity();
    Real max_neg = -std::numeric_limits<Real>::infinity();
    bool any_pos = false, any_neg = false;
    for (Index j = 0; j < n; ++j) {
      if (j == a) continue;
      const Real sim = acc.similarity(a, j);
      if (batch.labels[j] == batch.labels[a]) {
        any_pos = true;
        min_pos = std::min(min_pos, sim);
      } else {
        any_neg = true;
        max_neg = std::max(max_neg, sim);
      }
    }
    if (!any_pos || !any_neg) continue;

    pos.clear();
    neg.clear();
    zp.clear();
    zn.clear();
    for (Index j = 0; j < n; ++j) {
      if (j == a) continue;
      const Real sim = acc.similarity(a, j);
      if (batch.labels[j] == batch.labels[a]) {
        if (sim - eps < max_neg) {
          pos.push_back(j);
          zp.push_back(-alpha * (sim - lambda));
        }
      } else if (sim + eps > min_pos) {
        neg.push_back(j);
        zn.push_back(beta * (sim - lambda));
      }
    }
    if (pos.empty() || neg.empty()) continue;

    const Real lse_p = detail::log1p_sum_exp(zp);
    const Real lse_n = detail::log1p_sum_exp(zn);
    value += (lse_p / alpha + lse_n / beta) * inv_n;
    for (std::size_t k = 0; k < pos.size(); ++k) acc.add(a, pos[k], -exp(zp[k] - lse_p) * inv_n);
    for (std::size_t k = 0; k < neg.size(); ++k) acc.add(a, neg[k], exp(zn[k] - lse_n) * inv_n);
  }
  return std::move(acc).finish(value, LossKind::multi_similarity);
}

namespace detail {

/// Target-logit similarity S(cos theta) and dS/dcos for the margin variants.
template <class Real>
std::pair<Real, Real> target_similarity(Real c, const LossConfig& cfg) {
  const Real m = Real(cfg.margin);
  const auto variant = cfg.softmax_variant;
  const bool margin_free = variant == SoftmaxVariant::plain ||
                           (variant == SoftmaxVariant::sphereface ? cfg.margin <= 1.0 : cfg.margin == 0.0);
  if (margin_free) return {c, Real(1)};
  if (variant == SoftmaxVariant::cosface) return {c - m, Real(1)};

  const Real lim = Real(1) - Real(1e-12);
  const Real theta = acos(std::clamp(c, -lim, lim));
  const Real sin_theta = sin(theta);
  if (variant == SoftmaxVariant::arcface) {
    return {cos(theta + m), sin(theta + m) / sin_theta};
  }
  // sphereface: psi(theta) = (-1)^k cos(m theta) - 2k on [k pi/m, (k+1) pi/m].
  const int mi = static_cast<int>(cfg.margin);
  const Real pi = acos(Real(-1));
  int k = static_cast<int>(floor(theta * Real(mi) / pi));
  k = std::clamp(k, 0, mi - 1);
  const Real sign = (k % 2 == 0) ? Real(1) : Real(-1);
  const Real psi = sign * cos(Real(mi) * theta) - Real(2 * k);
  const Real dpsi_dcos = sign * Real(mi) * sin(Real(mi) * theta) / sin_theta;
  return {psi, dpsi_dcos};
}

}  // namespace detail

/// Cosine-softmax family (normface / sphereface / cosface / arcface):
/// mean over rows of -log softmax(s * S_i)[y_i], where S_ik = cos(theta_ik)
/// except for the margin-adjusted target entry. Gradients are returned for
/// both embeddings and class templates.
template <class Real>
LossOutput<Real> cos_softmax_loss(const EmbeddingBatch<Real>& batch, const ClassTemplates<Real>& templates,
                                  const LossConfig& cfg) {
  cfg.validate();
  const Index n = batch.size();
  const Index k_classes = templates.classes();
  detail::require_labels(batch.labels, n);
  if (templates.weights.cols() != batch.dim()) {
    throw Error(ErrorCode::ShapeMismatch, "template dimension does not match embedding dimension");
  }
  for (int y : batch.labels) {
    if (y < 0 || y >= k_classes) {
      throw Error(ErrorCode::BadLabel, "label " + std::to_string(y) + " outside [0, " + std::to_string(k_classes) + ")");
    }
  }
  const auto units = unit_rows(batch.data);
  const auto w_units = unit_rows(templates.weights);
  const MatrixX<Real> cosines = units.directions * w_units.directions.transpose();
  const Real s = Real(cfg.scale);
  const Real inv_n = Real(1) / static_cast<Real>(n);

  MatrixX<Real> dcos = MatrixX<Real>::Zero(n, k_classes);  // dL/dcos(theta_ik)
  Real value = 0;
  VectorX<Real> logits(k_classes);
  for (Index i = 0; i < n; ++i) {
    const Index y = batch.labels[static_cast<std::size_t>(i)];
    Real dtarget = 1;
    for (Index k = 0; k < k_classes; ++k) {
      if (k == y) {
        const auto [sim, deriv] = detail::target_similarity(cosines(i, k), cfg);
        logits(k) = s * sim;
        dtarget = deriv;
      } else {
        logits(k) = s * cosines(i, k);
      }
    }
    const Real top = logits.maxCoeff();
    const Real lse = top + log((logits.array() - top).exp().sum());
    value += (lse - logits(y)) * inv_n;
    // p_y - 1 is formed as -sum_{k != y} p_k so it keeps full relative
    // precision when the target probability saturates.
    Real rest = 0;
    for (Index k = 0; k < k_classes; ++k) {
      if (k == y) continue;
      const Real p = exp(logits(k) - lse);
      rest += p;
      dcos(i, k) = s * p * inv_n;
    }
    dcos(i, y) = -s * rest * dtarget * inv_n;
  }

  LossOutput<Real> out;
  out.value = value;
  out.grad_embeddings = backprop_normalization(MatrixX<Real>(dcos * w_units.directions), units);
  out.grad_templates = backprop_normalization(MatrixX<Real>(dcos.transpose() * units.directions), w_units);
  out.kind = LossKind::cos_softmax;
  out.distance = Distance::cosine;
  return out;
}

/// NT-Xent over 2N views where rows 2i and 2i+1 are positives of each other;
/// every other row is a negative. Averaged over all 2N anchors.
template <class Real>
LossOutput<Real> ntxent_loss(const EmbeddingBatch<Real>& views, const LossConfig& cfg) {
  cfg.validate();
  const Index rows = views.size();
  if (rows % 2 != 0) throw Error(ErrorCode::BadParams, "NT-Xent needs an even number of rows");
  if (rows / 2 < 2) throw Error(ErrorCode::NoValidPairs, "NT-Xent needs at least two positive pairs");
  const auto units = unit_rows(views.data);
  detail::PairAccumulator<Real> acc(units, Distance::cosine);
  const Real inv_tau = Real(1) / Real(cfg.temperature);
  const Real inv_rows = Real(1) / static_cast<Real>(rows);

  Real value = 0;
  std::vector<Real> logits(static_cast<std::size_t>(rows));
  for (Index a = 0; a < rows; ++a) {
    const Index b = a ^ 1;
    Real top = -std::numeric_limits<Real>::infinity();
    for (Index k = 0; k < rows; ++k) {
      if (k == a) continue;
      logits[static_cast<std::size_t>(k)] = acc.similarity(a, k) * inv_tau;
      top = std::max(top, logits[static_cast<std::size_t>(k)]);
    }
    Real sum = 0;
    for (Index k = 0; k < rows; ++k) {
      if (k != a) sum += exp(logits[static_cast<std::size_t>(k)] - top);
    }
    const Real lse = top + log(sum);
    value += (lse - logits[static_cast<std::size_t>(b)]) * inv_rows;
    Real rest = 0;
    for (Index k = 0; k < rows; ++k) {
      if (k == a || k == b) continue;
      const Real p = exp(logits[static_cast<std::size_t>(k)] - lse);
      rest += p;
      acc.add(a, k, p * inv_tau * inv_rows);
    }
    acc.add(a, b, -rest * inv_tau * inv_rows);
  }
  return std::move(acc).finish(value, LossKind::ntxent);
}

/// Rebuilds per-pair gradient shares in the form
/// dL/df_i = sum_j phi_ij (kappa/|f_i|)(-u_j + cos(theta_ij) u_i).
inline std::vector<PairGradient> decompose_pair_gradients(const LossOutput<double>& loss, const EmbeddingBatch<double>& batch) {
  if (loss.kind == LossKind::cos_softmax) {
    throw Error(ErrorCode::UnsupportedLoss, "cosine-softmax gradients use the class-template form");
  }
  const auto units = unit_rows(batch.data);
  const double k = kappa(loss.distance);
  std::vector<PairGradient> out;
  out.reserve(loss.pair_records.size());
  for (const auto& rec : loss.pair_records) {
    const auto ui = units.directions.row(rec.i);
    const auto uj = units.directions.row(rec.j);
    const double c = clamp_unit(ui.dot(uj));
    Vector tangent = (k * (-uj + c * ui)).transpose();
    out.push_back({rec.i, rec.j, rec.phi, std::move(tangent)});
  }
  return out;
}

/// sum of weight * tangent / |f_i| per row.
inline Matrix reconstruct_gradient(const std::vector<PairGradient>& pairs, const EmbeddingBatch<double>& batch) {
  Matrix grad = Matrix::Zero(batch.size(), batch.dim());
  const Vector norms = row_norms(batch.data);
  for (const auto& p : pairs) grad.row(p.i) += p.weight * p.tangent.transpose() / norms(p.i);
  return grad;
}

/// The subset of pairs whose gradient lands on row i.
inline std::vector<PairGradient> pairs_for(Index i, const std::vector<PairGradient>& pairs) {
  std::vector<PairGradient> out;
  for (const auto& p : pairs) {
    if (p.i == i) out.push_back(p);
  }
  return out;
}

/// Extra inputs some losses need beyond the batch.
template <class Real = double>
struct LossContext {
  std::optional<std::vector<Triplet>> triplets;  // triplet / semihard: fixed triplets
  const ClassTemplates<Real>* templates = nullptr;
  std::uint64_t mining_seed = 0;
};

/// Dispatches on cfg.kind. Triplet kinds use ctx.triplets when set, otherwise
/// all valid triplets (triplet) or freshly mined ones (semihard_triplet).
template <class Real>
LossOutput<Real> evaluate_loss(const EmbeddingBatch<Real>& batch, const LossConfig& cfg, const LossContext<Real>& ctx = {}) {
  switch (cfg.kind) {
    case LossKind::triplet:
    case LossKind::semihard_triplet: {
      std::vector<Triplet> triplets;
      if (ctx.triplets) triplets = *ctx.triplets;
      else if (cfg.kind == LossKind::triplet) triplets = all_triplets(batch.labels);
      else triplets = semihard_mine(batch, cfg, ctx.mining_seed);
      if (triplets.empty()) throw Error(ErrorCode::NoValidPairs, "batch has no valid triplet");
      auto out = triplet_loss(batch, triplets, cfg);
      out.kind = cfg.kind;
      return out;
    }
    case LossKind::npair: return npair_loss(batch, cfg);
    case LossKind::multi_similarity: return multi_similarity_loss(batch, cfg);
    case LossKind::cos_softmax:
      if (ctx.templates == nullptr) throw Error(ErrorCode::BadParams, "cos_softmax needs class templates");
      return cos_softmax_loss(batch, *ctx.templates, cfg);
    case LossKind::ntxent: return ntxent_loss(batch, cfg);
  }
  throw Error(ErrorCode::UnsupportedLoss, "unknown loss kind");
}

}  // namespace spherelab
