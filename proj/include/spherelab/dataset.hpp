#pragma once

// Synthetic clustered data and class-balanced batch sampling.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "spherelab/core.hpp"
#include "spherelab/format.hpp"

namespace spherelab {

struct SyntheticParams {
  int classes = 10;
  int per_class = 30;
  int dim_in = 16;
  double spread = 1.0;  // radius of the sphere holding class centers
  double sigma = 0.3;   // within-class Gaussian noise
  std::uint64_t seed = 1;
};

struct SyntheticDataset {
  Matrix points;  // M x dim_in
  std::vector<int> labels;
  int classes = 0;
  SyntheticParams params;

  Index size() const { return points.rows(); }
};

/// K centers uniformly on a sphere of radius `spread`; each point is its
/// class center plus isotropic Gaussian noise. Points are stored class-major.
inline SyntheticDataset gen_synthetic(const SyntheticParams& p) {
  if (p.classes < 2 || p.per_class < 2 || p.dim_in < 1 || !(p.spread > 0) || !(p.sigma >= 0)) {
    throw Error(ErrorCode::BadParams, "synthetic data needs K >= 2, per_class >= 2, dim_in >= 1, spread > 0, sigma >= 0");
  }
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix centers(p.classes, p.dim_in);
  for (int k = 0; k < p.classes; ++k) {
    Vector c(p.dim_in);
    do {
      for (int d = 0; d < p.dim_in; ++d) c(d) = normal(rng);
    } while (c.norm() < 1e-8);
    centers.row(k) = (p.spread / c.norm()) * c.transpose();
  }

  SyntheticDataset ds;
  ds.params = p;
  ds.classes = p.classes;
  ds.points.resize(static_cast<Index>(p.classes) * p.per_class, p.dim_in);
  ds.labels.reserve(static_cast<std::size_t>(ds.points.rows()));
  Index row = 0;
  for (int k = 0; k < p.classes; ++k) {
    for (int j = 0; j < p.per_class; ++j, ++row) {
      for (int d = 0; d < p.dim_in; ++d) ds.points(row, d) = centers(k, d) + p.sigma * normal(rng);
      ds.labels.push_back(k);
    }
  }
  return ds;
}

/// `id,label,x0..x{Din-1}` with one row per point.
inline void export_dataset_csv(const SyntheticDataset& ds, std::ostream& os) {
  os << "id,label";
  for (Index d = 0; d < ds.points.cols(); ++d) os << ",x" << d;
  os << '\n';
  for (Index i = 0; i < ds.size(); ++i) {
    os << i << ',' << ds.labels[static_cast<std::size_t>(i)];
    for (Index d = 0; d < ds.points.cols(); ++d) os << ',' << format_double(ds.points(i, d));
    os << '\n';
  }
}

inline SyntheticDataset import_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::IoError, "empty dataset file");
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw Error(ErrorCode::IoError, "dataset header must start with id,label,x0");
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t d = 0; d < dim; ++d) {
    if (header[d + 2] != "x" + std::to_string(d)) throw Error(ErrorCode::IoError, "bad column name " + header[d + 2]);
  }
  std::vector<std::vector<double>> rows;
  SyntheticDataset ds;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw Error(ErrorCode::IoError, "ragged dataset row: " + line);
    if (std::stol(cells[0]) != static_cast<long>(rows.size())) throw Error(ErrorCode::IoError, "ids must be 0..M-1 in order");
    ds.labels.push_back(std::stoi(cells[1]));
    std::vector<double> values(dim);
    for (std::size_t d = 0; d < dim; ++d) values[d] = std::stod(cells[d + 2]);
    rows.push_back(std::move(values));
  }
  ds.points.resize(static_cast<Index>(rows.size()), static_cast<Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) ds.points(static_cast<Index>(i), static_cast<Index>(d)) = rows[i][d];
  }
  ds.classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.params.classes = ds.classes;
  ds.params.dim_in = static_cast<int>(dim);
  return ds;
}

struct BatchSpec {
  int classes_per_batch = 10;  // C
  int samples_per_class = 3;   // Kp

  int batch_size() const { return classes_per_batch * samples_per_class; }
};

/// C distinct classes, Kp samples of each drawn without replacement.
/// Indices come grouped by class, Kp consecutive rows per class.
template <class Rng>
std::vector<Index> sample_batch(const SyntheticDataset& ds, const BatchSpec& spec, Rng& rng) {
  if (spec.classes_per_batch < 1 || spec.samples_per_class < 1) {
    throw Error(ErrorCode::BadParams, "batch needs C >= 1 and Kp >= 1");
  }
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(ds.classes));
  for (Index i = 0; i < ds.size(); ++i) {
    const int y = ds.labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= ds.classes) throw Error(ErrorCode::BadLabel, "dataset label out of range");
    members[static_cast<std::size_t>(y)].push_back(i);
  }
  if (spec.classes_per_batch > ds.classes) {
    throw Error(ErrorCode::Infeasible, "batch asks for " + std::to_string(spec.classes_per_batch) +
                                           " classes but the dataset has " + std::to_string(ds.classes));
  }
  for (const auto& m : members) {
    if (static_cast<int>(m.size()) < spec.samples_per_class) {
      throw Error(ErrorCode::Infeasible, "a class has fewer than Kp samples");
    }
  }

  // Partial Fisher-Yates so the draw depends only on the rng stream.
  auto draw = [&rng](std::vector<Index>& pool, int count) {
    for (int k = 0; k < count; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick(rng)]);
    }
  };
  std::vector<Index> classes(static_cast<std::size_t>(ds.classes));
  std::iota(classes.begin(), classes.end(), Index{0});
  draw(classes, spec.classes_per_batch);

  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(spec.batch_size()));
  for (int c = 0; c < spec.classes_per_batch; ++c) {
    auto pool = members[static_cast<std::size_t>(classes[static_cast<std::size_t>(c)])];
    draw(pool, spec.samples_per_class);
    out.insert(out.end(), pool.begin(), pool.begin() + spec.samples_per_class);
  }
  return out;
}

}  // namespace spherelab
