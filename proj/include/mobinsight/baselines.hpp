#ifndef MOBINSIGHT_BASELINES_HPP
#define MOBINSIGHT_BASELINES_HPP

// Comparison models: random, average, gravity, vector distance and the
// per-destination pairwise regressors.

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mobinsight/evaluation.hpp"
#include "mobinsight/geo.hpp"
#include "mobinsight/io.hpp"
#include "mobinsight/model.hpp"

namespace mobinsight::baselines {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Travel costs between neighborhoods; zero diagonal.
struct DistanceMatrix {
  std::vector<std::string> ids;
  MatrixXd cost;
  std::string unit = "minutes";

  void validate(double symmetry_tol = 1e-6) const {
    const auto n = cost.rows();
    if (cost.cols() != n || static_cast<Eigen::Index>(ids.size()) != n)
      throw Error("distance matrix: shape mismatch");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (cost(i, i) != 0.0) throw Error("distance matrix: nonzero diagonal");
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        if (!std::isfinite(cost(i, j)) || !(cost(i, j) > 0.0))
          throw Error("distance matrix: off-diagonal entries must be finite and positive");
        const double scale = std::max(std::abs(cost(i, j)), std::abs(cost(j, i)));
        if (std::abs(cost(i, j) - cost(j, i)) > symmetry_tol * scale)
          throw Error("distance matrix: not symmetric at (" + ids[static_cast<std::size_t>(i)] +
                      ", " + ids[static_cast<std::size_t>(j)] + ")");
      }
    }
  }

  /// Restricts/reorders to `order`; throws if an id is absent.
  DistanceMatrix reordered(std::span<const std::string> order) const {
    std::vector<Eigen::Index> idx;
    for (const auto& id : order) {
      auto it = std::find(ids.begin(), ids.end(), id);
      if (it == ids.end()) throw Error("distance matrix: missing neighborhood " + id);
      idx.push_back(it - ids.begin());
    }
    DistanceMatrix d{std::vector<std::string>(order.begin(), order.end()),
                     MatrixXd(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size())), unit};
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < idx.size(); ++j)
        d.cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cost(idx[i], idx[j]);
    return d;
  }
};

/// Great-circle distances between centroids, in kilometres.
inline DistanceMatrix haversine_distances(std::span<const geo::NeighborhoodGeometry> geoms) {
  DistanceMatrix d;
  d.unit = "km";
  const auto n = static_cast<Eigen::Index>(geoms.size());
  d.cost = MatrixXd::Zero(n, n);
  for (const auto& g : geoms) d.ids.push_back(g.id);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j)
        d.cost(i, j) = geo::haversine_distance_m(geoms[static_cast<std::size_t>(i)].centroid,
                                                 geoms[static_cast<std::size_t>(j)].centroid) / 1000.0;
  return d;
}

/// Header row of neighborhood ids, then one dense row per neighborhood in
/// header order.
inline DistanceMatrix load_distance_csv(const std::filesystem::path& path,
                                        const std::string& unit = "minutes") {
  const auto t = io::read_csv(path);
  const std::string file = path.string();
  DistanceMatrix d;
  d.unit = unit;
  d.ids = t.header;
  const auto n = static_cast<Eigen::Index>(d.ids.size());
  if (static_cast<Eigen::Index>(t.rows.size()) != n)
    throw SchemaError(file, t.rows.size() + 1, "expected one row per header id");
  d.cost.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      d.cost(i, j) = io::parse_double(t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                                      file, t.line_numbers[static_cast<std::size_t>(i)], "distance");
  try {
    d.validate();
  } catch (const Error& e) {
    throw SchemaError(file, 0, e.what());
  }
  return d;
}

inline std::string distance_to_csv(const DistanceMatrix& d) {
  std::string out;
  for (std::size_t i = 0; i < d.ids.size(); ++i) out += (i ? "," : "") + io::csv_escape(d.ids[i]);
  out += "\n";
  char buf[40];
  for (Eigen::Index i = 0; i < d.cost.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cost.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%s%.17g", j ? "," : "", d.cost(i, j));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

/// Zeroes `self` and rescales to sum 1; an all-zero row becomes uniform over
/// the other components.
inline VectorXd renormalize(VectorXd row, Eigen::Index self) {
  for (Eigen::Index j = 0; j < row.size(); ++j)
    if (!(row(j) > 0.0)) row(j) = 0.0;
  if (self >= 0) row(self) = 0.0;
  const double s = row.sum();
  if (s > 0.0) return row / s;
  row.setConstant(1.0 / static_cast<double>(row.size() - (self >= 0 ? 1 : 0)));
  if (self >= 0) row(self) = 0.0;
  return row;
}

inline MatrixXd normalize_each_row(const MatrixXd& m) {
  MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = renormalize(m.row(i).transpose(), i).transpose();
  return out;
}

// ---------------------------------------------------------------------------

/// Rows uniform on the simplex (normalized exponential spacings), zero
/// diagonal.
inline MatrixXd random_model(Eigen::Index n, std::uint64_t seed) {
  if (n < 2) throw Error("random_model: need N >= 2");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = i == j ? 0.0 : expo(rng);
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

/// Componentwise mean of the training rows, self component removed.
inline VectorXd average_model(const MatrixXd& rows, std::span<const Eigen::Index> training,
                              Eigen::Index self) {
  if (training.empty()) throw Error("average_model: no training rows");
  VectorXd acc = VectorXd::Zero(rows.cols());
  for (auto k : training) acc += rows.row(k).transpose();
  acc /= static_cast<double>(training.size());
  return renormalize(std::move(acc), self);
}

/// g * H_i * H_j / d_ij^2 with a zero diagonal.
inline MatrixXd gravity_model(std::span<const double> population, const MatrixXd& dist, double g) {
  const auto n = static_cast<Eigen::Index>(population.size());
  if (dist.rows() != n || dist.cols() != n) throw Error("gravity_model: shape mismatch");
  MatrixXd m = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (!(dist(i, j) > 0.0)) throw Error("gravity_model: zero distance off the diagonal");
      m(i, j) = g * population[static_cast<std::size_t>(i)] * population[static_cast<std::size_t>(j)] /
                (dist(i, j) * dist(i, j));
    }
  }
  return m;
}

inline double mean_row_kl(const MatrixXd& predicted_rows, const MatrixXd& truth,
                          model::KlDirection dir) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i)
    s += model::score(predicted_rows.row(i).transpose(), truth.row(i).transpose(), dir);
  return s / static_cast<double>(truth.rows());
}

struct GridSearch {
  double best_g = 0.0;
  double best_kl = 0.0;
  std::vector<double> kl_per_g;
};

/// Scans `grid` for the g minimizing mean row KL over the full data set.
/// Scores within 1e-12 (relative) of the best count as ties and go to the
/// smallest g; row normalization makes every g equivalent up to rounding.
inline GridSearch gravity_grid_search(std::span<const double> population, const MatrixXd& dist,
                                      const MatrixXd& truth, std::span<const double> grid,
                                      model::KlDirection dir = model::KlDirection::printed) {
  if (grid.empty()) throw Error("gravity_grid_search: empty grid");
  GridSearch gs;
  for (double g : grid) {
    if (!(g > 0.0)) throw Error("gravity_grid_search: grid values must be positive");
    gs.kl_per_g.push_back(mean_row_kl(normalize_each_row(gravity_model(population, dist, g)), truth, dir));
  }
  const double best = *std::min_element(gs.kl_per_g.begin(), gs.kl_per_g.end());
  gs.best_g = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (gs.kl_per_g[k] <= best + 1e-12 * std::max(1.0, std::abs(best)) && grid[k] < gs.best_g) {
      gs.best_g = grid[k];
      gs.best_kl = gs.kl_per_g[k];
    }
  return gs;
}

/// 25 log-spaced values from 1e-6 to 1e6.
inline std::vector<double> default_gravity_grid() {
  std::vector<double> g;
  for (int k = 0; k < 25; ++k) g.push_back(std::pow(10.0, -6.0 + 0.5 * k));
  return g;
}

/// Cosine similarity; 0 when either vector is all zero.
inline double cosine_similarity(const VectorXd& a, const VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

/// (1 - cossim(NF_i, NF_j)) / d_ij, zero diagonal, rows normalized.
inline MatrixXd vecdist_model(const MatrixXd& profiles, const MatrixXd& dist) {
  const Eigen::Index n = profiles.rows();
  if (dist.rows() != n || dist.cols() != n) throw Error("vecdist_model: shape mismatch");
  if ((profiles.array() < 0.0).any()) throw Error("vecdist_model: negative profile entry");
  MatrixXd m = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (!(dist(i, j) > 0.0)) throw Error("vecdist_model: zero distance off the diagonal");
      m(i, j) = (1.0 - cosine_similarity(profiles.row(i).transpose(), profiles.row(j).transpose())) /
                dist(i, j);
    }
  return normalize_each_row(m);
}

// ---------------------------------------------------------------------------
// Pairwise

/// One scalar regressor for destination `dest`, trained on the rows of
/// `train_inputs` (standardized) against column `dest` of `train_targets`.
/// Rows whose origin is `dest` are skipped: that component is structurally 0.
inline model::MlpModel pairwise_model(const MatrixXd& train_inputs, const MatrixXd& train_targets,
                                      std::span<const Eigen::Index> origins, Eigen::Index dest,
                                      const model::TrainConfig& cfg, int depth) {
  std::vector<Eigen::Index> use;
  for (std::size_t r = 0; r < origins.size(); ++r)
    if (origins[r] != dest) use.push_back(static_cast<Eigen::Index>(r));
  model::Dataset data;
  data.inputs.resize(static_cast<Eigen::Index>(use.size()), train_inputs.cols());
  data.targets.resize(static_cast<Eigen::Index>(use.size()), 1);
  for (std::size_t k = 0; k < use.size(); ++k) {
    data.inputs.row(static_cast<Eigen::Index>(k)) = train_inputs.row(use[k]);
    data.targets(static_cast<Eigen::Index>(k), 0) = train_targets(use[k], dest);
  }
  return model::train(cfg, data, depth, model::Head::linear).model;
}

/// Clips the per-destination estimates at 0, zeroes the self component and
/// renormalizes (uniform if nothing is left).
inline VectorXd assemble_pairwise(std::span<const double> estimates, Eigen::Index self) {
  VectorXd row(static_cast<Eigen::Index>(estimates.size()));
  for (std::size_t j = 0; j < estimates.size(); ++j) row(static_cast<Eigen::Index>(j)) = estimates[j];
  return renormalize(std::move(row), self);
}

/// LOOCV of the pairwise baseline: for each fold, N-1 destination models.
inline evaluation::LoocvResult pairwise_loocv(const MatrixXd& features, const MatrixXd& targets,
                                              const model::TrainConfig& cfg, int depth,
                                              model::KlDirection dir = model::KlDirection::printed,
                                              unsigned workers = 0) {
  const Eigen::Index n = features.rows();
  return evaluation::loocv_predictor(
      targets,
      [&](Eigen::Index i, const std::vector<Eigen::Index>& rows) {
        MatrixXd raw(static_cast<Eigen::Index>(rows.size()), features.cols());
        MatrixXd tgt(static_cast<Eigen::Index>(rows.size()), n);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          raw.row(static_cast<Eigen::Index>(r)) = features.row(rows[r]);
          tgt.row(static_cast<Eigen::Index>(r)) = targets.row(rows[r]);
        }
        const auto stats = model::Standardizer::fit(raw);
        const MatrixXd x = stats.apply_rows(raw);
        const VectorXd xi = stats.apply(features.row(i).transpose());
        std::vector<double> est(static_cast<std::size_t>(n), 0.0);
        for (Eigen::Index j = 0; j < n; ++j) {
          if (j == i) continue;
          auto c = cfg;
          c.seed = model::derive_seed(model::derive_seed(cfg.seed, static_cast<std::uint64_t>(i)),
                                      static_cast<std::uint64_t>(j));
          est[static_cast<std::size_t>(j)] = model::predict_scalar(pairwise_model(x, tgt, rows, j, c, depth), xi);
        }
        return assemble_pairwise(est, i);
      },
      dir, workers);
}

}  // namespace mobinsight::baselines

#endif  // MOBINSIGHT_BASELINES_HPP
