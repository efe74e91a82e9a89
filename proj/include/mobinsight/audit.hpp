#ifndef MOBINSIGHT_AUDIT_HPP
#define MOBINSIGHT_AUDIT_HPP

// Permutation importance of neighborhood features for trained models.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mobinsight/evaluation.hpp"
#include "mobinsight/model.hpp"
#include "mobinsight/stats.hpp"

namespace mobinsight::audit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct FeatureImportance {
  std::string name;
  double mean_pct = 0.0;
  double std_pct = 0.0;
  int repeats = 0;
};

struct ImportanceReport {
  std::string neighborhood_id;  // or "global"
  std::vector<FeatureImportance> features;
  double variance = 0.0;
};

inline double relative_change_pct(double base, double perturbed) {
  if (base <= 0.0) return perturbed <= base ? 0.0 : std::numeric_limits<double>::infinity();
  return (perturbed - base) / base * 100.0;
}

inline FeatureImportance summarize(std::string name, std::span<const double> pcts) {
  FeatureImportance f;
  f.name = std::move(name);
  f.repeats = static_cast<int>(pcts.size());
  f.mean_pct = stats::mean(pcts);
  if (pcts.size() > 1) {
    double s = 0.0;
    for (double v : pcts) s += (v - f.mean_pct) * (v - f.mean_pct);
    f.std_pct = std::sqrt(s / static_cast<double>(pcts.size() - 1));
  }
  return f;
}

inline double mean_kl(const evaluation::FoldModel& fm, const MatrixXd& raw_rows,
                      const MatrixXd& targets, std::span<const int> self, model::KlDirection dir) {
  double s = 0.0;
  for (Eigen::Index r = 0; r < raw_rows.rows(); ++r) {
    const VectorXd p = model::forward(fm.model, fm.stats.apply(raw_rows.row(r).transpose()),
                                      self.empty() ? -1 : self[static_cast<std::size_t>(r)]);
    s += model::score(p, targets.row(r).transpose(), dir);
  }
  return s / static_cast<double>(raw_rows.rows());
}

/// Shuffles column `feature` across the evaluation rows `repeats` times and
/// reports the relative increase of the mean KL over the unshuffled score.
/// `permute` overrides the shuffle (used to pin the identity permutation).
inline FeatureImportance permutation_importance(
    const evaluation::FoldModel& fm, const MatrixXd& raw_rows, const MatrixXd& targets,
    std::span<const int> self, Eigen::Index feature, int repeats, std::uint64_t seed,
    model::KlDirection dir = model::KlDirection::printed, std::string name = {},
    const std::function<void(std::vector<Eigen::Index>&, std::mt19937_64&)>& permute = {}) {
  if (raw_rows.rows() < 2) throw Error("permutation_importance: need at least two evaluation rows");
  if (repeats < 1) throw Error("permutation_importance: repeats must be >= 1");
  if (feature < 0 || feature >= raw_rows.cols()) throw Error("permutation_importance: bad feature index");
  const double base = mean_kl(fm, raw_rows, targets, self, dir);
  std::mt19937_64 rng(model::derive_seed(seed, static_cast<std::uint64_t>(feature)));
  std::vector<double> pcts;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(raw_rows.rows()));
  for (int rep = 0; rep < repeats; ++rep) {
    std::iota(perm.begin(), perm.end(), 0);
    if (permute) permute(perm, rng);
    else std::shuffle(perm.begin(), perm.end(), rng);
    MatrixXd shuffled = raw_rows;
    for (Eigen::Index r = 0; r < raw_rows.rows(); ++r)
      shuffled(r, feature) = raw_rows(perm[static_cast<std::size_t>(r)], feature);
    pcts.push_back(relative_change_pct(base, mean_kl(fm, shuffled, targets, self, dir)));
  }
  return summarize(name.empty() ? std::to_string(feature) : std::move(name), pcts);
}

/// Per-neighborhood audit of fold model `held_out`: the held-out row's
/// feature is replaced by values drawn from other neighborhoods and the
/// fold KL is rescored.
inline ImportanceReport neighborhood_importance(const evaluation::FoldModel& fm,
                                                const evaluation::FeatureTable& features,
                                                const MatrixXd& targets, Eigen::Index held_out,
                                                int repeats, std::uint64_t seed,
                                                model::KlDirection dir = model::KlDirection::printed) {
  if (features.size() < 2) throw Error("neighborhood_importance: need at least two neighborhoods");
  if (repeats < 1) throw Error("neighborhood_importance: repeats must be >= 1");
  const VectorXd truth = targets.row(held_out).transpose();
  const VectorXd x = features.values.row(held_out).transpose();
  const int self = static_cast<int>(held_out);
  const double base = model::score(model::forward(fm.model, fm.stats.apply(x), self), truth, dir);
  ImportanceReport rep;
  rep.neighborhood_id = features.ids[static_cast<std::size_t>(held_out)];
  std::uniform_int_distribution<Eigen::Index> pick(0, features.size() - 2);
  for (Eigen::Index f = 0; f < features.values.cols(); ++f) {
    std::mt19937_64 rng(model::derive_seed(seed, static_cast<std::uint64_t>(held_out * 1000 + f)));
    std::vector<double> pcts;
    for (int r = 0; r < repeats; ++r) {
      Eigen::Index donor = pick(rng);
      if (donor >= held_out) ++donor;
      VectorXd edited = x;
      edited(f) = features.values(donor, f);
      pcts.push_back(relative_change_pct(
          base, model::score(model::forward(fm.model, fm.stats.apply(edited), self), truth, dir)));
    }
    rep.features.push_back(summarize(features.names[static_cast<std::size_t>(f)], pcts));
  }
  std::vector<double> means;
  for (const auto& fi : rep.features) means.push_back(fi.mean_pct);
  rep.variance = stats::population_variance(means);
  return rep;
}

/// Population variance of one report's per-feature mean importances.
inline double importance_variance(const ImportanceReport& rep) {
  std::vector<double> v;
  for (const auto& f : rep.features) v.push_back(f.mean_pct);
  return stats::population_variance(v);
}

inline json to_json(const ImportanceReport& rep) {
  json fs = json::array();
  for (const auto& f : rep.features)
    fs.push_back({{"name", f.name}, {"mean_pct", f.mean_pct}, {"std_pct", f.std_pct}, {"repeats", f.repeats}});
  return {{"neighborhood_id", rep.neighborhood_id},
          {"features", fs},
          {"variance", rep.variance},
          {"interpretation", "correlational"}};
}

inline ImportanceReport report_from_json(const json& j) {
  ImportanceReport r;
  r.neighborhood_id = j.at("neighborhood_id");
  r.variance = j.value("variance", 0.0);
  for (const auto& f : j.at("features"))
    r.features.push_back({f.at("name"), f.at("mean_pct"), f.at("std_pct"), f.at("repeats")});
  return r;
}

}  // namespace mobinsight::audit

#endif  // MOBINSIGHT_AUDIT_HPP
