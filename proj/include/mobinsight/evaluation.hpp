#ifndef MOBINSIGHT_EVALUATION_HPP
#define MOBINSIGHT_EVALUATION_HPP

// Leave-one-out protocol over neighborhoods and what-if inference.

#include <Eigen/Dense>
#include <atomic>
#include <functional>
#include <mutex>
#include <future>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mobinsight/mobility.hpp"
#include "mobinsight/model.hpp"
#include "mobinsight/semantics.hpp"

namespace mobinsight::evaluation {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Neighborhood features: profile counts (categories + total) followed by
/// centroid latitude and longitude.
struct FeatureTable {
  std::vector<std::string> ids;
  std::vector<std::string> names;
  MatrixXd values;  // N x F, raw
  std::size_t count_features = 0;

  Eigen::Index size() const { return values.rows(); }
  int index_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return static_cast<int>(i);
    return -1;
  }
};

inline VectorXd feature_vector(const semantics::NeighborhoodProfile& p) {
  VectorXd v(static_cast<Eigen::Index>(p.feature_counts.size() + 2));
  for (std::size_t c = 0; c < p.feature_counts.size(); ++c)
    v(static_cast<Eigen::Index>(c)) = p.feature_counts[c];
  v(v.size() - 2) = p.centroid.lat;
  v(v.size() - 1) = p.centroid.lon;
  return v;
}

inline FeatureTable make_features(std::span<const semantics::NeighborhoodProfile> profiles,
                                  std::span<const std::string> categories) {
  if (profiles.empty()) throw Error("make_features: no profiles");
  FeatureTable t;
  t.count_features = categories.size() + 1;
  t.names.assign(categories.begin(), categories.end());
  t.names.insert(t.names.end(), {"total", "lat", "lon"});
  t.values.resize(static_cast<Eigen::Index>(profiles.size()),
                  static_cast<Eigen::Index>(t.names.size()));
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    if (profiles[i].feature_counts.size() != t.count_features)
      throw Error("make_features: profile " + profiles[i].neighborhood_id + " has wrong length");
    t.ids.push_back(profiles[i].neighborhood_id);
    t.values.row(static_cast<Eigen::Index>(i)) = feature_vector(profiles[i]).transpose();
  }
  return t;
}

/// Row-normalized targets of one task: `to` uses the matrix as stored,
/// `from` its transpose.
inline MatrixXd task_targets(const mobility::OdMatrix& od, mobility::Direction task) {
  const auto& m = od.direction == task ? od : od.transposed();
  return mobility::normalize_rows(m.counts);
}

struct FoldModel {
  model::MlpModel model;
  model::Standardizer stats;
};

struct LoocvResult {
  std::vector<double> fold_kl;
  double mean_kl = 0.0;
  std::vector<FoldModel> folds;  // kept when requested
  std::vector<VectorXd> predictions;
};

/// Called once per fold with the held-out index and the rows that fold
/// read for standardization and training.
using FoldHook = std::function<void(std::size_t held_out, std::span<const Eigen::Index> rows_read)>;

inline std::vector<Eigen::Index> training_rows(Eigen::Index n, Eigen::Index held_out) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index k = 0; k < n; ++k)
    if (k != held_out) rows.push_back(k);
  return rows;
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Runs `fold(i)` for every i, optionally on worker threads; results are
/// stored by index so the outcome does not depend on scheduling.
template <typename T, typename F>
std::vector<T> run_folds(std::size_t n, F&& fold, unsigned workers = 0) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<T> out(n);
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fold(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mu;
  for (unsigned w = 0; w < std::min<std::size_t>(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          out[i] = fold(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

struct LoocvOptions {
  int depth = 1;
  model::KlDirection kl_direction = model::KlDirection::printed;
  bool keep_models = false;
  unsigned workers = 0;
  FoldHook hook;
};

/// Leave-one-out over neighborhoods: fold i standardizes and trains on the
/// other N-1 rows with a seed derived from the master seed, then scores its
/// prediction for i against the true row.
inline LoocvResult loocv(const MatrixXd& features, const MatrixXd& targets,
                         const model::TrainConfig& cfg, const LoocvOptions& opt) {
  const Eigen::Index n = features.rows();
  if (n < 3) throw Error("loocv: need at least 3 neighborhoods");
  if (targets.rows() != n || targets.cols() != n) throw Error("loocv: targets must be N x N");
  struct Fold {
    double kl = 0.0;
    FoldModel model;
    VectorXd prediction;
  };
  auto results = run_folds<Fold>(
      static_cast<std::size_t>(n),
      [&](std::size_t i) {
        const auto held = static_cast<Eigen::Index>(i);
        const auto rows = training_rows(n, held);
        if (opt.hook) opt.hook(i, rows);
        MatrixXd train_x(static_cast<Eigen::Index>(rows.size()), features.cols());
        model::Dataset data;
        data.targets.resize(static_cast<Eigen::Index>(rows.size()), n);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          train_x.row(static_cast<Eigen::Index>(r)) = features.row(rows[r]);
          data.targets.row(static_cast<Eigen::Index>(r)) = targets.row(rows[r]);
          data.self.push_back(static_cast<int>(rows[r]));
        }
        Fold f;
        f.model.stats = model::Standardizer::fit(train_x);
        data.inputs = f.model.stats.apply_rows(train_x);
        auto fold_cfg = cfg;
        fold_cfg.seed = model::derive_seed(cfg.seed, i);
        f.model.model = model::train(fold_cfg, data, opt.depth).model;
        f.prediction = model::forward(f.model.model,
                                      f.model.stats.apply(features.row(held).transpose()),
                                      static_cast<int>(held));
        f.kl = model::score(f.prediction, targets.row(held).transpose(), opt.kl_direction);
        return f;
      },
      opt.workers);
  LoocvResult out;
  for (auto& f : results) {
    out.fold_kl.push_back(f.kl);
    out.predictions.push_back(std::move(f.prediction));
    if (opt.keep_models) out.folds.push_back(std::move(f.model));
  }
  out.mean_kl = mean_of(out.fold_kl);
  return out;
}

/// Leave-one-out for predictors that need no training beyond the fold:
/// `predict(i, training_rows)` returns the row for i.
template <typename Predict>
LoocvResult loocv_predictor(const MatrixXd& targets, Predict&& predict,
                            model::KlDirection dir = model::KlDirection::printed,
                            unsigned workers = 1) {
  const Eigen::Index n = targets.rows();
  if (n < 3) throw Error("loocv: need at least 3 neighborhoods");
  auto preds = run_folds<VectorXd>(
      static_cast<std::size_t>(n),
      [&](std::size_t i) {
        return VectorXd(predict(static_cast<Eigen::Index>(i),
                                training_rows(n, static_cast<Eigen::Index>(i))));
      },
      workers);
  LoocvResult out;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.fold_kl.push_back(model::score(preds[static_cast<std::size_t>(i)], targets.row(i).transpose(), dir));
    out.predictions.push_back(std::move(preds[static_cast<std::size_t>(i)]));
  }
  out.mean_kl = mean_of(out.fold_kl);
  return out;
}

/// Re-predicts with an edited raw feature vector. Count features must stay
/// nonnegative.
inline VectorXd what_if(const FoldModel& fm, const VectorXd& edited_features,
                        std::size_t count_features, int self_index) {
  for (std::size_t c = 0; c < count_features && c < static_cast<std::size_t>(edited_features.size()); ++c)
    if (edited_features(static_cast<Eigen::Index>(c)) < 0.0)
      throw Error("what_if: negative count for feature " + std::to_string(c));
  return model::forward(fm.model, fm.stats.apply(edited_features), self_index);
}

}  // namespace mobinsight::evaluation

#endif  // MOBINSIGHT_EVALUATION_HPP
