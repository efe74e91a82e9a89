#include <gtest/gtest.h>

#include <random>

#include "mobinsight/baselines.hpp"
#include "support.hpp"

using namespace mobinsight;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd line_distances(int n) {
  MatrixXd d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) d(i, j) = std::abs(i - j);
  return d;
}

}  // namespace

TEST(Gravity, WorkedRow) {
  const std::vector<double> pop{1, 2, 3};
  const auto p = baselines::normalize_each_row(baselines::gravity_model(pop, line_distances(3), 1.0));
  EXPECT_DOUBLE_EQ(p(0, 0), 0.0);
  EXPECT_NEAR(p(0, 1), 200.0 / 275.0, 1e-15);
  EXPECT_NEAR(p(0, 2), 75.0 / 275.0, 1e-15);
}

TEST(Gravity, ScaleFactorCancelsAfterNormalization) {
  const std::vector<double> pop{5, 1, 9, 4};
  const auto d = line_distances(4);
  const auto a = baselines::normalize_each_row(baselines::gravity_model(pop, d, 1e-6));
  const auto b = baselines::normalize_each_row(baselines::gravity_model(pop, d, 1e6));
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(baselines::gravity_model(pop, MatrixXd::Zero(4, 4), 1.0), Error);
}

TEST(Gravity, GridSearchBreaksTiesTowardSmallestG) {
  const std::vector<double> pop{5, 1, 9, 4};
  const auto d = line_distances(4);
  const MatrixXd truth = baselines::normalize_each_row(MatrixXd::Ones(4, 4));
  const auto grid = baselines::default_gravity_grid();
  ASSERT_EQ(grid.size(), 25u);
  EXPECT_DOUBLE_EQ(grid.front(), 1e-6);
  EXPECT_NEAR(grid.back(), 1e6, 1e-6);
  const auto gs = baselines::gravity_grid_search(pop, d, truth, grid);
  EXPECT_EQ(gs.best_g, 1e-6);
  EXPECT_EQ(gs.kl_per_g.size(), 25u);
  for (double k : gs.kl_per_g) EXPECT_NEAR(k, gs.best_kl, 1e-12);
  const std::vector<double> empty;
  EXPECT_THROW(baselines::gravity_grid_search(pop, d, truth, empty), Error);
}

TEST(RandomModel, RowsAreDistributionsAndSeeded) {
  const auto a = baselines::random_model(8, 3);
  for (Eigen::Index i = 0; i < 8; ++i) {
    EXPECT_EQ(a(i, i), 0.0);
    EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
    EXPECT_TRUE((a.row(i).array() >= 0.0).all());
  }
  EXPECT_EQ(a, baselines::random_model(8, 3));
  EXPECT_NE(a, baselines::random_model(8, 4));
  EXPECT_THROW(baselines::random_model(1, 0), Error);
}

TEST(AverageModel, MeanOfTrainingRowsWithoutSelf) {
  MatrixXd rows(3, 3);
  rows << 0, 0.5, 0.5, 0.2, 0, 0.8, 0.6, 0.4, 0;
  const std::vector<Eigen::Index> train{1, 2};
  const auto p = baselines::average_model(rows, train, 0);
  // mean of rows 1 and 2 is (0.4, 0.2, 0.4); dropping component 0 leaves (0, 1/3, 2/3)
  EXPECT_DOUBLE_EQ(p(0), 0.0);
  EXPECT_NEAR(p(1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(2), 2.0 / 3.0, 1e-15);
}

TEST(Renormalize, ClipsAndFallsBackToUniform) {
  VectorXd r(4);
  r << -1.0, 2.0, 0.0, 6.0;
  const auto p = baselines::renormalize(r, 1);
  EXPECT_EQ(p(0), 0.0);
  EXPECT_EQ(p(1), 0.0);
  EXPECT_DOUBLE_EQ(p(3), 1.0);
  VectorXd z = VectorXd::Constant(4, -3.0);
  const auto u = baselines::renormalize(z, 2);
  EXPECT_NEAR(u(0), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(u(2), 0.0);
}

TEST(VecDist, MatchesHandComputedOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  const int n = 5;
  MatrixXd prof(n, 4), dist(n, n);
  for (Eigen::Index i = 0; i < prof.size(); ++i) prof.data()[i] = u(rng);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) dist(i, j) = i == j ? 0.0 : 1.0 + u(rng) + (i + j);
  const auto p = baselines::vecdist_model(prof, dist);
  for (int i = 0; i < n; ++i) {
    std::vector<double> raw(n, 0.0);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double dot = 0, na = 0, nb = 0;
      for (int c = 0; c < 4; ++c) {
        dot += prof(i, c) * prof(j, c);
        na += prof(i, c) * prof(i, c);
        nb += prof(j, c) * prof(j, c);
      }
      raw[j] = (1.0 - dot / std::sqrt(na * nb)) / dist(i, j);
      s += raw[j];
    }
    for (int j = 0; j < n; ++j) EXPECT_NEAR(p(i, j), raw[j] / s, 1e-12);
  }
}

TEST(VecDist, RejectsNegativeProfiles) {
  MatrixXd prof = MatrixXd::Ones(3, 2);
  prof(1, 1) = -1;
  EXPECT_THROW(baselines::vecdist_model(prof, line_distances(3)), Error);
  EXPECT_EQ(baselines::cosine_similarity(VectorXd::Zero(2), VectorXd::Ones(2)), 0.0);
}

TEST(Pairwise, AssemblyClipsAndMasks) {
  const std::vector<double> est{0.4, -0.2, 0.1, 0.3};
  const auto p = baselines::assemble_pairwise(est, 0);
  EXPECT_EQ(p(0), 0.0);
  EXPECT_EQ(p(1), 0.0);
  EXPECT_NEAR(p(2), 0.25, 1e-15);
  EXPECT_NEAR(p(3), 0.75, 1e-15);
}

TEST(Pairwise, ConstantTargetsAreRecovered) {
  // Every training origin sends the same share to each destination.
  const int n = 5;
  MatrixXd feat(n, 2), tgt(n, n);
  for (int i = 0; i < n; ++i) {
    feat(i, 0) = i;
    feat(i, 1) = i * i;
  }
  const VectorXd share = (VectorXd(n) << 1, 2, 3, 4, 5).finished();
  for (int i = 0; i < n; ++i) tgt.row(i) = baselines::renormalize(share, i).transpose();
  model::TrainConfig cfg;
  cfg.epochs = 300;
  cfg.dropout_p = 0.0;
  cfg.input_noise_sigma = 0.0;
  cfg.batch_size = 4;
  const auto r = baselines::pairwise_loocv(feat, tgt, cfg, 1, model::KlDirection::printed, 1);
  ASSERT_EQ(r.fold_kl.size(), 5u);
  for (const auto& p : r.predictions) EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  const auto random = baselines::mean_row_kl(baselines::random_model(n, 1), tgt, model::KlDirection::printed);
  EXPECT_LT(r.mean_kl, random);
}

TEST(DistanceMatrix, CsvRoundTripAndValidation) {
  testsupport::TempDir dir("dist");
  baselines::DistanceMatrix d{{"a", "b", "c"}, line_distances(3), "minutes"};
  io::write_atomic(dir / "d.csv", baselines::distance_to_csv(d));
  const auto back = baselines::load_distance_csv(dir / "d.csv");
  EXPECT_EQ(back.cost, d.cost);
  EXPECT_EQ(back.ids, d.ids);
  const std::vector<std::string> order{"c", "a"};
  EXPECT_EQ(back.reordered(order).cost(0, 1), 2.0);
  d.cost(0, 1) = 5;
  io::write_atomic(dir / "bad.csv", baselines::distance_to_csv(d));
  EXPECT_THROW(baselines::load_distance_csv(dir / "bad.csv"), SchemaError);
  const std::vector<std::string> missing{"z"};
  EXPECT_THROW(back.reordered(missing), Error);
}

TEST(DistanceMatrix, HaversineFallbackInKilometres) {
  std::vector<geo::NeighborhoodGeometry> g;
  g.push_back(geo::make_neighborhood("a", "", testsupport::square(41.0, 2.0, 0.01), 1));
  g.push_back(geo::make_neighborhood("b", "", testsupport::square(41.0, 2.1, 0.01), 1));
  const auto d = baselines::haversine_distances(g);
  EXPECT_EQ(d.unit, "km");
  EXPECT_NEAR(d.cost(0, 1), geo::haversine_distance_m(g[0].centroid, g[1].centroid) / 1000.0, 1e-12);
  EXPECT_NO_THROW(d.validate());
}
