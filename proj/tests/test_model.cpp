#include <gtest/gtest.h>

#include <random>

#include "mobinsight/model.hpp"

using namespace mobinsight;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

VectorXd random_simplex(std::mt19937_64& rng, Eigen::Index n) {
  std::exponential_distribution<double> e(1.0);
  VectorXd p(n);
  for (Eigen::Index i = 0; i < n; ++i) p(i) = e(rng);
  return p / p.sum();
}

// Plain loops, no Eigen products: the oracle for logits().
std::vector<double> naive_logits(const model::MlpModel& m, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    std::vector<double> z(static_cast<std::size_t>(L.weight.rows()));
    for (Eigen::Index r = 0; r < L.weight.rows(); ++r) {
      double s = L.bias(r);
      for (Eigen::Index c = 0; c < L.weight.cols(); ++c) s += L.weight(r, c) * h[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = (l + 1 < m.layers.size() && s < 0.0) ? 0.0 : s;
    }
    h = std::move(z);
  }
  return h;
}

model::Dataset toy_dataset(int n, int in, int out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  model::Dataset d;
  d.inputs = MatrixXd(n, in);
  for (Eigen::Index i = 0; i < d.inputs.size(); ++i) d.inputs.data()[i] = g(rng);
  MatrixXd w(out, in);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
  d.targets = MatrixXd(n, out);
  for (int i = 0; i < n; ++i) {
    const int self = i % out;
    d.self.push_back(self);
    d.targets.row(i) = model::softmax(w * d.inputs.row(i).transpose(), self).transpose();
  }
  return d;
}

}  // namespace

TEST(Softmax, KnownValuesAndMask) {
  const auto p = model::softmax(vec({0.0, std::log(3.0)}));
  EXPECT_NEAR(p(0), 0.25, 1e-15);
  EXPECT_NEAR(p(1), 0.75, 1e-15);
  const auto q = model::softmax(vec({5.0, 1.0, 1.0}), 0);
  EXPECT_EQ(q(0), 0.0);
  EXPECT_NEAR(q(1), 0.5, 1e-15);
  const auto big = model::softmax(vec({1000.0, 1000.0}));
  EXPECT_NEAR(big(0), 0.5, 1e-15);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int t = 0; t < 200; ++t) {
    VectorXd z(12);
    for (auto& v : z) v = g(rng);
    const int mask = t % 13 - 1;
    const auto p = model::softmax(z, mask);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_TRUE((p.array() >= 0.0).all());
    const auto shifted = model::softmax((z.array() + 7.5).matrix(), mask);
    EXPECT_LT((p - shifted).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(KlDivergence, WorkedExample) {
  // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1)
  const double expect = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  EXPECT_NEAR(model::kl_divergence(vec({0.5, 0.5}), vec({0.9, 0.1})), expect, 1e-8);
  EXPECT_NEAR(expect, 0.510825, 1e-6);
  EXPECT_NEAR(model::kl_divergence(vec({0.5, 0.5}), vec({0.5, 0.5})), 0.0, 1e-15);
}

TEST(KlDivergence, ZerosAreSmoothed) {
  const double k = model::kl_divergence(vec({1.0, 0.0}), vec({0.0, 1.0}));
  EXPECT_TRUE(std::isfinite(k));
  EXPECT_GT(k, 15.0);
}

TEST(KlDivergence, NonnegativeOnRandomPairs) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 1000; ++t) {
    const auto p = random_simplex(rng, 8), q = random_simplex(rng, 8);
    const double k = model::kl_divergence(p, q);
    EXPECT_GE(k, 0.0);
    // smoothed oracle: add 1e-9 everywhere, renormalize, then the textbook sum
    const double sp = p.sum() + 8e-9, sq = q.sum() + 8e-9;
    double oracle = 0.0;
    for (Eigen::Index j = 0; j < 8; ++j) {
      const double a = (p(j) + 1e-9) / sp, b = (q(j) + 1e-9) / sq;
      oracle += a * std::log(a / b);
    }
    EXPECT_NEAR(k, oracle, 1e-12);
  }
}

TEST(KlDivergence, DirectionSwapsArguments) {
  const auto p = vec({0.7, 0.2, 0.1}), q = vec({0.2, 0.3, 0.5});
  EXPECT_DOUBLE_EQ(model::score(p, q, model::KlDirection::printed), model::kl_divergence(p, q));
  EXPECT_DOUBLE_EQ(model::score(p, q, model::KlDirection::reversed), model::kl_divergence(q, p));
  EXPECT_THROW(model::parse_kl_direction("sideways"), Error);
  EXPECT_THROW(model::kl_divergence(p, vec({1.0})), Error);
}

TEST(Standardizer, ZeroMeanUnitSpreadAndConstantColumn) {
  MatrixXd rows(4, 2);
  rows << 1, 5, 2, 5, 3, 5, 4, 5;
  const auto s = model::Standardizer::fit(rows);
  const auto z = s.apply_rows(rows);
  EXPECT_NEAR(z.col(0).mean(), 0.0, 1e-15);
  EXPECT_NEAR(z.col(0).squaredNorm() / 4.0, 1.0, 1e-12);
  EXPECT_TRUE((z.col(1).array() == 0.0).all());
  const auto back = model::Standardizer::from_json(s.to_json());
  EXPECT_EQ(back.mean, s.mean);
  EXPECT_EQ(back.stddev, s.stddev);
  EXPECT_THROW(s.apply(vec({1.0})), Error);
}

TEST(Mlp, DepthCountsAffineLayers) {
  for (int d = 1; d <= 4; ++d) {
    const auto m = model::MlpModel::glorot(7, 5, d, 1);
    EXPECT_EQ(m.depth(), d);
    const std::size_t expect = d == 1 ? 7 * 5 + 5 : (7 * 100 + 100) + (d - 2) * (100 * 100 + 100) + (100 * 5 + 5);
    EXPECT_EQ(m.parameter_count(), expect);
  }
  EXPECT_THROW(model::MlpModel::glorot(7, 5, 0, 1), Error);
  EXPECT_THROW(model::MlpModel::glorot(7, 5, 5, 1), Error);
}

TEST(Mlp, ForwardMatchesNaiveLoops) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int d = 1; d <= 4; ++d) {
    auto m = model::MlpModel::glorot(6, 9, d, 10 + d, model::Head::softmax, 0.5, 13);
    for (auto& L : m.layers)
      for (auto& b : L.bias) b = g(rng) * 0.1;
    std::vector<double> x(6);
    for (auto& v : x) v = g(rng);
    const auto oracle = naive_logits(m, x);
    const VectorXd ex = Eigen::Map<const VectorXd>(x.data(), 6);
    const auto lg = model::logits(m, ex);
    for (int j = 0; j < 9; ++j) EXPECT_NEAR(lg(j), oracle[static_cast<std::size_t>(j)], 1e-10);
    const auto p = model::forward(m, ex, 2);
    EXPECT_EQ(p(2), 0.0);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  }
}

TEST(Mlp, JsonRoundTripIsExact) {
  const auto m = model::MlpModel::glorot(4, 3, 3, 77, model::Head::softmax, 0.5, 8);
  const auto back = model::MlpModel::from_json(m.to_json());
  ASSERT_EQ(back.depth(), 3);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    EXPECT_EQ(back.layers[l].weight, m.layers[l].weight);
    EXPECT_EQ(back.layers[l].bias, m.layers[l].bias);
  }
  EXPECT_EQ(back.dropout_p, m.dropout_p);
}

TEST(Mlp, TrainModeIsDeterministicPerSeed) {
  const auto m = model::MlpModel::glorot(5, 4, 3, 5, model::Head::softmax, 0.5, 20);
  const VectorXd x = VectorXd::LinSpaced(5, -1.0, 1.0);
  const auto a = model::forward(m, x, -1, model::TrainMode{42});
  const auto b = model::forward(m, x, -1, model::TrainMode{42});
  EXPECT_EQ(a, b);
  EXPECT_NEAR(a.sum(), 1.0, 1e-12);
}

class GradientCheck : public ::testing::TestWithParam<std::tuple<int, model::Head>> {};

TEST_P(GradientCheck, MatchesFiniteDifferences) {
  const auto [depth, head] = GetParam();
  auto data = toy_dataset(5, 4, 6, 21);
  if (head == model::Head::linear) {
    data.targets = data.targets.col(0);
    data.self.clear();
  }
  auto m = model::MlpModel::glorot(4, data.targets.cols(), depth, 8, head, 0.5, 7);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 0.3);
  for (auto& L : m.layers)
    for (auto& b : L.bias) b = g(rng);
  const auto batch = data.as_batch();
  model::Backprop bp;
  auto grad = model::Gradients::zeros_like(m);
  bp.run(m, batch, &grad, nullptr);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto probe = [&](double& param, double analytic) {
      const double keep = param;
      param = keep + h;
      const double up = model::dataset_loss(m, batch);
      param = keep - h;
      const double down = model::dataset_loss(m, batch);
      param = keep;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric)));
    };
    for (Eigen::Index i = 0; i < m.layers[l].weight.size(); ++i)
      probe(m.layers[l].weight.data()[i], grad.weight[l].data()[i]);
    for (Eigen::Index i = 0; i < m.layers[l].bias.size(); ++i)
      probe(m.layers[l].bias.data()[i], grad.bias[l].data()[i]);
  }
  EXPECT_LT(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Depths, GradientCheck,
                         ::testing::Combine(::testing::Values(1, 2, 3, 4),
                                            ::testing::Values(model::Head::softmax, model::Head::linear)));

TEST(Train, ReducesLossOnLearnableToy) {
  const auto data = toy_dataset(40, 5, 6, 33);
  model::TrainConfig cfg;
  cfg.epochs = 400;
  cfg.dropout_p = 0.0;
  cfg.input_noise_sigma = 0.0;
  cfg.seed = 5;
  const auto r = model::train(cfg, data, 1);
  EXPECT_LT(r.final_loss, 0.1 * r.initial_loss);
}

TEST(Train, DeterministicAndSeedSensitive) {
  const auto data = toy_dataset(20, 4, 5, 2);
  model::TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 9;
  cfg.track_loss = true;
  const auto a = model::train(cfg, data, 2);
  const auto b = model::train(cfg, data, 2);
  EXPECT_EQ(a.model.layers[0].weight, b.model.layers[0].weight);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.loss_history.size(), 30u);
  cfg.seed = 10;
  const auto c = model::train(cfg, data, 2);
  EXPECT_NE(a.model.layers[0].weight, c.model.layers[0].weight);
}

TEST(Train, RejectsBadConfigAndData) {
  const auto data = toy_dataset(20, 4, 5, 2);
  model::TrainConfig cfg;
  cfg.dropout_p = 1.0;
  EXPECT_THROW(model::train(cfg, data, 2), Error);
  model::Dataset one;
  one.inputs = MatrixXd::Zero(1, 2);
  one.targets = MatrixXd::Constant(1, 2, 0.5);
  EXPECT_THROW(model::train(model::TrainConfig{}, one, 1), Error);
}

TEST(Train, ConfigJsonRoundTrip) {
  model::TrainConfig cfg;
  cfg.epochs = 17;
  cfg.seed = 123;
  const auto back = model::TrainConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.epochs, 17);
  EXPECT_EQ(back.seed, 123u);
  EXPECT_EQ(back.batch_size, cfg.batch_size);
}

TEST(DeriveSeed, StreamsDiffer) {
  EXPECT_NE(model::derive_seed(7, 1), model::derive_seed(7, 2));
  EXPECT_NE(model::derive_seed(7, 1), model::derive_seed(8, 1));
  EXPECT_EQ(model::derive_seed(7, 1), model::derive_seed(7, 1));
}
