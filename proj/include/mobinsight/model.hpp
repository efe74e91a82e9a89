#ifndef MOBINSIGHT_MODEL_HPP
#define MOBINSIGHT_MODEL_HPP

// Feature-driven mobility models: feed-forward networks with a softmax head
// over destinations, trained with ADADELTA, dropout and input noise.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mobinsight/io.hpp"

namespace mobinsight::model {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kKlSmoothing = 1e-9;
inline constexpr int kHiddenWidth = 100;

/// SplitMix64 step; used to derive independent seeds from a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Standardization

/// Per-component z-scoring with statistics from a training fold. Components
/// with zero spread map to 0.
struct Standardizer {
  VectorXd mean;
  VectorXd stddev;

  /// `rows` holds one sample per row.
  static Standardizer fit(const MatrixXd& rows) {
    Standardizer s;
    const double n = static_cast<double>(rows.rows());
    s.mean = rows.colwise().mean().transpose();
    s.stddev = ((rows.rowwise() - s.mean.transpose()).array().square().colwise().sum() / n)
                   .sqrt()
                   .transpose();
    return s;
  }

  VectorXd apply(const VectorXd& x) const {
    if (x.size() != mean.size()) throw Error("standardize: dimension mismatch");
    VectorXd z(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
      z(i) = stddev(i) > 0.0 ? (x(i) - mean(i)) / stddev(i) : 0.0;
    return z;
  }

  MatrixXd apply_rows(const MatrixXd& rows) const {
    MatrixXd out(rows.rows(), rows.cols());
    for (Eigen::Index r = 0; r < rows.rows(); ++r) out.row(r) = apply(rows.row(r).transpose());
    return out;
  }

  json to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"std", std::vector<double>(stddev.data(), stddev.data() + stddev.size())}};
  }
  static Standardizer from_json(const json& j) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("std").get<std::vector<double>>();
    if (m.size() != s.size()) throw Error("standardizer: length mismatch");
    Standardizer out;
    out.mean = Eigen::Map<const VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    out.stddev = Eigen::Map<const VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Distributions and KL

/// Normalized exponentials; `masked` (if >= 0) gets probability 0.
inline VectorXd softmax(const VectorXd& logits, int masked = -1) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (j != masked) mx = std::max(mx, logits(j));
  VectorXd p(logits.size());
  double s = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    p(j) = j == masked ? 0.0 : std::exp(logits(j) - mx);
    s += p(j);
  }
  return p / s;
}

/// Sum_j p_j ln(p_j / q_j) after adding 1e-9 to every component of both
/// vectors and renormalizing.
inline double kl_divergence(const VectorXd& p, const VectorXd& q, double eps = kKlSmoothing) {
  if (p.size() != q.size()) throw Error("kl_divergence: length mismatch");
  const VectorXd ps = (p.array() + eps).matrix();
  const VectorXd qs = (q.array() + eps).matrix();
  const double sp = ps.sum(), sq = qs.sum();
  double kl = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    const double a = ps(j) / sp, b = qs(j) / sq;
    if (a > 0.0) kl += a * std::log(a / b);
  }
  return std::max(0.0, kl);
}

/// Which argument order scores a prediction.
/// `printed`: sum pred * ln(pred / truth), the metric as written with the
/// prediction in the first slot. `reversed`: sum truth * ln(truth / pred).
enum class KlDirection { printed, reversed };

inline KlDirection parse_kl_direction(const std::string& s) {
  if (s == "printed") return KlDirection::printed;
  if (s == "reversed") return KlDirection::reversed;
  throw Error("kl direction must be 'printed' or 'reversed'");
}
inline const char* to_string(KlDirection d) {
  return d == KlDirection::printed ? "printed" : "reversed";
}

inline double score(const VectorXd& predicted, const VectorXd& truth,
                    KlDirection dir = KlDirection::printed) {
  return dir == KlDirection::printed ? kl_divergence(predicted, truth)
                                     : kl_divergence(truth, predicted);
}

// ---------------------------------------------------------------------------
// Network

enum class Head { softmax, linear };

struct Layer {
  MatrixXd weight;  // out x in
  VectorXd bias;
};

struct TrainConfig {
  int epochs = 3000;
  int batch_size = 10;
  double dropout_p = 0.5;
  double input_noise_sigma = 0.05;
  double adadelta_rho = 0.95;
  double adadelta_eps = 1e-6;
  std::uint64_t seed = 0;
  bool track_loss = false;  // record the clean training loss every epoch

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw Error("train config: epochs and batch_size must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error("train config: dropout_p must be in [0,1)");
    if (!(input_noise_sigma >= 0.0)) throw Error("train config: noise sigma must be nonnegative");
    if (!(adadelta_rho > 0.0 && adadelta_rho < 1.0) || !(adadelta_eps > 0.0))
      throw Error("train config: invalid ADADELTA parameters");
  }

  json to_json() const {
    return {{"epochs", epochs},           {"batch_size", batch_size},
            {"dropout_p", dropout_p},     {"input_noise_sigma", input_noise_sigma},
            {"adadelta_rho", adadelta_rho}, {"adadelta_eps", adadelta_eps},
            {"seed", seed}};
  }
  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.input_noise_sigma = j.value("input_noise_sigma", c.input_noise_sigma);
    c.adadelta_rho = j.value("adadelta_rho", c.adadelta_rho);
    c.adadelta_eps = j.value("adadelta_eps", c.adadelta_eps);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

/// Stack of affine layers; rectified-linear between layers. `depth` counts
/// affine layers, so depth 1 is the linear softmax model.
struct MlpModel {
  std::vector<Layer> layers;
  Head head = Head::softmax;
  double dropout_p = 0.5;

  int depth() const { return static_cast<int>(layers.size()); }
  Eigen::Index input_dim() const { return layers.front().weight.cols(); }
  Eigen::Index output_dim() const { return layers.back().weight.rows(); }

  /// Glorot-uniform weights, zero biases.
  static MlpModel glorot(Eigen::Index inputs, Eigen::Index outputs, int depth, std::uint64_t seed,
                         Head head = Head::softmax, double dropout_p = 0.5,
                         int hidden = kHiddenWidth) {
    if (depth < 1 || depth > 4) throw Error("model depth must be in 1..4");
    MlpModel m;
    m.head = head;
    m.dropout_p = dropout_p;
    std::mt19937_64 rng(seed);
    Eigen::Index fan_in = inputs;
    for (int l = 0; l < depth; ++l) {
      const Eigen::Index fan_out = l + 1 == depth ? outputs : hidden;
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> u(-bound, bound);
      Layer layer{MatrixXd(fan_out, fan_in), VectorXd::Zero(fan_out)};
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = u(rng);
      m.layers.push_back(std::move(layer));
      fan_in = fan_out;
    }
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  json to_json() const {
    json ls = json::array();
    for (const auto& l : layers) {
      std::vector<double> w;
      w.reserve(static_cast<std::size_t>(l.weight.size()));
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
      ls.push_back({{"shape", {l.weight.rows(), l.weight.cols()}},
                    {"weights", w},
                    {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return {{"head", head == Head::softmax ? "softmax" : "linear"},
            {"dropout_p", dropout_p},
            {"layers", ls}};
  }

  static MlpModel from_json(const json& j) {
    MlpModel m;
    m.head = j.value("head", "softmax") == "softmax" ? Head::softmax : Head::linear;
    m.dropout_p = j.value("dropout_p", 0.5);
    Eigen::Index prev = -1;
    for (const auto& lj : j.at("layers")) {
      const auto rows = lj.at("shape").at(0).get<Eigen::Index>();
      const auto cols = lj.at("shape").at(1).get<Eigen::Index>();
      const auto w = lj.at("weights").get<std::vector<double>>();
      const auto b = lj.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows)
        throw Error("model: layer size mismatch");
      if (prev >= 0 && cols != prev) throw Error("model: incompatible consecutive layers");
      Layer l{MatrixXd(rows, cols), VectorXd(rows)};
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      for (Eigen::Index r = 0; r < rows; ++r) l.bias(r) = b[static_cast<std::size_t>(r)];
      m.layers.push_back(std::move(l));
      prev = rows;
    }
    if (m.layers.empty()) throw Error("model: no layers");
    return m;
  }
};

/// Pre-head activations for one input in evaluation mode.
inline VectorXd logits(const MlpModel& m, const VectorXd& x) {
  if (x.size() != m.input_dim()) throw Error("forward: input dimension mismatch");
  VectorXd h = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    VectorXd z = m.layers[l].weight * h + m.layers[l].bias;
    if (l + 1 < m.layers.size()) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

struct TrainMode {
  std::uint64_t dropout_seed = 0;
};

/// Distribution over destinations. Inverted dropout: training masks are
/// rescaled by 1/(1-p), evaluation runs the plain network.
inline VectorXd forward(const MlpModel& m, const VectorXd& x, int self_index = -1,
                        std::optional<TrainMode> train = std::nullopt) {
  if (m.head != Head::softmax) throw Error("forward: model has no softmax head");
  if (!train) return softmax(logits(m, x), self_index);
  if (x.size() != m.input_dim()) throw Error("forward: input dimension mismatch");
  std::mt19937_64 rng(train->dropout_seed);
  std::bernoulli_distribution keep(1.0 - m.dropout_p);
  const double scale = 1.0 / (1.0 - m.dropout_p);
  VectorXd h = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    VectorXd z = m.layers[l].weight * h + m.layers[l].bias;
    if (l + 1 < m.layers.size()) {
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = keep(rng) ? std::max(0.0, z(i)) * scale : 0.0;
    }
    h = std::move(z);
  }
  return softmax(h, self_index);
}

/// Scalar output of a linear-head model, rectified.
inline double predict_scalar(const MlpModel& m, const VectorXd& x) {
  if (m.head != Head::linear || m.output_dim() != 1) throw Error("predict_scalar: not a scalar model");
  return std::max(0.0, logits(m, x)(0));
}

// ---------------------------------------------------------------------------
// Loss and gradients

struct Gradients {
  std::vector<MatrixXd> weight;
  std::vector<VectorXd> bias;

  static Gradients zeros_like(const MlpModel& m) {
    Gradients g;
    for (const auto& l : m.layers) {
      g.weight.push_back(MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(VectorXd::Zero(l.bias.size()));
    }
    return g;
  }
};

/// A mini-batch: inputs and targets stored column-wise.
struct Batch {
  MatrixXd inputs;        // in x B
  MatrixXd targets;       // out x B (distribution or scalar)
  std::vector<int> self;  // masked output per column (-1 for none)
};

/// Reusable forward/backward workspace.
class Backprop {
 public:
  /// Mean batch loss; fills `grad` when non-null. Softmax head: mean
  /// cross-entropy relative to the target entropy (KL(target || model)).
  /// Linear head: half the mean squared error. Dropout is applied when
  /// `rng` is non-null.
  double run(const MlpModel& m, const Batch& b, Gradients* grad, std::mt19937_64* rng) {
    const auto depth = m.layers.size();
    const Eigen::Index bs = b.inputs.cols();
    act_.resize(depth);
    mask_.resize(depth);
    const MatrixXd* h = &b.inputs;
    const bool dropout = rng != nullptr && m.dropout_p > 0.0;
    const double scale = dropout ? 1.0 / (1.0 - m.dropout_p) : 1.0;
    std::bernoulli_distribution keep(1.0 - m.dropout_p);
    for (std::size_t l = 0; l < depth; ++l) {
      act_[l].noalias() = m.layers[l].weight * *h;
      act_[l].colwise() += m.layers[l].bias;
      if (l + 1 < depth) {
        mask_[l].resize(act_[l].rows(), act_[l].cols());
        for (Eigen::Index i = 0; i < act_[l].size(); ++i) {
          const bool on = act_[l].data()[i] > 0.0 && (!dropout || keep(*rng));
          mask_[l].data()[i] = on ? scale : 0.0;
        }
        act_[l].array() *= mask_[l].array();
      }
      h = &act_[l];
    }

    MatrixXd& out = act_[depth - 1];
    delta_.resize(out.rows(), bs);
    double loss = 0.0;
    if (m.head == Head::softmax) {
      for (Eigen::Index c = 0; c < bs; ++c) {
        const int self = b.self.empty() ? -1 : b.self[static_cast<std::size_t>(c)];
        const VectorXd p = softmax(out.col(c), self);
        for (Eigen::Index j = 0; j < p.size(); ++j) {
          const double t = b.targets(j, c);
          if (t > 0.0) loss += t * (std::log(t) - std::log(std::max(p(j), 1e-300)));
        }
        delta_.col(c) = (p - b.targets.col(c)) / static_cast<double>(bs);
        if (self >= 0) delta_(self, c) = 0.0;
      }
    } else {
      const MatrixXd diff = out - b.targets;
      loss = 0.5 * diff.squaredNorm();
      delta_ = diff / static_cast<double>(bs);
    }
    loss /= static_cast<double>(bs);
    if (!grad) return loss;

    for (std::size_t l = depth; l-- > 0;) {
      const MatrixXd& prev = l == 0 ? b.inputs : act_[l - 1];
      grad->weight[l].noalias() = delta_ * prev.transpose();
      grad->bias[l] = delta_.rowwise().sum();
      if (l > 0) {
        back_.noalias() = m.layers[l].weight.transpose() * delta_;
        delta_ = back_.cwiseProduct(mask_[l - 1]);
      }
    }
    return loss;
  }

 private:
  std::vector<MatrixXd> act_;
  std::vector<MatrixXd> mask_;
  MatrixXd delta_;
  MatrixXd back_;
};

/// Clean (no dropout, no noise) loss over a whole data set.
inline double dataset_loss(const MlpModel& m, const Batch& all) {
  Backprop bp;
  return bp.run(m, all, nullptr, nullptr);
}

struct Adadelta {
  double rho = 0.95;
  double eps = 1e-6;
  Gradients sq_grad;
  Gradients sq_step;

  explicit Adadelta(const MlpModel& m, double rho_, double eps_)
      : rho(rho_), eps(eps_), sq_grad(Gradients::zeros_like(m)), sq_step(Gradients::zeros_like(m)) {}

  void apply(MlpModel& m, const Gradients& g) {
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      update(m.layers[l].weight.data(), g.weight[l].data(), sq_grad.weight[l].data(),
             sq_step.weight[l].data(), m.layers[l].weight.size());
      update(m.layers[l].bias.data(), g.bias[l].data(), sq_grad.bias[l].data(),
             sq_step.bias[l].data(), m.layers[l].bias.size());
    }
  }

 private:
  void update(double* x, const double* g, double* eg, double* ex, Eigen::Index n) const {
    for (Eigen::Index i = 0; i < n; ++i) {
      eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
      const double dx = -std::sqrt(ex[i] + eps) / std::sqrt(eg[i] + eps) * g[i];
      ex[i] = rho * ex[i] + (1.0 - rho) * dx * dx;
      x[i] += dx;
    }
  }
};

/// Training samples, one per row of `inputs` / `targets`.
struct Dataset {
  MatrixXd inputs;   // samples x features (standardized)
  MatrixXd targets;  // samples x outputs
  std::vector<int> self;

  Eigen::Index size() const { return inputs.rows(); }
  Batch as_batch() const { return {inputs.transpose(), targets.transpose(), self}; }
};

struct TrainResult {
  MlpModel model;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // clean loss after each epoch, if tracked
};

/// Mini-batch ADADELTA with per-epoch shuffling, fresh Gaussian input noise
/// per presentation and dropout on hidden layers. Deterministic given seed.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, int depth,
                         Head head = Head::softmax) {
  cfg.validate();
  if (data.size() < 2) throw Error("train: need at least two samples");
  if (data.targets.rows() != data.size()) throw Error("train: inputs and targets differ in length");
  std::mt19937_64 rng(cfg.seed);
  TrainResult res;
  res.model = MlpModel::glorot(data.inputs.cols(), data.targets.cols(), depth, rng(), head,
                               cfg.dropout_p);
  const Batch all = data.as_batch();
  res.initial_loss = dataset_loss(res.model, all);

  Adadelta opt(res.model, cfg.adadelta_rho, cfg.adadelta_eps);
  Gradients grad = Gradients::zeros_like(res.model);
  Backprop bp;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  std::normal_distribution<double> noise(0.0, 1.0);
  Batch batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto bs = static_cast<Eigen::Index>(
          std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size)));
      batch.inputs.resize(data.inputs.cols(), bs);
      batch.targets.resize(data.targets.cols(), bs);
      batch.self.resize(static_cast<std::size_t>(bs));
      for (Eigen::Index c = 0; c < bs; ++c) {
        const Eigen::Index r = order[start + static_cast<std::size_t>(c)];
        batch.inputs.col(c) = data.inputs.row(r).transpose();
        if (cfg.input_noise_sigma > 0.0)
          for (Eigen::Index f = 0; f < batch.inputs.rows(); ++f)
            batch.inputs(f, c) += cfg.input_noise_sigma * noise(rng);
        batch.targets.col(c) = data.targets.row(r).transpose();
        batch.self[static_cast<std::size_t>(c)] = data.self.empty() ? -1 : data.self[static_cast<std::size_t>(r)];
      }
      const double loss = bp.run(res.model, batch, &grad, &rng);
      if (!std::isfinite(loss))
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
                    " (check feature scaling and targets)");
      opt.apply(res.model, grad);
    }
    if (cfg.track_loss) res.loss_history.push_back(dataset_loss(res.model, all));
  }
  res.final_loss = dataset_loss(res.model, all);
  return res;
}

}  // namespace mobinsight::model

#endif  // MOBINSIGHT_MODEL_HPP
