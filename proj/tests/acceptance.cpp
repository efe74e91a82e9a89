// End-to-end acceptance run on the default synthetic city.
//
//   acceptance [work_dir]
//
// Prints one PASS/FAIL line per criterion and exits nonzero if any fails.
// Without a work_dir the city is built in a temp dir that is removed afterwards.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "mobinsight/pipeline.hpp"
#include "mobinsight/service.hpp"
#include "support.hpp"

using namespace mobinsight;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using mobility::Direction;

namespace {

// Tolerances and thresholds, pinned.
constexpr double kSoftmaxTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kNumericBudgetS = 60.0;
constexpr double kPipelineBudgetS = 15 * 60.0;
constexpr double kBaselineMargin = 0.10;
constexpr double kAblationMargin = 0.05;
constexpr double kDedupMin = 0.95;
constexpr double kAriMin = 0.9;
constexpr double kLsaTol = 1e-8;
constexpr double kSilhouetteTol = 1e-9;
constexpr double kHomeMin = 0.95;
constexpr double kCorrelationMin = 0.9;
constexpr double kStatsTol = 1e-12;
constexpr double kServiceTol = 1e-12;
constexpr double kRowSumTol = 1e-9;

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << "  " << detail << std::endl;
  if (!ok) ++failures;
}

std::string num(double v, int prec = 4) { return pipeline::fmt(v, prec); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- numerical core -------------------------------------------------------

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

double worst_gradient_error(int depth, model::Head head) {
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
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < m.layers[l].weight.size(); ++i)
      probe(m.layers[l].weight.data()[i], grad.weight[l].data()[i]);
    for (Eigen::Index i = 0; i < m.layers[l].bias.size(); ++i)
      probe(m.layers[l].bias.data()[i], grad.bias[l].data()[i]);
  }
  return worst;
}

void check_numerical_core() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 5.0);
  std::exponential_distribution<double> e(1.0);
  double softmax_err = 0.0, kl_min = 1e300, kl_self = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    VectorXd z(17);
    for (auto& v : z) v = g(rng);
    softmax_err = std::max(softmax_err, std::abs(model::softmax(z).sum() - 1.0));
    softmax_err = std::max(softmax_err, std::abs(model::softmax(z, trial % 17).sum() - 1.0));
    VectorXd p(17), q(17);
    for (Eigen::Index i = 0; i < 17; ++i) {
      p(i) = e(rng);
      q(i) = e(rng);
    }
    p /= p.sum();
    q /= q.sum();
    kl_min = std::min(kl_min, model::kl_divergence(p, q));
    kl_self = std::max(kl_self, std::abs(model::kl_divergence(p, p)));
  }
  double grad = 0.0;
  for (int depth = 1; depth <= 4; ++depth)
    for (auto head : {model::Head::softmax, model::Head::linear})
      grad = std::max(grad, worst_gradient_error(depth, head));
  model::TrainConfig cfg;
  cfg.epochs = 400;
  cfg.dropout_p = 0.0;
  cfg.input_noise_sigma = 0.0;
  cfg.seed = 5;
  const auto tr = model::train(cfg, toy_dataset(40, 5, 6, 33), 1);
  const double elapsed = seconds_since(t0);
  const bool ok = softmax_err <= kSoftmaxTol && kl_min >= 0.0 && kl_self == 0.0 && grad < kGradTol &&
                  tr.final_loss < 0.1 * tr.initial_loss && elapsed < kNumericBudgetS;
  report("numerical-core", ok,
         "softmax_err=" + sci(softmax_err) + " kl_min=" + num(kl_min, 6) + " kl_self=" + sci(kl_self) +
             " grad_rel_err=" + sci(grad) + " toy_loss=" + num(tr.initial_loss) + "->" + num(tr.final_loss) +
             " elapsed_s=" + num(elapsed, 1));
}

// ---- artifact-driven criteria ----------------------------------------------

double mean_kl(const json& ev, const std::string& task, const std::string& model) {
  return ev.at("tasks").at(task).at("models").at(model).at("mean_kl").get<double>();
}

void check_model_comparison(const json& ev, double pipeline_s) {
  bool ok = pipeline_s < kPipelineBudgetS;
  std::ostringstream d;
  for (const std::string task : {"to", "from"}) {
    const double nf = mean_kl(ev, task, pipeline::model_name::kNf);
    const double grav = mean_kl(ev, task, pipeline::model_name::kGravity);
    const double avg = mean_kl(ev, task, pipeline::model_name::kAverage);
    const double rnd = mean_kl(ev, task, pipeline::model_name::kRandom);
    ok = ok && nf < grav && nf < avg && nf < rnd;
    ok = ok && nf <= (1.0 - kBaselineMargin) * grav && nf <= (1.0 - kBaselineMargin) * avg;
    d << task << ": NF_Dist=" << num(nf) << " Gravity=" << num(grav) << " Average=" << num(avg)
      << " Random=" << num(rnd) << "; ";
  }
  d << "pipeline_s=" << num(pipeline_s, 1);
  report("model-comparison-nf-beats-baselines", ok, d.str());
}

void check_ablation(const json& ev) {
  bool ok = true;
  std::ostringstream d;
  for (const std::string task : {"to", "from"}) {
    const double nf = mean_kl(ev, task, pipeline::model_name::kNf);
    const double wo = mean_kl(ev, task, pipeline::model_name::kAblation);
    const double gain = (wo - nf) / wo;
    ok = ok && gain >= kAblationMargin;
    d << task << ": NF_Dist=" << num(nf) << " NF_woPub_Dist=" << num(wo) << " gain=" << num(gain, 3) << "; ";
  }
  report("ablation-public-source", ok, d.str());
}

void check_depth_sweep(const json& ev, const json& rep) {
  bool ok = rep.at("depth_sweep").size() == 4;
  std::ostringstream d;
  for (const std::string task : {"to", "from"}) {
    const auto& depths = ev.at("tasks").at(task).at("depths");
    ok = ok && depths.size() == 4;
    auto at = [&](int k) { return depths.at(std::to_string(k)).at("mean_kl").get<double>(); };
    ok = ok && at(2) <= at(1) && at(3) <= at(1);
    d << task << ": d1=" << num(at(1)) << " d2=" << num(at(2)) << " d3=" << num(at(3)) << " d4=" << num(at(4))
      << "; ";
  }
  d << "report_rows=" << rep.at("depth_sweep").size();
  report("depth-sweep", ok, d.str());
}

void check_dedup(const synth::GeneratedCity& g, const fs::path& out) {
  const auto raw = places::read_jsonl(out / pipeline::artifact::kRawPlaces, places::raw_from_json);
  const auto canon = places::read_jsonl(out / pipeline::artifact::kCanonical, places::canonical_from_json);
  const auto s = testsupport::duplicate_pair_scores(testsupport::planted_partition(g.places),
                                                    testsupport::canonical_partition(raw, canon));
  auto mk = [](std::string src, std::string id, std::string name, double lat) {
    return places::RawPlace{std::move(src), std::move(id), std::move(name), {lat, 2.17}, {}, {}};
  };
  const std::vector<places::RawPlace> pair = {mk("A", "1", "Mobile World Center", 41.3870),
                                              mk("B", "9", "Mobile World Center, Barcelona", 41.3870 + 30.0 / 111194.93)};
  const bool merged = places::resolve_duplicates(pair).size() == 1;
  report("dedup-planted-duplicates", s.precision >= kDedupMin && s.recall >= kDedupMin && merged && s.true_pairs > 0,
         "precision=" + num(s.precision) + " recall=" + num(s.recall) + " true_pairs=" +
             std::to_string(s.true_pairs) + " name_variant_merged=" + (merged ? "yes" : "no"));
}

double brute_silhouette(const MatrixXd& x, const std::vector<int>& lab) {
  const auto n = x.rows();
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> acc;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      double dsq = 0;
      for (Eigen::Index c = 0; c < x.cols(); ++c) dsq += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
      auto& e = acc[lab[static_cast<std::size_t>(j)]];
      e.first += std::sqrt(dsq);
      e.second += 1;
    }
    const int own = lab[static_cast<std::size_t>(i)];
    if (!acc.count(own)) continue;
    const double a = acc[own].first / acc[own].second;
    double b = 1e300;
    for (const auto& [l, e] : acc)
      if (l != own) b = std::min(b, e.first / e.second);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

void check_semantics(const synth::GeneratedCity& g, const fs::path& out) {
  const auto [x, planted] = synth::planted_clusters(50, 4, 6, 6.0, 12);
  const double planted_ari = testsupport::adjusted_rand_index(planted, semantics::kmeans_best(x, 4, 5, 5).assignment);

  // Categories recovered for the city's canonical places against the planted ones.
  std::map<std::string, int> truth_of, label_index;
  for (const auto& p : g.places.truth) truth_of[p.key] = p.category;
  std::vector<int> truth, found;
  const auto categories = io::read_json(out / pipeline::artifact::kCategories);
  for (const auto& row : categories.at("places")) {
    const auto it = truth_of.find(row.at("canonical_id").get<std::string>());
    if (it == truth_of.end()) continue;
    truth.push_back(it->second);
    found.push_back(label_index.try_emplace(row.at("category").get<std::string>(), label_index.size()).first->second);
  }
  const double city_ari = testsupport::adjusted_rand_index(truth, found);

  std::mt19937_64 rng(4);
  std::bernoulli_distribution bit(0.35);
  MatrixXd m(20, 12);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = bit(rng) ? 1.0 : 0.0;
  const auto e = semantics::lsa_reduce(m, 5);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m.transpose() * m);
  const VectorXd ev = es.eigenvalues().reverse().cwiseMax(0.0).cwiseSqrt();
  double lsa_err = 0.0;
  for (int k = 0; k < 5; ++k) lsa_err = std::max(lsa_err, std::abs(e.singular_values(k) - ev(k)));

  std::normal_distribution<double> gauss;
  std::uniform_int_distribution<int> lab(0, 3);
  double sil_err = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    MatrixXd pts(40, 3);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = gauss(rng);
    std::vector<int> l(40);
    for (auto& v : l) v = lab(rng);
    sil_err = std::max(sil_err, std::abs(semantics::silhouette(pts, l) - brute_silhouette(pts, l)));
  }
  const bool ok = planted_ari >= kAriMin && city_ari >= kAriMin && !truth.empty() && lsa_err <= kLsaTol &&
                  sil_err <= kSilhouetteTol;
  report("semantics-clustering", ok,
         "planted_ari=" + num(planted_ari) + " city_category_ari=" + num(city_ari) + " places=" +
             std::to_string(truth.size()) + " lsa_err=" + sci(lsa_err) + " silhouette_err=" + sci(sil_err));
}

// Two-by-one neighborhoods with towers placed to exercise each ranking branch.
constexpr std::int64_t kSaturday = 1391212800;  // 2014-02-01 00:00 UTC
constexpr std::int64_t kMonday = kSaturday + 2 * 86400;

struct Toy {
  std::vector<geo::NeighborhoodGeometry> geoms;
  mobility::SiteMap sites;
  Toy() {
    geoms.push_back(geo::make_neighborhood("A", "A", testsupport::square(41.0, 2.0, 0.01), 100));
    geoms.push_back(geo::make_neighborhood("B", "B", testsupport::square(41.0, 2.01, 0.01), 100));
    geoms.push_back(geo::make_neighborhood("C", "C", testsupport::square(41.01, 2.0, 0.01), 100));
    sites["TA"] = {"TA", {41.005, 2.0099}, 0};
    sites["TB60"] = {"TB60", {41.005, 2.0099 + 60.0 / 83916.0}, 1};
    sites["TB500"] = {"TB500", {41.005, 2.0149}, 1};
    sites["TC"] = {"TC", {41.015, 2.005}, 2};
  }
};

std::vector<mobility::CdrRecord> burst(const std::string& bts, int count, std::int64_t start, std::int64_t step = 60) {
  std::vector<mobility::CdrRecord> out;
  for (int i = 0; i < count; ++i) out.push_back({"u", start + i * step, bts});
  return out;
}

std::vector<mobility::CdrRecord> join(std::vector<mobility::CdrRecord> a, const std::vector<mobility::CdrRecord>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void check_homes(const synth::GeneratedCity& g, const fs::path& out) {
  std::map<std::string, std::string> assigned;
  for (const auto& h : io::read_json(out / pipeline::artifact::kHomes))
    if (h.at("status") == "assigned") assigned[h.at("user_id")] = h.at("neighborhood_id");
  std::size_t total = 0, correct = 0;
  for (const auto& u : g.cdr.users) {
    if (u.kind != synth::UserKind::regular) continue;
    ++total;
    const auto it = assigned.find(u.id);
    correct += it != assigned.end() && it->second == g.city.geoms[static_cast<std::size_t>(u.home)].id;
  }
  const double frac = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  const auto summary = io::read_json(out / pipeline::artifact::kOdSummary);
  const double r = summary.at("population_correlation").value("r", 0.0);

  Toy t;
  const auto clear = mobility::detect_home("u", join(burst("TA", 20, kSaturday), burst("TB500", 5, kSaturday + 7200)), t.sites);
  const auto near = mobility::detect_home("u", join(burst("TA", 10, kSaturday), burst("TB60", 9, kSaturday + 7200)), t.sites);
  const auto far = mobility::detect_home("u", join(burst("TA", 10, kSaturday), burst("TB500", 9, kSaturday + 7200)), t.sites);
  const bool branches = clear.is_assigned() && clear.neighborhood == 0 && near.is_assigned() &&
                        near.neighborhood == 0 && !far.is_assigned() &&
                        far.reason == mobility::DiscardReason::ambiguous_home;
  report("home-detection", frac >= kHomeMin && r >= kCorrelationMin && branches && total > 0,
         "regular_users=" + std::to_string(total) + " correct=" + num(frac) + " population_r=" + num(r) +
             " branches=" + (branches ? "ok" : "wrong"));
}

void check_od(const synth::GeneratedCity& g, const fs::path& out) {
  const auto od = mobility::OdMatrix::from_json(io::read_json(out / pipeline::artifact::kOdTo));
  const auto from = mobility::OdMatrix::from_json(io::read_json(out / pipeline::artifact::kOdFrom));
  const bool exact = od.counts == g.cdr.true_visits;
  const bool transposed = from.counts == od.counts.transpose();

  Toy t;
  const auto recs = join(burst("TA", 12, kSaturday), burst("TC", 3, kMonday + 12 * 3600, 600));
  const auto homes = mobility::assign_homes(recs, t.sites);
  const auto b = mobility::build_od_matrix(recs, homes, t.sites, t.geoms);
  const bool same_day = b.matrix.counts(0, 2) == 1 && b.matrix.total() == 1;
  report("od-matrix", exact && transposed && same_day,
         std::string("equals_generator_tally=") + (exact ? "yes" : "no") + " from_is_transpose=" +
             (transposed ? "yes" : "no") + " total_visits=" + std::to_string(od.total()) +
             " three_same_day_records_count=" + std::to_string(b.matrix.counts(0, 2)));
}

std::vector<std::string> top_features(const json& imp, std::size_t k) {
  std::vector<std::pair<double, std::string>> v;
  for (const auto& f : imp.at("global").at("features")) v.emplace_back(f.at("mean_pct").get<double>(), f.at("name"));
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k && i < v.size(); ++i) out.push_back(v[i].second);
  return out;
}

void check_audit(const synth::GeneratedCity& g, const fs::path& out) {
  // The law shapes each origin's row through similarity on these categories and
  // through distance (read off the centroid coordinates).
  std::set<std::string> drivers = {"lat", "lon"};
  for (const auto& [label, w] : g.config.law.similarity)
    if (w > 0) drivers.insert(label);
  for (const auto& [origin, dest, w] : g.config.law.interactions)
    if (w != 0) drivers.insert(origin);
  bool ok = true;
  std::ostringstream d;
  for (auto task : {Direction::to, Direction::from}) {
    const auto top = top_features(io::read_json(out / pipeline::artifact::importance(task)), drivers.size());
    ok = ok && std::set<std::string>(top.begin(), top.end()) == drivers;
    d << mobility::to_string(task) << " top" << drivers.size() << "=[";
    for (std::size_t i = 0; i < top.size(); ++i) d << (i ? "," : "") << top[i];
    d << "]; ";
  }

  // A feature the first layer ignores cannot move the loss.
  evaluation::FeatureTable table;
  table.values = MatrixXd::Random(8, 4).cwiseAbs() * 10.0;
  table.names = {"f0", "f1", "f2", "f3"};
  table.count_features = 4;
  std::vector<int> self;
  for (int i = 0; i < 8; ++i) {
    table.ids.push_back("n" + std::to_string(i));
    self.push_back(i);
  }
  evaluation::FoldModel fm;
  fm.model = model::MlpModel::glorot(4, 8, 2, 5, model::Head::softmax, 0.5, 10);
  fm.stats = model::Standardizer::fit(table.values);
  fm.model.layers[0].weight.col(1).setZero();
  const MatrixXd targets = baselines::normalize_each_row(MatrixXd::Random(8, 8).cwiseAbs());
  const double zero = audit::permutation_importance(fm, table.values, targets, self, 1, 10, 3).mean_pct;

  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const std::vector<double> y{2.3, 1.9, 4.4, 3.8, 6.1, 5.2, 8.8, 7.1, 9.9, 9.4};
  long double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
  }
  const long double n = 10;
  const double r_oracle = static_cast<double>((n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy)));
  const double r_err = std::abs(stats::pearson(x, y).r - r_oracle);
  const double var_oracle = static_cast<double>(sxx / n - (sx / n) * (sx / n));
  const double var_err = std::abs(stats::population_variance(x) - var_oracle);

  ok = ok && zero == 0.0 && r_err <= kStatsTol && var_err <= kStatsTol;
  d << "zero_weight_pct=" << sci(zero) << " pearson_err=" << sci(r_err) << " variance_err=" << sci(var_err);
  report("audit-importance", ok, d.str());
}

double json_sum(const json& a) {
  double s = 0.0;
  for (const auto& v : a) s += v.get<double>();
  return s;
}

double json_max_diff(const json& a, const json& b) {
  if (a.size() != b.size()) return 1e300;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i].get<double>() - b[i].get<double>()));
  return m;
}

void check_service(const fs::path& out) {
  const auto store = service::ArtifactStore::load(out);
  const service::Api api(store);
  httplib::Server server;
  service::mount(server, api, store);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const auto ev = io::read_json(out / pipeline::artifact::kEvaluation);
  const int depth = ev.at("nf_depth").get<int>();
  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(60, 0);
  auto get = [&](const std::string& path) -> json {
    auto res = c.Get(path);
    if (!res || res->status != 200) return nullptr;
    return json::parse(res->body);
  };
  double row_err = 0.0, kl_err = 0.0, noop_err = 0.0;
  std::size_t requests = 0, bad = 0;
  const auto& ids = store.features().ids;
  for (const std::string dir : {"to", "from"}) {
    const auto& fold_kl = ev.at("tasks").at(dir).at("depths").at(std::to_string(depth)).at("fold_kl");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto od = get("/api/od?direction=" + dir + "&id=" + ids[i]);
      const auto est = get("/api/estimate/" + ids[i] + "?direction=" + dir);
      json w = nullptr;
      if (auto res = c.Post("/api/whatif", json{{"id", ids[i]}, {"direction", dir}, {"feature_deltas", json::object()}}.dump(),
                            "application/json");
          res && res->status == 200)
        w = json::parse(res->body);
      requests += 3;
      if (od.is_null() || est.is_null() || w.is_null()) {
        ++bad;
        continue;
      }
      row_err = std::max(row_err, std::abs(json_sum(od.at("row")) - 1.0));
      row_err = std::max(row_err, std::abs(json_sum(est.at("prediction")) - 1.0));
      kl_err = std::max(kl_err, std::abs(est.at("kl").get<double>() - fold_kl[i].get<double>()));
      noop_err = std::max(noop_err, json_max_diff(w.at("prediction"), est.at("prediction")));
    }
  }
  server.stop();
  th.join();
  const bool ok = port > 0 && bad == 0 && row_err <= kRowSumTol && kl_err <= kServiceTol && noop_err <= kServiceTol;
  report("service-endpoints", ok,
         "requests=" + std::to_string(requests) + " failed=" + std::to_string(bad) + " row_sum_err=" +
             sci(row_err) + " estimate_vs_fold_kl=" + sci(kl_err) + " whatif_noop_err=" + sci(noop_err));
}

}  // namespace

int main(int argc, char** argv) {
  std::optional<testsupport::TempDir> tmp;
  fs::path work;
  if (argc > 1) {
    work = argv[1];
    fs::create_directories(work);
  } else {
    tmp.emplace("acceptance");
    work = tmp->path();
  }
  const fs::path city = work / "city";
  const fs::path out = city / "out";

  check_numerical_core();

  const auto t0 = Clock::now();
  const auto g = synth::generate(synth::SynthConfig{});
  synth::write_city(g, city);
  for (const auto& stage : pipeline::stage_names()) {
    if (stage == "synth") continue;
    const auto ts = Clock::now();
    const int rc = pipeline::run_stage_status(stage, city / "manifest.json");
    std::cerr << "stage " << stage << " rc=" << rc << " " << num(seconds_since(ts), 1) << "s" << std::endl;
    if (rc != 0) {
      report("pipeline", false, "stage " + stage + " exited with " + std::to_string(rc));
      return 1;
    }
  }
  const double pipeline_s = seconds_since(t0);

  const auto ev = io::read_json(out / pipeline::artifact::kEvaluation);
  check_model_comparison(ev, pipeline_s);
  check_ablation(ev);
  check_depth_sweep(ev, io::read_json(out / pipeline::artifact::kReportJson));
  check_dedup(g, out);
  check_semantics(g, out);
  check_homes(g, out);
  check_od(g, out);
  check_audit(g, out);
  check_service(out);

  std::cout << (failures ? "FAILED " : "ALL PASSED ") << failures << " failing criteria" << std::endl;
  return failures ? 1 : 0;
}
