#ifndef MOBINSIGHT_SEMANTICS_HPP
#define MOBINSIGHT_SEMANTICS_HPP

// Semantic aggregation: term matrix -> LSA -> k-means -> categories ->
// per-neighborhood profiles.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mobinsight/geo.hpp"
#include "mobinsight/io.hpp"
#include "mobinsight/places.hpp"

namespace mobinsight::semantics {

// ---------------------------------------------------------------------------
// Lemmatization

struct SuffixRule {
  std::string suffix;
  std::string replacement;
  std::size_t min_stem = 3;  // characters that must remain before the suffix
};

struct LemmaRules {
  std::vector<SuffixRule> rules;     // first match wins
  std::set<std::string> exceptions;  // tokens left untouched

  /// English plural and gerund rules.
  static LemmaRules english() {
    LemmaRules r;
    r.rules = {{"ies", "y", 2},  {"sses", "ss", 2}, {"ches", "ch", 1}, {"shes", "sh", 1},
               {"xes", "x", 2},  {"ing", "", 3},    {"s", "", 3}};
    r.exceptions = {"bus", "gas", "news", "series", "species", "business", "glass", "class",
                    "swiss", "always", "lens", "virus", "campus", "status", "chaos", "thing",
                    "spring", "during", "ceiling", "king", "ring", "wing", "string", "morning",
                    "evening", "sibling", "duckling"};
    return r;
  }

  static LemmaRules from_json(const json& j) {
    LemmaRules r;
    for (const auto& rule : j.at("rules"))
      r.rules.push_back({rule.at("suffix"), rule.value("replace", ""), rule.value("min_stem", 3u)});
    if (j.contains("exceptions")) r.exceptions = j.at("exceptions").get<std::set<std::string>>();
    return r;
  }

  json to_json() const {
    json rs = json::array();
    for (const auto& r : rules)
      rs.push_back({{"suffix", r.suffix}, {"replace", r.replacement}, {"min_stem", r.min_stem}});
    return {{"rules", rs}, {"exceptions", exceptions}};
  }
};

/// Applies the first matching suffix rule repeatedly until none applies.
/// Every rule shortens the token, so this terminates and is idempotent.
inline std::string lemmatize(std::string token, const LemmaRules& rules) {
  for (;;) {
    if (rules.exceptions.count(token)) return token;
    bool changed = false;
    for (const auto& r : rules.rules) {
      if (r.suffix.size() <= r.replacement.size()) continue;
      if (token.size() < r.suffix.size() + r.min_stem) continue;
      if (token.compare(token.size() - r.suffix.size(), r.suffix.size(), r.suffix) != 0) continue;
      token.resize(token.size() - r.suffix.size());
      token += r.replacement;
      changed = true;
      break;
    }
    if (!changed) return token;
  }
}

inline std::string lemmatize(std::string token) {
  static const LemmaRules kDefault = LemmaRules::english();
  return lemmatize(std::move(token), kDefault);
}

/// All contiguous n-grams (n = 1..t) of a t-token tag after normalization
/// and lemmatization.
inline std::vector<std::string> tag_ngrams(const std::string& tag, const LemmaRules& rules) {
  auto tokens = places::normalize_name(tag);
  for (auto& t : tokens) t = lemmatize(std::move(t), rules);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string gram;
    for (std::size_t j = i; j < tokens.size(); ++j) {
      if (j > i) gram += ' ';
      gram += tokens[j];
      out.push_back(gram);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Term matrix

struct TermVocabulary {
  std::map<std::string, int> entries;
  std::vector<std::string> terms;  // index -> n-gram
  std::size_t size() const { return terms.size(); }
  int find(const std::string& t) const {
    auto it = entries.find(t);
    return it == entries.end() ? -1 : it->second;
  }
};

/// Binary place x n-gram incidence, stored as sorted column lists.
struct PlaceTermMatrix {
  std::vector<std::vector<int>> rows;
  std::size_t cols = 0;

  bool row_empty(std::size_t r) const { return rows[r].empty(); }
  std::size_t empty_rows() const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.empty(); }));
  }
  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                                              static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int c : rows[r]) m(static_cast<Eigen::Index>(r), c) = 1.0;
    return m;
  }
};

inline std::pair<TermVocabulary, PlaceTermMatrix> build_term_matrix(
    std::span<const places::CanonicalPlace> places,
    const LemmaRules& rules = LemmaRules::english()) {
  if (places.empty()) throw Error("build_term_matrix: no places");
  std::vector<std::set<std::string>> grams(places.size());
  std::set<std::string> all;
  for (std::size_t i = 0; i < places.size(); ++i) {
    for (const auto& tag : places[i].tags)
      for (auto& g : tag_ngrams(tag, rules)) grams[i].insert(std::move(g));
    all.insert(grams[i].begin(), grams[i].end());
  }
  TermVocabulary vocab;
  for (const auto& t : all) {
    vocab.entries.emplace(t, static_cast<int>(vocab.terms.size()));
    vocab.terms.push_back(t);
  }
  PlaceTermMatrix m;
  m.cols = vocab.size();
  m.rows.resize(places.size());
  for (std::size_t i = 0; i < places.size(); ++i) {
    for (const auto& g : grams[i]) m.rows[i].push_back(vocab.entries.at(g));
    std::sort(m.rows[i].begin(), m.rows[i].end());
  }
  return {std::move(vocab), std::move(m)};
}

// ---------------------------------------------------------------------------
// LSA

struct Embedding {
  Eigen::MatrixXd coords;            // places x d
  Eigen::VectorXd singular_values;   // full spectrum, descending
  Eigen::MatrixXd right_vectors;     // terms x d
  int d = 0;
  int requested_d = 0;
  double explained_variance_ratio = 0.0;
  bool clamped = false;
};

inline int numerical_rank(const Eigen::VectorXd& s, Eigen::Index rows, Eigen::Index cols) {
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double tol = s(0) * static_cast<double>(std::max(rows, cols)) *
                     std::numeric_limits<double>::epsilon();
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > tol) ++r;
  return r;
}

/// Rank-d truncated SVD; rows are embedded as U_d * diag(sigma_d). Each
/// right singular vector is oriented so its first nonzero entry is positive.
inline Embedding lsa_reduce(const Eigen::MatrixXd& m, int d) {
  if (d < 1) throw Error("lsa_reduce: d must be >= 1");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Embedding e;
  e.requested_d = d;
  e.singular_values = svd.singularValues();
  const int rank = numerical_rank(e.singular_values, m.rows(), m.cols());
  if (rank == 0) throw Error("lsa_reduce: zero matrix");
  if (d > rank) {
    io::warn("lsa_reduce: d=" + std::to_string(d) + " exceeds matrix rank " +
             std::to_string(rank) + "; clamping");
    d = rank;
    e.clamped = true;
  }
  e.d = d;
  Eigen::MatrixXd u = svd.matrixU().leftCols(d);
  Eigen::MatrixXd v = svd.matrixV().leftCols(d);
  for (int j = 0; j < d; ++j) {
    const double scale = v.col(j).cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      if (std::abs(v(i, j)) > 1e-10 * scale) {
        if (v(i, j) < 0) {
          v.col(j) *= -1.0;
          u.col(j) *= -1.0;
        }
        break;
      }
    }
  }
  e.coords = u * e.singular_values.head(d).asDiagonal();
  e.right_vectors = std::move(v);
  const double total = e.singular_values.squaredNorm();
  e.explained_variance_ratio = e.singular_values.head(d).squaredNorm() / total;
  return e;
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
  std::vector<int> assignment;
  Eigen::MatrixXd centroids;  // k x dims
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after each Lloyd iteration
  int iterations = 0;
};

namespace detail {
inline double sq_dist(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& c,
                      Eigen::Index j) {
  return (x.row(i) - c.row(j)).squaredNorm();
}
}  // namespace detail

/// Lloyd iterations from k-means++ seeding; stops at an assignment fixpoint
/// or after `max_iter` iterations. Empty clusters are moved to the point
/// farthest from its centroid.
inline KMeansResult kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed,
                           int max_iter = 300) {
  const Eigen::Index n = x.rows();
  if (k < 1) throw Error("kmeans: k must be >= 1");
  if (k > n) throw Error("kmeans: k exceeds number of points");
  std::mt19937_64 rng(seed);
  KMeansResult res;
  res.centroids.resize(k, x.cols());

  // k-means++ seeding
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  res.centroids.row(0) = x.row(pick(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = detail::sq_dist(x, i, res.centroids, 0);
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      double r = unit(rng) * total;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2[i];
        if (r < 0.0 && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
      while (d2[chosen] == 0.0 && chosen > 0) --chosen;
    } else {
      chosen = pick(rng);
    }
    res.centroids.row(c) = x.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], detail::sq_dist(x, i, res.centroids, c));
  }

  res.assignment.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = detail::sq_dist(x, i, res.centroids, 0);
      for (int c = 1; c < k; ++c) {
        const double dd = detail::sq_dist(x, i, res.centroids, c);
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    res.iterations = iter + 1;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.assignment[i]) += x.row(i);
      ++counts[res.assignment[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) res.centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      dist[i] = detail::sq_dist(x, i, res.centroids, res.assignment[i]);
      inertia += dist[i];
    }
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i)
        if (!taken[i] && (far < 0 || dist[i] > dist[far])) far = i;
      taken[far] = true;
      res.centroids.row(c) = x.row(far);
    }
    res.inertia_history.push_back(inertia);
  }
  res.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    res.inertia += detail::sq_dist(x, i, res.centroids, res.assignment[i]);
  return res;
}

// ---------------------------------------------------------------------------
// Silhouette

namespace detail {

// Mean silhouette over `subset` rows, measuring distances only within `subset`.
template <typename DistFn>
double silhouette_core(std::span<const Eigen::Index> subset, std::span<const int> labels,
                       DistFn&& dist) {
  int max_label = -1;
  for (auto i : subset) max_label = std::max(max_label, labels[static_cast<std::size_t>(i)]);
  const auto k = static_cast<std::size_t>(max_label + 1);
  std::vector<std::size_t> sizes(k, 0);
  for (auto i : subset) ++sizes[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  std::size_t nonempty = 0;
  for (auto s : sizes) nonempty += s > 0;
  if (nonempty < 2) throw Error("silhouette: at least two nonempty clusters required");

  std::vector<double> sums(k);
  double total = 0.0;
  for (auto i : subset) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (auto j : subset)
      if (j != i) sums[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] += dist(i, j);
    const auto own = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    if (sizes[own] <= 1) continue;  // singleton clusters score 0
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own && sizes[c] > 0) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(subset.size());
}

inline std::vector<Eigen::Index> silhouette_subset(Eigen::Index n, std::size_t max_exact,
                                                   std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (static_cast<std::size_t>(n) > max_exact) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_exact);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

}  // namespace detail

/// Mean silhouette with Euclidean distances. Above `max_exact` points a
/// seeded uniform subsample is scored.
inline double silhouette(const Eigen::MatrixXd& x, std::span<const int> assignment,
                         std::uint64_t seed = 0, std::size_t max_exact = 5000) {
  if (x.rows() < 2) throw Error("silhouette: need at least two points");
  if (static_cast<std::size_t>(x.rows()) != assignment.size())
    throw Error("silhouette: assignment length mismatch");
  const auto subset = detail::silhouette_subset(x.rows(), max_exact, seed);
  return detail::silhouette_core(subset, assignment, [&](Eigen::Index i, Eigen::Index j) {
    return (x.row(i) - x.row(j)).norm();
  });
}

/// Same as `silhouette` but over a precomputed distance matrix.
inline double silhouette_from_distances(const Eigen::MatrixXd& dist,
                                        std::span<const int> assignment) {
  const auto subset = detail::silhouette_subset(dist.rows(), static_cast<std::size_t>(dist.rows()), 0);
  return detail::silhouette_core(subset, assignment,
                                 [&](Eigen::Index i, Eigen::Index j) { return dist(i, j); });
}

inline Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd g = x * x.transpose();
  Eigen::MatrixXd d(x.rows(), x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      d(i, j) = i == j ? 0.0 : std::sqrt(std::max(0.0, sq(i) + sq(j) - 2.0 * g(i, j)));
  return d;
}

/// Smallest k whose score is within `tolerance` of the best score.
inline int select_k(std::span<const int> ks, std::span<const double> scores,
                    double tolerance = 0.01) {
  if (ks.empty() || ks.size() != scores.size()) throw Error("select_k: bad k range");
  const double best = *std::max_element(scores.begin(), scores.end());
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (scores[i] >= best - tolerance) return ks[i];
  return ks.back();
}

/// Best of `restarts` seeded runs by final inertia (earliest run on ties).
inline KMeansResult kmeans_best(const Eigen::MatrixXd& x, int k, std::uint64_t seed, int restarts,
                                int max_iter = 300) {
  if (restarts < 1) throw Error("kmeans: restarts must be >= 1");
  KMeansResult best = kmeans(x, k, seed, max_iter);
  for (int r = 1; r < restarts; ++r) {
    auto run = kmeans(x, k, seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(r), max_iter);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

struct KSweep {
  std::vector<int> ks;
  std::vector<double> scores;
  int chosen = 0;
};

/// Runs k-means for every k in range and scores it by silhouette.
inline KSweep sweep_k(const Eigen::MatrixXd& x, std::span<const int> k_range, double tolerance,
                      std::uint64_t seed, int restarts = 1) {
  KSweep sweep;
  std::optional<Eigen::MatrixXd> dist;
  if (x.rows() <= 4000) dist = pairwise_distances(x);
  for (int k : k_range) {
    if (k < 2 || k >= x.rows()) continue;
    const auto km = kmeans_best(x, k, seed, restarts);
    const double s = dist ? silhouette_from_distances(*dist, km.assignment)
                          : silhouette(x, km.assignment, seed);
    sweep.ks.push_back(k);
    sweep.scores.push_back(s);
  }
  if (sweep.ks.empty()) throw Error("sweep_k: no admissible k in range");
  sweep.chosen = select_k(sweep.ks, sweep.scores, tolerance);
  return sweep;
}

// ---------------------------------------------------------------------------
// Categories

/// Labels recoverable from the source categorisation; the remainder of the
/// 17-slot scheme is filled with placeholders.
inline std::vector<std::string> default_categories() {
  return {"Bar",         "Eating",           "Club",
          "Education",   "Health",           "Offices",
          "Leisure",     "Professional services", "Daily Purchases",
          "Special purchases", "Attraction", "Administrative offices",
          "Placeholder 13", "Placeholder 14", "Placeholder 15",
          "Placeholder 16", "Placeholder 17"};
}

struct CategoryScheme {
  std::vector<std::string> categories;
  std::map<int, std::string> cluster_to_category;
  // Optional: lemmatized keywords per category, used to map clusters that
  // the explicit table does not cover.
  std::map<std::string, std::vector<std::string>> category_keywords;
  std::optional<std::string> fallback_category;

  int category_index(const std::string& label) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
      if (categories[i] == label) return static_cast<int>(i);
    return -1;
  }

  static CategoryScheme from_json(const json& j) {
    CategoryScheme s;
    s.categories = j.contains("categories") ? j.at("categories").get<std::vector<std::string>>()
                                            : default_categories();
    if (s.categories.empty()) throw Error("category scheme: empty category list");
    if (j.contains("cluster_to_category"))
      for (const auto& [k, v] : j.at("cluster_to_category").items())
        s.cluster_to_category[std::stoi(k)] = v.get<std::string>();
    if (j.contains("category_keywords"))
      s.category_keywords =
          j.at("category_keywords").get<std::map<std::string, std::vector<std::string>>>();
    if (j.contains("fallback_category")) s.fallback_category = j.at("fallback_category");
    for (const auto& [k, v] : s.cluster_to_category)
      if (s.category_index(v) < 0) throw Error("category scheme: unknown label '" + v + "'");
    for (const auto& [k, v] : s.category_keywords)
      if (s.category_index(k) < 0) throw Error("category scheme: unknown label '" + k + "'");
    return s;
  }

  json to_json() const {
    json m = json::object();
    for (const auto& [k, v] : cluster_to_category) m[std::to_string(k)] = v;
    json j = {{"categories", categories}, {"cluster_to_category", m}};
    if (!category_keywords.empty()) j["category_keywords"] = category_keywords;
    if (fallback_category) j["fallback_category"] = *fallback_category;
    return j;
  }

  void validate(int k) const {
    for (int c = 0; c < k; ++c)
      if (!cluster_to_category.count(c))
        throw Error("category scheme: cluster " + std::to_string(c) + " is not mapped");
  }
};

/// Completes `scheme` for clusters 0..k-1 by keyword voting: each member
/// place votes for every category whose keyword appears among its n-grams.
inline CategoryScheme map_clusters(CategoryScheme scheme, int k, std::span<const int> assignment,
                                   const TermVocabulary& vocab, const PlaceTermMatrix& m,
                                   const LemmaRules& rules = LemmaRules::english()) {
  std::vector<std::vector<double>> votes(static_cast<std::size_t>(k),
                                         std::vector<double>(scheme.categories.size(), 0.0));
  std::vector<std::vector<int>> keyword_cols(scheme.categories.size());
  for (const auto& [label, words] : scheme.category_keywords) {
    const auto ci = static_cast<std::size_t>(scheme.category_index(label));
    for (const auto& w : words) {
      std::string joined;
      for (const auto& g : tag_ngrams(w, rules)) joined = g;  // longest n-gram
      const int col = vocab.find(joined);
      if (col >= 0) keyword_cols[ci].push_back(col);
    }
  }
  for (std::size_t p = 0; p < assignment.size(); ++p) {
    const auto& row = m.rows[p];
    for (std::size_t ci = 0; ci < keyword_cols.size(); ++ci)
      for (int col : keyword_cols[ci])
        if (std::binary_search(row.begin(), row.end(), col))
          votes[static_cast<std::size_t>(assignment[p])][ci] += 1.0;
  }
  for (int c = 0; c < k; ++c) {
    if (scheme.cluster_to_category.count(c)) continue;
    const auto& v = votes[static_cast<std::size_t>(c)];
    const auto best = std::max_element(v.begin(), v.end());
    if (*best > 0.0) {
      scheme.cluster_to_category[c] = scheme.categories[static_cast<std::size_t>(best - v.begin())];
    } else if (scheme.fallback_category) {
      scheme.cluster_to_category[c] = *scheme.fallback_category;
    } else {
      throw Error("category scheme: cluster " + std::to_string(c) +
                  " has no mapping and no keyword match");
    }
  }
  scheme.validate(k);
  return scheme;
}

/// Most frequent n-grams of each cluster, for authoring the merge table.
inline std::vector<std::vector<std::pair<std::string, int>>> cluster_top_terms(
    int k, std::span<const int> assignment, const TermVocabulary& vocab, const PlaceTermMatrix& m,
    std::size_t top = 10) {
  std::vector<std::map<int, int>> freq(static_cast<std::size_t>(k));
  for (std::size_t p = 0; p < assignment.size(); ++p)
    for (int col : m.rows[p]) ++freq[static_cast<std::size_t>(assignment[p])][col];
  std::vector<std::vector<std::pair<std::string, int>>> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    std::vector<std::pair<int, int>> items(freq[c].begin(), freq[c].end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; i < std::min(top, items.size()); ++i)
      out[c].emplace_back(vocab.terms[static_cast<std::size_t>(items[i].first)], items[i].second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Profiles

struct NeighborhoodProfile {
  std::string neighborhood_id;
  std::vector<double> feature_counts;  // one per category, then the total
  geo::GeoPoint centroid;

  double total() const { return feature_counts.back(); }
};

struct CategorizedPlace {
  geo::GeoPoint location;
  int category = 0;  // index into the scheme's category list
};

struct ProfileResult {
  std::vector<NeighborhoodProfile> profiles;
  std::size_t assigned = 0;
  std::size_t excluded = 0;
};

/// Counts places per category in the polygon containing them (or the
/// nearest centroid within 1 km). Empty neighborhoods keep all-zero rows.
inline ProfileResult profile_neighborhoods(std::span<const CategorizedPlace> placed,
                                           std::size_t category_count,
                                           std::span<const geo::NeighborhoodGeometry> geoms) {
  ProfileResult res;
  for (const auto& g : geoms)
    res.profiles.push_back({g.id, std::vector<double>(category_count + 1, 0.0), g.centroid});
  for (const auto& p : placed) {
    if (p.category < 0 || static_cast<std::size_t>(p.category) >= category_count)
      throw Error("profile_neighborhoods: category index out of range");
    const int n = geo::locate_neighborhood(p.location, geoms, 1000.0);
    if (n < 0) {
      ++res.excluded;
      continue;
    }
    auto& counts = res.profiles[static_cast<std::size_t>(n)].feature_counts;
    counts[static_cast<std::size_t>(p.category)] += 1.0;
    counts.back() += 1.0;
    ++res.assigned;
  }
  if (res.excluded > 0)
    io::warn(std::to_string(res.excluded) + " places lie outside every neighborhood; excluded");
  return res;
}

inline std::string profiles_to_csv(std::span<const NeighborhoodProfile> profiles,
                                   std::span<const std::string> categories) {
  std::string out = "neighborhood_id";
  for (const auto& c : categories) out += "," + io::csv_escape(c);
  out += ",total,lat,lon\n";
  char buf[64];
  for (const auto& p : profiles) {
    out += io::csv_escape(p.neighborhood_id);
    for (double v : p.feature_counts) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", p.centroid.lat, p.centroid.lon);
    out += buf;
  }
  return out;
}

struct ProfileTable {
  std::vector<std::string> categories;
  std::vector<NeighborhoodProfile> profiles;
};

inline ProfileTable load_profiles_csv(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  const std::string file = path.string();
  if (t.header.size() < 5 || t.header.front() != "neighborhood_id" ||
      t.header[t.header.size() - 3] != "total" || t.header[t.header.size() - 2] != "lat" ||
      t.header.back() != "lon")
    throw SchemaError(file, 1, "expected neighborhood_id,<category...>,total,lat,lon");
  ProfileTable out;
  out.categories.assign(t.header.begin() + 1, t.header.end() - 3);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    NeighborhoodProfile p;
    p.neighborhood_id = row[0];
    for (std::size_t c = 1; c + 2 < row.size(); ++c) {
      const double v = io::parse_double(row[c], file, t.line_numbers[r], "count");
      if (v < 0) throw SchemaError(file, t.line_numbers[r], "negative count");
      p.feature_counts.push_back(v);
    }
    p.centroid = {io::parse_double(row[row.size() - 2], file, t.line_numbers[r], "lat"),
                  io::parse_double(row.back(), file, t.line_numbers[r], "lon")};
    out.profiles.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage: canonical places -> category per place

struct SemanticsConfig {
  int dimensions = 100;
  std::vector<int> k_range;  // empty: {scheme.categories.size()}
  double plateau_tolerance = 0.01;
  int kmeans_restarts = 10;
  bool unit_rows = true;  // cluster directions of the LSA coordinates
  std::uint64_t seed = 0;
  LemmaRules lemma_rules = LemmaRules::english();
};

struct SemanticsResult {
  TermVocabulary vocab;
  PlaceTermMatrix matrix;
  Embedding embedding;
  KSweep sweep;
  KMeansResult clustering;
  CategoryScheme scheme;  // completed for every cluster
  std::vector<int> place_category;
};

inline SemanticsResult categorize_places(std::span<const places::CanonicalPlace> places,
                                         const CategoryScheme& scheme,
                                         const SemanticsConfig& cfg) {
  SemanticsResult r;
  std::tie(r.vocab, r.matrix) = build_term_matrix(places, cfg.lemma_rules);
  const auto dense = r.matrix.to_dense();
  const int max_d = static_cast<int>(std::min(dense.rows(), dense.cols()));
  r.embedding = lsa_reduce(dense, std::min(cfg.dimensions, max_d));
  Eigen::MatrixXd points = r.embedding.coords;
  if (cfg.unit_rows)
    for (Eigen::Index i = 0; i < points.rows(); ++i)
      if (const double nrm = points.row(i).norm(); nrm > 0) points.row(i) /= nrm;
  std::vector<int> ks = cfg.k_range;
  if (ks.empty()) ks.push_back(static_cast<int>(scheme.categories.size()));
  if (ks.size() == 1) {
    r.sweep.ks = ks;
    r.sweep.chosen = ks.front();
  } else {
    r.sweep = sweep_k(points, ks, cfg.plateau_tolerance, cfg.seed, cfg.kmeans_restarts);
  }
  r.clustering = kmeans_best(points, r.sweep.chosen, cfg.seed, cfg.kmeans_restarts);
  r.scheme = map_clusters(scheme, r.sweep.chosen, r.clustering.assignment, r.vocab, r.matrix,
                          cfg.lemma_rules);
  r.place_category.reserve(places.size());
  for (int c : r.clustering.assignment)
    r.place_category.push_back(r.scheme.category_index(r.scheme.cluster_to_category.at(c)));
  return r;
}

}  // namespace mobinsight::semantics

#endif  // MOBINSIGHT_SEMANTICS_HPP
