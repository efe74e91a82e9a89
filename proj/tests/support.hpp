#ifndef MOBINSIGHT_TESTS_SUPPORT_HPP
#define MOBINSIGHT_TESTS_SUPPORT_HPP

#include <filesystem>
#include <random>
#include <string>

#include "mobinsight/geo.hpp"
#include "mobinsight/synth.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("mobinsight_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline mobinsight::geo::PolygonRing square(double lat0, double lon0, double side) {
  return mobinsight::geo::PolygonRing(
      {{lat0, lon0}, {lat0, lon0 + side}, {lat0 + side, lon0 + side}, {lat0 + side, lon0}});
}

/// A small, quick city: 6 neighborhoods, few users and places.
inline mobinsight::synth::SynthConfig small_city_config(std::uint64_t seed = 11) {
  mobinsight::synth::SynthConfig c;
  c.n_neighborhoods = 6;
  c.places_per_neighborhood = 40;
  c.users = 240;
  c.days = 14;
  c.seed = seed;
  return c;
}

}  // namespace testsupport


#include "mobinsight/places.hpp"

namespace testsupport {

struct PairScores {
  double precision = 1.0;
  double recall = 1.0;
  std::size_t true_pairs = 0, predicted_pairs = 0;
};

/// Pairwise precision/recall of a predicted duplicate partition against the
/// planted one, both expressed as record keys "source:source_place_id".
inline PairScores duplicate_pair_scores(const std::vector<std::vector<std::string>>& truth,
                                        const std::vector<std::vector<std::string>>& predicted) {
  auto pairs = [](const std::vector<std::vector<std::string>>& part) {
    std::set<std::pair<std::string, std::string>> s;
    for (const auto& g : part)
      for (std::size_t a = 0; a < g.size(); ++a)
        for (std::size_t b = a + 1; b < g.size(); ++b) s.insert(std::minmax(g[a], g[b]));
    return s;
  };
  const auto t = pairs(truth), p = pairs(predicted);
  std::size_t hit = 0;
  for (const auto& x : p) hit += t.count(x);
  PairScores s;
  s.true_pairs = t.size();
  s.predicted_pairs = p.size();
  s.precision = p.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(p.size());
  s.recall = t.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(t.size());
  return s;
}

inline std::vector<std::vector<std::string>> canonical_partition(
    const std::vector<mobinsight::places::RawPlace>& raw,
    const std::vector<mobinsight::places::CanonicalPlace>& canon) {
  std::vector<std::vector<std::string>> out;
  for (const auto& c : canon) {
    std::vector<std::string> g;
    for (auto m : c.members) g.push_back(raw[m].source + ":" + raw[m].source_place_id);
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<std::vector<std::string>> planted_partition(const mobinsight::synth::PlaceCorpus& pc) {
  std::vector<std::vector<std::string>> out;
  for (const auto& p : pc.truth) out.push_back(p.members);
  return out;
}

}  // namespace testsupport

namespace testsupport {

/// Adjusted Rand index from the contingency table.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> nij;
  std::map<int, double> ai, bj;
  for (std::size_t i = 0; i < a.size(); ++i) {
    nij[{a[i], b[i]}] += 1;
    ai[a[i]] += 1;
    bj[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (const auto& [k, v] : nij) sum_ij += c2(v);
  for (const auto& [k, v] : ai) sum_a += c2(v);
  for (const auto& [k, v] : bj) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(static_cast<double>(a.size()));
  const double max_index = (sum_a + sum_b) / 2;
  return max_index == expected ? 1.0 : (sum_ij - expected) / (max_index - expected);
}

}  // namespace testsupport

#endif  // MOBINSIGHT_TESTS_SUPPORT_HPP
