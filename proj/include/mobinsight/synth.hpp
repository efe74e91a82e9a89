#ifndef MOBINSIGHT_SYNTH_HPP
#define MOBINSIGHT_SYNTH_HPP

// Synthetic city with planted ground truth: grid neighborhoods, census,
// towers, multi-source places with duplicates, and communication records
// generated from a known feature-driven mobility law.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mobinsight/baselines.hpp"
#include "mobinsight/geo.hpp"
#include "mobinsight/io.hpp"
#include "mobinsight/mobility.hpp"
#include "mobinsight/places.hpp"
#include "mobinsight/semantics.hpp"

namespace mobinsight::synth {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct CategorySpec {
  std::string label;
  double proportion = 1.0;
  std::vector<std::string> terms;  // first term is the anchor keyword
};

/// Term pools are disjoint at the token level so categories stay separable.
inline std::vector<CategorySpec> default_category_specs() {
  return {
      {"Bar", 1.2, {"bar", "cocktail bar", "beer", "pub", "wine bars", "taproom"}},
      {"Eating", 1.6, {"restaurant", "tapas", "pizza", "cuisine", "bistro", "grill"}},
      {"Club", 0.5, {"nightclub", "disco", "dance floor", "techno", "dj"}},
      {"Education", 0.8, {"school", "college", "university", "academy", "kindergarten"}},
      {"Health", 0.8, {"clinic", "hospital", "pharmacy", "dentist", "physiotherapy"}},
      {"Offices", 1.0, {"office", "coworking", "headquarters", "corporate"}},
      {"Leisure", 0.9, {"park", "gym", "playground", "swimming pool", "garden"}},
      {"Professional services", 1.0, {"lawyer", "accountant", "consulting", "financial services", "advertisement agency"}},
      {"Daily Purchases", 1.8, {"supermarket", "bakery", "grocery", "butcher", "greengrocer"}},
      {"Special purchases", 1.2, {"boutique", "jewelry", "furniture", "electronics", "bookshop"}},
      {"Attraction", 0.4, {"monument", "landmark", "viewpoint", "museum", "sightseeing"}},
      {"Administrative offices", 0.6, {"town hall", "registry", "tax agency", "public administration", "citizen service"}},
      {"Culture", 0.5, {"theater", "cinema", "gallery", "concert hall", "library"}},
      {"Sports", 0.5, {"stadium", "football", "tennis", "climbing", "sports centre"}},
      {"Religion", 0.3, {"church", "chapel", "parish", "mosque", "temple"}},
      {"Transport", 0.6, {"metro station", "bus stop", "railway", "parking", "taxi rank"}},
      {"Lodging", 0.6, {"hotel", "hostel", "guesthouse", "apartment rental", "inn"}},
  };
}

/// logit(i -> j) = z_i' W z_j - sum_f s_f |z_i[f] - z_j[f]| + a' z_j - beta * d_ij
/// (z: standardized profile counts, d: centroid distance in km).
struct MobilityLaw {
  std::vector<std::tuple<std::string, std::string, double>> interactions;  // origin, dest, weight
  std::map<std::string, double> similarity;
  std::map<std::string, double> attraction;
  double beta_per_km = 0.5;

  json to_json() const {
    json inter = json::array();
    for (const auto& [o, d, w] : interactions) inter.push_back({{"origin", o}, {"dest", d}, {"weight", w}});
    return {{"interactions", inter}, {"similarity", similarity}, {"attraction", attraction},
            {"beta_per_km", beta_per_km}};
  }
  static MobilityLaw from_json(const json& j) {
    MobilityLaw law;
    for (const auto& e : j.value("interactions", json::array()))
      law.interactions.emplace_back(e.at("origin"), e.at("dest"), e.at("weight").get<double>());
    law.similarity = j.value("similarity", std::map<std::string, double>{});
    law.attraction = j.value("attraction", std::map<std::string, double>{});
    law.beta_per_km = j.value("beta_per_km", law.beta_per_km);
    return law;
  }
};

struct SynthConfig {
  int n_neighborhoods = 30;
  geo::GeoPoint origin{41.36, 2.12};
  double cell_size_m = 1000.0;
  double edge_margin_m = 100.0;

  std::vector<std::string> sources = {"guide", "social", "maps", "opengov"};
  // Source that alone lists the `exclusive_categories`; none when empty.
  std::string exclusive_source = "opengov";
  std::vector<std::string> exclusive_categories = {"Education", "Administrative offices"};
  std::vector<CategorySpec> categories = default_category_specs();
  double places_per_neighborhood = 100.0;
  // log place-rate = center_decay * (-km from city center) + loadings . u_n + noise;
  // u_n holds `latent_factors` neighborhood traits shared by every category,
  // the exclusive categories add one trait of their own.
  double heterogeneity_sigma = 0.15;
  int latent_factors = 2;
  double loading_sigma = 0.6;
  double exclusive_factor_loading = 0.8;
  double center_decay_per_km = 0.15;
  double duplicate_rate = 0.2;
  double duplicate_jitter_m = 40.0;
  double generic_tag_rate = 0.1;  // chance of one cross-category tag per record

  double census_log_mean = std::log(20000.0);
  double census_log_sigma = 0.5;
  int bts_per_neighborhood = 3;

  int users = 2000;
  int days = 28;
  std::int64_t start_local_epoch = 1391212800;  // 2014-02-01 00:00 local
  std::int64_t utc_offset_s = 3600;
  double night_events_mean = 2.0;     // per home-window block
  double weekend_events_mean = 3.0;   // per weekend day, at home
  double trips_per_weekday = 1.5;
  double evening_outing_prob = 0.05;  // Mon-Thu night visit
  double roaming_rate = 0.03;
  double prepaid_rate = 0.05;
  double sparse_user_rate = 0.02;
  double ambiguous_user_rate = 0.03;

  MobilityLaw law = default_law();
  std::uint64_t seed = 7;

  // Residents favor neighborhoods with a similar public-sector profile and
  // nearby destinations; two consumer categories add destination appeal.
  static MobilityLaw default_law() {
    MobilityLaw law;
    law.similarity = {{"Education", 1.0}, {"Administrative offices", 1.0}};
    law.attraction = {{"Attraction", 0.3}, {"Eating", 0.2}};
    law.beta_per_km = 0.5;
    return law;
  }

  void validate() const {
    if (n_neighborhoods < 1 || users < 1 || days < 1 || bts_per_neighborhood < 3)
      throw Error("synth config: counts must be positive (>= 3 towers per neighborhood)");
    if (!(duplicate_rate >= 0.0 && duplicate_rate <= 1.0))
      throw Error("synth config: duplicate_rate must be a probability");
    if (sources.empty() || categories.empty()) throw Error("synth config: empty sources or categories");
    if (!exclusive_source.empty() &&
        std::find(sources.begin(), sources.end(), exclusive_source) == sources.end())
      throw Error("synth config: exclusive source is not a configured source");
    if (2.0 * edge_margin_m >= cell_size_m) throw Error("synth config: margin too large for cell");
  }

  std::size_t category_index(const std::string& label) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
      if (categories[i].label == label) return i;
    throw Error("synth config: unknown category " + label);
  }

  static SynthConfig from_json(const json& j) {
    SynthConfig c;
    c.n_neighborhoods = j.value("n_neighborhoods", c.n_neighborhoods);
    if (j.contains("origin")) c.origin = {j["origin"].at(0).get<double>(), j["origin"].at(1).get<double>()};
    c.cell_size_m = j.value("cell_size_m", c.cell_size_m);
    c.edge_margin_m = j.value("edge_margin_m", c.edge_margin_m);
    c.sources = j.value("sources", c.sources);
    c.exclusive_source = j.value("exclusive_source", c.exclusive_source);
    c.exclusive_categories = j.value("exclusive_categories", c.exclusive_categories);
    if (j.contains("categories")) {
      c.categories.clear();
      for (const auto& cj : j["categories"])
        c.categories.push_back({cj.at("label"), cj.value("proportion", 1.0),
                                cj.at("terms").get<std::vector<std::string>>()});
    }
    c.places_per_neighborhood = j.value("places_per_neighborhood", c.places_per_neighborhood);
    c.heterogeneity_sigma = j.value("heterogeneity_sigma", c.heterogeneity_sigma);
    c.latent_factors = j.value("latent_factors", c.latent_factors);
    c.loading_sigma = j.value("loading_sigma", c.loading_sigma);
    c.exclusive_factor_loading = j.value("exclusive_factor_loading", c.exclusive_factor_loading);
    c.center_decay_per_km = j.value("center_decay_per_km", c.center_decay_per_km);
    c.duplicate_rate = j.value("duplicate_rate", c.duplicate_rate);
    c.duplicate_jitter_m = j.value("duplicate_jitter_m", c.duplicate_jitter_m);
    c.generic_tag_rate = j.value("generic_tag_rate", c.generic_tag_rate);
    c.census_log_mean = j.value("census_log_mean", c.census_log_mean);
    c.census_log_sigma = j.value("census_log_sigma", c.census_log_sigma);
    c.bts_per_neighborhood = j.value("bts_per_neighborhood", c.bts_per_neighborhood);
    c.users = j.value("users", c.users);
    c.days = j.value("days", c.days);
    c.start_local_epoch = j.value("start_local_epoch", c.start_local_epoch);
    c.utc_offset_s = j.value("utc_offset_s", c.utc_offset_s);
    c.night_events_mean = j.value("night_events_mean", c.night_events_mean);
    c.weekend_events_mean = j.value("weekend_events_mean", c.weekend_events_mean);
    c.trips_per_weekday = j.value("trips_per_weekday", c.trips_per_weekday);
    c.evening_outing_prob = j.value("evening_outing_prob", c.evening_outing_prob);
    c.roaming_rate = j.value("roaming_rate", c.roaming_rate);
    c.prepaid_rate = j.value("prepaid_rate", c.prepaid_rate);
    c.sparse_user_rate = j.value("sparse_user_rate", c.sparse_user_rate);
    c.ambiguous_user_rate = j.value("ambiguous_user_rate", c.ambiguous_user_rate);
    if (j.contains("law")) c.law = MobilityLaw::from_json(j["law"]);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }

  json to_json() const {
    json cats = json::array();
    for (const auto& c : categories) cats.push_back({{"label", c.label}, {"proportion", c.proportion}, {"terms", c.terms}});
    return {{"n_neighborhoods", n_neighborhoods}, {"origin", {origin.lat, origin.lon}},
            {"cell_size_m", cell_size_m}, {"edge_margin_m", edge_margin_m}, {"sources", sources},
            {"exclusive_source", exclusive_source}, {"exclusive_categories", exclusive_categories},
            {"categories", cats}, {"places_per_neighborhood", places_per_neighborhood},
            {"heterogeneity_sigma", heterogeneity_sigma}, {"latent_factors", latent_factors},
            {"loading_sigma", loading_sigma}, {"exclusive_factor_loading", exclusive_factor_loading},
            {"center_decay_per_km", center_decay_per_km}, {"duplicate_rate", duplicate_rate},
            {"duplicate_jitter_m", duplicate_jitter_m}, {"generic_tag_rate", generic_tag_rate},
            {"census_log_mean", census_log_mean},
            {"census_log_sigma", census_log_sigma}, {"bts_per_neighborhood", bts_per_neighborhood},
            {"users", users}, {"days", days}, {"start_local_epoch", start_local_epoch},
            {"utc_offset_s", utc_offset_s}, {"night_events_mean", night_events_mean},
            {"weekend_events_mean", weekend_events_mean}, {"trips_per_weekday", trips_per_weekday},
            {"evening_outing_prob", evening_outing_prob}, {"roaming_rate", roaming_rate},
            {"prepaid_rate", prepaid_rate}, {"sparse_user_rate", sparse_user_rate},
            {"ambiguous_user_rate", ambiguous_user_rate}, {"law", law.to_json()}, {"seed", seed}};
  }
};

// ---------------------------------------------------------------------------
// City

struct City {
  std::vector<geo::NeighborhoodGeometry> geoms;
  std::vector<std::pair<int, int>> cells;      // (row, col) per neighborhood
  std::vector<mobility::BtsSite> towers;
  std::vector<std::vector<std::size_t>> towers_of;  // per neighborhood
};

inline constexpr double kMetersPerDegreeLat = geo::kEarthRadiusM * std::numbers::pi / 180.0;

/// Grid factorization rows x cols = n with rows <= cols as close as possible.
inline std::pair<int, int> grid_shape(int n) {
  int rows = static_cast<int>(std::floor(std::sqrt(static_cast<double>(n))));
  while (rows > 1 && n % rows != 0) --rows;
  return {rows, n / rows};
}

class CityFrame {
 public:
  explicit CityFrame(const SynthConfig& cfg)
      : cfg_(cfg),
        dlat_(cfg.cell_size_m / kMetersPerDegreeLat),
        dlon_(cfg.cell_size_m / (kMetersPerDegreeLat * std::cos(geo::deg2rad(cfg.origin.lat)))) {}

  double lat_at(double row) const { return cfg_.origin.lat + row * dlat_; }
  double lon_at(double col) const { return cfg_.origin.lon + col * dlon_; }

  /// Uniform point inside cell (r, c) keeping `margin_m` from every edge.
  template <typename Rng>
  geo::GeoPoint sample(int r, int c, Rng& rng) const {
    const double m = cfg_.edge_margin_m / cfg_.cell_size_m;
    std::uniform_real_distribution<double> u(m, 1.0 - m);
    const double fr = u(rng), fc = u(rng);
    return {lat_at(r + fr), lon_at(c + fc)};
  }

  /// Moves `p` by at most `radius_m`, uniformly over the disc.
  template <typename Rng>
  geo::GeoPoint jitter(const geo::GeoPoint& p, double radius_m, Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double rad = radius_m * std::sqrt(u(rng)) * 0.98;
    const double th = 2.0 * std::numbers::pi * u(rng);
    const double dy = rad * std::sin(th) / kMetersPerDegreeLat;
    const double dx = rad * std::cos(th) / (kMetersPerDegreeLat * std::cos(geo::deg2rad(p.lat)));
    return {p.lat + dy, p.lon + dx};
  }

 private:
  const SynthConfig& cfg_;
  double dlat_, dlon_;
};

/// Grid polygons, log-normal census, and towers placed inside each cell.
inline City generate_city(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(model::derive_seed(cfg.seed, 1));
  const CityFrame frame(cfg);
  const auto [rows, cols] = grid_shape(cfg.n_neighborhoods);
  std::lognormal_distribution<double> census(cfg.census_log_mean, cfg.census_log_sigma);
  City city;
  char buf[32];
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int idx = r * cols + c;
      std::snprintf(buf, sizeof buf, "N%02d", idx + 1);
      std::vector<geo::GeoPoint> ring = {{frame.lat_at(r), frame.lon_at(c)},
                                         {frame.lat_at(r), frame.lon_at(c + 1)},
                                         {frame.lat_at(r + 1), frame.lon_at(c + 1)},
                                         {frame.lat_at(r + 1), frame.lon_at(c)}};
      const double pop = std::round(census(rng));
      city.geoms.push_back(geo::make_neighborhood(buf, std::string("Barri ") + (buf + 1),
                                                  geo::PolygonRing(ring), std::max(1.0, pop)));
      city.cells.emplace_back(r, c);
    }
  }
  city.towers_of.resize(city.geoms.size());
  for (std::size_t n = 0; n < city.geoms.size(); ++n) {
    for (int k = 0; k < cfg.bts_per_neighborhood; ++k) {
      std::snprintf(buf, sizeof buf, "B%02zu%02d", n + 1, k + 1);
      mobility::BtsSite s{buf, frame.sample(city.cells[n].first, city.cells[n].second, rng),
                          static_cast<int>(n)};
      city.towers_of[n].push_back(city.towers.size());
      city.towers.push_back(std::move(s));
    }
  }
  return city;
}

// ---------------------------------------------------------------------------
// Places

struct PlantedPlace {
  std::string key;  // source:source_place_id of the first emitted record
  int neighborhood = 0;
  int category = 0;
  std::vector<std::string> members;  // source:source_place_id of every emitted record
};

struct PlaceCorpus {
  std::map<std::string, std::vector<places::RawPlace>> by_source;  // in configured order via `sources`
  std::vector<std::string> sources;
  std::vector<PlantedPlace> truth;
  MatrixXd true_counts;  // neighborhoods x categories (unique places)

  /// Records in ingestion order (sources in configured order, rows in file order).
  std::vector<places::RawPlace> ingestion_order(const std::string& exclude = {}) const {
    std::vector<places::RawPlace> all;
    for (const auto& s : sources) {
      if (s == exclude) continue;
      const auto& v = by_source.at(s);
      all.insert(all.end(), v.begin(), v.end());
    }
    return all;
  }
};

namespace detail {

inline std::string pseudo_word(std::mt19937_64& rng) {
  static constexpr const char* kOnset[] = {"b", "c", "d", "f", "g", "l", "m", "n", "p", "r",
                                           "s", "t", "v", "z", "br", "cl", "gr", "tr", "ll", "x"};
  static constexpr const char* kVowel[] = {"a", "e", "i", "o", "u", "ai", "ea", "io"};
  static constexpr const char* kCoda[] = {"", "n", "r", "l", "s", "t", "x"};
  std::uniform_int_distribution<int> syl(2, 3), on(0, 19), vo(0, 7), co(0, 6);
  std::string w;
  for (int s = 0, n = syl(rng); s < n; ++s) {
    w += kOnset[on(rng)];
    w += kVowel[vo(rng)];
    if (s + 1 == n) w += kCoda[co(rng)];
  }
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

inline constexpr const char* kCommonWords[] = {"Casa", "Can", "El", "La", "Nou", "Gran",
                                               "Bon", "Sant", "Del", "Petit"};
inline constexpr const char* kGenericTags[] = {"wifi", "terrace", "open late", "family friendly",
                                               "wheelchair access", "card payment", "local", "popular"};
inline constexpr const char* kSuffixes[] = {", Barcelona", " Barcelona", " (BCN)", " - Barcelona"};

}  // namespace detail

/// Category-tagged places per neighborhood; with probability
/// `duplicate_rate` a place is re-listed in another source under a suffixed
/// name within `duplicate_jitter_m`.
inline PlaceCorpus generate_places(const SynthConfig& cfg, const City& city) {
  std::mt19937_64 rng(model::derive_seed(cfg.seed, 2));
  const CityFrame frame(cfg);
  PlaceCorpus corpus;
  corpus.sources = cfg.sources;
  for (const auto& s : cfg.sources) corpus.by_source[s];
  std::set<std::size_t> exclusive;
  for (const auto& c : cfg.exclusive_categories)
    if (!cfg.exclusive_source.empty()) exclusive.insert(cfg.category_index(c));
  std::vector<std::string> open_sources;
  for (const auto& s : cfg.sources)
    if (s != cfg.exclusive_source || exclusive.empty()) open_sources.push_back(s);
  if (open_sources.empty()) throw Error("synth: no source left for non-exclusive categories");

  double prop_total = 0.0;
  for (const auto& c : cfg.categories) prop_total += c.proportion;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto nn = city.geoms.size();
  const auto nc = cfg.categories.size();
  MatrixXd traits(static_cast<Eigen::Index>(nn), std::max(0, cfg.latent_factors) + 1);
  for (Eigen::Index i = 0; i < traits.size(); ++i) traits.data()[i] = gauss(rng);
  MatrixXd loadings = MatrixXd::Zero(static_cast<Eigen::Index>(nc), traits.cols());
  for (std::size_t c = 0; c < nc; ++c) {
    for (int f = 0; f < cfg.latent_factors; ++f)
      loadings(static_cast<Eigen::Index>(c), f) = cfg.loading_sigma * gauss(rng);
    if (exclusive.count(c)) loadings(static_cast<Eigen::Index>(c), traits.cols() - 1) = cfg.exclusive_factor_loading;
  }
  geo::GeoPoint center{0.0, 0.0};
  for (const auto& g : city.geoms) {
    center.lat += g.centroid.lat / static_cast<double>(nn);
    center.lon += g.centroid.lon / static_cast<double>(nn);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::set<std::string> used_words;
  std::map<std::string, int> next_id;
  corpus.true_counts = MatrixXd::Zero(static_cast<Eigen::Index>(city.geoms.size()),
                                      static_cast<Eigen::Index>(cfg.categories.size()));

  auto emit = [&](const std::string& source, const std::string& name, const geo::GeoPoint& at,
                  std::size_t cat) {
    const auto& spec = cfg.categories[cat];
    places::RawPlace p;
    p.source = source;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%05d", source.c_str(), ++next_id[source]);
    p.source_place_id = buf;
    p.name = name;
    p.location = at;
    // anchor plus a shared two-level taxonomy; one optional specific tag
    p.tags.push_back(spec.terms[0]);
    for (std::size_t t = 1; t < std::min<std::size_t>(3, spec.terms.size()); ++t)
      p.taxonomy.push_back(spec.terms[t]);
    if (spec.terms.size() > 3 && unit(rng) < 0.5) {
      std::uniform_int_distribution<std::size_t> pick(3, spec.terms.size() - 1);
      p.tags.push_back(spec.terms[pick(rng)]);
    }
    if (unit(rng) < cfg.generic_tag_rate) {
      std::uniform_int_distribution<int> gen(0, 7);
      p.tags.push_back(detail::kGenericTags[gen(rng)]);
    }
    corpus.by_source[source].push_back(p);
    return source + ":" + p.source_place_id;
  };

  for (std::size_t n = 0; n < city.geoms.size(); ++n) {
    for (std::size_t c = 0; c < cfg.categories.size(); ++c) {
      const double km = geo::haversine_distance_m(city.geoms[n].centroid, center) / 1000.0;
      const double log_mult = -cfg.center_decay_per_km * km +
                              loadings.row(static_cast<Eigen::Index>(c)).dot(traits.row(static_cast<Eigen::Index>(n))) +
                              cfg.heterogeneity_sigma * gauss(rng);
      const double rate = cfg.places_per_neighborhood * cfg.categories[c].proportion / prop_total *
                          std::exp(log_mult);
      std::poisson_distribution<int> count(std::max(rate, 1e-9));
      const int k = count(rng);
      for (int i = 0; i < k; ++i) {
        std::string word;
        do word = detail::pseudo_word(rng);
        while (!used_words.insert(word).second);
        std::uniform_int_distribution<int> common(0, 9);
        const std::string name = std::string(detail::kCommonWords[common(rng)]) + " " + word;
        const auto at = frame.sample(city.cells[n].first, city.cells[n].second, rng);

        PlantedPlace planted;
        planted.neighborhood = static_cast<int>(n);
        planted.category = static_cast<int>(c);
        if (exclusive.count(c)) {
          planted.members.push_back(emit(cfg.exclusive_source, name, at, c));
        } else {
          std::uniform_int_distribution<std::size_t> src(0, open_sources.size() - 1);
          const std::size_t primary = src(rng);
          planted.members.push_back(emit(open_sources[primary], name, at, c));
          if (open_sources.size() > 1 && unit(rng) < cfg.duplicate_rate) {
            std::uniform_int_distribution<std::size_t> other(0, open_sources.size() - 2);
            std::size_t s2 = other(rng);
            if (s2 >= primary) ++s2;
            std::uniform_int_distribution<int> suf(0, 3);
            planted.members.push_back(emit(open_sources[s2], name + detail::kSuffixes[suf(rng)],
                                           frame.jitter(at, cfg.duplicate_jitter_m, rng), c));
          }
        }
        corpus.true_counts(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c)) += 1.0;
        corpus.truth.push_back(std::move(planted));
      }
    }
  }
  // Canonical key: the member ingested first.
  std::map<std::string, std::size_t> order;
  for (const auto& s : cfg.sources)
    for (const auto& p : corpus.by_source[s]) order.emplace(s + ":" + p.source_place_id, order.size());
  for (auto& t : corpus.truth) {
    std::sort(t.members.begin(), t.members.end(),
              [&](const auto& a, const auto& b) { return order.at(a) < order.at(b); });
    t.key = t.members.front();
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Communication records

enum class UserKind { regular, roaming, prepaid, sparse, ambiguous };

inline const char* to_string(UserKind k) {
  switch (k) {
    case UserKind::roaming: return "roaming";
    case UserKind::prepaid: return "prepaid";
    case UserKind::sparse: return "sparse";
    case UserKind::ambiguous: return "ambiguous";
    default: return "regular";
  }
}

struct SynthUser {
  std::string id;
  int home = 0;
  UserKind kind = UserKind::regular;
  std::size_t records = 0;
  bool expected_assigned = false;
};

struct CdrCorpus {
  std::vector<mobility::CdrRecord> records;
  std::vector<SynthUser> users;
  mobility::CountMatrix true_visits;  // (home, visited), per-day distinct
  MatrixXd law_probabilities;         // row i: destination law for residents of i
};

/// Standardizes columns across neighborhoods (population std; zero spread -> 0).
inline MatrixXd standardize_columns(const MatrixXd& x) {
  MatrixXd z(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mu = x.col(c).mean();
    const double sd = std::sqrt((x.col(c).array() - mu).square().mean());
    if (sd > 0) z.col(c) = ((x.col(c).array() - mu) / sd).matrix();
    else z.col(c).setZero();
  }
  return z;
}

/// Destination law for every origin from the true category counts.
inline MatrixXd law_matrix(const SynthConfig& cfg, const City& city, const MatrixXd& true_counts) {
  const MatrixXd z = standardize_columns(true_counts);
  const auto n = static_cast<Eigen::Index>(city.geoms.size());
  MatrixXd w = MatrixXd::Zero(z.cols(), z.cols());
  for (const auto& [o, d, wt] : cfg.law.interactions)
    w(static_cast<Eigen::Index>(cfg.category_index(o)), static_cast<Eigen::Index>(cfg.category_index(d))) += wt;
  VectorXd sim = VectorXd::Zero(z.cols());
  for (const auto& [c, wt] : cfg.law.similarity) sim(static_cast<Eigen::Index>(cfg.category_index(c))) += wt;
  VectorXd a = VectorXd::Zero(z.cols());
  for (const auto& [c, wt] : cfg.law.attraction) a(static_cast<Eigen::Index>(cfg.category_index(c))) += wt;
  const auto dist = baselines::haversine_distances(city.geoms);
  MatrixXd p(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    VectorXd logit(n);
    for (Eigen::Index j = 0; j < n; ++j)
      logit(j) = z.row(i) * w * z.row(j).transpose() -
                 sim.dot((z.row(i) - z.row(j)).cwiseAbs().transpose()) + a.dot(z.row(j)) -
                 cfg.law.beta_per_km * dist.cost(i, j);
    p.row(i) = model::softmax(logit, static_cast<int>(i)).transpose();
  }
  return p;
}

/// Homes drawn from census weights; each weekday brings Poisson trips to
/// destinations drawn from the law, nights and weekends are spent at the
/// home tower. Records the per-day distinct visit tally of every user that
/// the pipeline is expected to keep.
inline CdrCorpus generate_cdr(const SynthConfig& cfg, const City& city, const MatrixXd& true_counts) {
  std::mt19937_64 rng(model::derive_seed(cfg.seed, 3));
  CdrCorpus out;
  out.law_probabilities = law_matrix(cfg, city, true_counts);
  const auto n = static_cast<Eigen::Index>(city.geoms.size());
  out.true_visits = mobility::CountMatrix::Zero(n, n);

  std::vector<double> pop;
  for (const auto& g : city.geoms) pop.push_back(g.population);
  std::discrete_distribution<int> home_draw(pop.begin(), pop.end());
  std::vector<std::discrete_distribution<int>> dest_draw;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = out.law_probabilities(i, j);
    dest_draw.emplace_back(row.begin(), row.end());
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::poisson_distribution<int> night(cfg.night_events_mean), weekend(cfg.weekend_events_mean),
      trips(cfg.trips_per_weekday), trip_events(0.8);
  std::uniform_int_distribution<int> duration(20, 600);

  std::set<std::string> ids;
  for (int u = 0; u < cfg.users; ++u) {
    SynthUser user;
    do {
      user.id = io::hex64(io::fnv1a(std::to_string(u) + "/" + std::to_string(ids.size()),
                                    cfg.seed ^ 0x5bd1e995ULL)).substr(0, 12);
    } while (!ids.insert(user.id).second);
    user.home = home_draw(rng);
    const double r = unit(rng);
    double acc = 0.0;
    if (r < (acc += cfg.roaming_rate)) user.kind = UserKind::roaming;
    else if (r < (acc += cfg.prepaid_rate)) user.kind = UserKind::prepaid;
    else if (r < (acc += cfg.sparse_user_rate)) user.kind = UserKind::sparse;
    else if (r < (acc += cfg.ambiguous_user_rate)) user.kind = UserKind::ambiguous;

    const auto& home_towers = city.towers_of[static_cast<std::size_t>(user.home)];
    const std::string home_bts = city.towers[home_towers[std::uniform_int_distribution<std::size_t>(0, home_towers.size() - 1)(rng)]].id;
    std::string second_bts;
    if (user.kind == UserKind::ambiguous) {
      int other = std::uniform_int_distribution<int>(0, static_cast<int>(n) - 2)(rng);
      if (other >= user.home) ++other;
      const auto& ot = city.towers_of[static_cast<std::size_t>(other)];
      second_bts = city.towers[ot[std::uniform_int_distribution<std::size_t>(0, ot.size() - 1)(rng)]].id;
    }

    std::vector<mobility::CdrRecord> mine;
    std::set<std::pair<std::int64_t, int>> visits;
    auto push = [&](std::int64_t local, const std::string& bts) {
      mobility::CdrRecord rec;
      rec.user_id = user.id;
      rec.timestamp = local - cfg.utc_offset_s;
      rec.bts_id = bts;
      const double k = unit(rng);
      rec.kind = k < 0.6 ? mobility::RecordKind::call : k < 0.95 ? mobility::RecordKind::sms
                                                                : mobility::RecordKind::mms;
      rec.duration_s = rec.kind == mobility::RecordKind::call ? duration(rng) : 0;
      rec.roaming = user.kind == UserKind::roaming;
      rec.prepaid = user.kind == UserKind::prepaid;
      mine.push_back(rec);
    };
    auto at_home = [&](std::int64_t local) {
      if (user.kind == UserKind::ambiguous) {
        push(local, home_bts);
        push(local + 60, second_bts);
      } else {
        push(local, home_bts);
      }
    };
    auto random_tower = [&](int nb) {
      const auto& t = city.towers_of[static_cast<std::size_t>(nb)];
      return city.towers[t[std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(rng)]].id;
    };
    auto in_block = [&](std::int64_t day_start, int from_h, int to_h) {
      return day_start + static_cast<std::int64_t>(
                             std::uniform_int_distribution<int>(from_h * 3600, to_h * 3600 - 120)(rng));
    };

    if (user.kind == UserKind::sparse) {
      const std::int64_t day0 = cfg.start_local_epoch;
      for (int e = 0; e < 6; ++e) push(day0 + 86400 * e + 22 * 3600, home_bts);
    } else {
      for (int d = 0; d < cfg.days; ++d) {
        const std::int64_t day_start = cfg.start_local_epoch + 86400LL * d;
        const auto lt = mobility::local_time(day_start - cfg.utc_offset_s, cfg.utc_offset_s);
        if (lt.weekday >= 5) {
          for (int e = 0, k = weekend(rng); e < k; ++e) at_home(in_block(day_start, 9, 23));
          continue;
        }
        if (lt.weekday >= 1)
          for (int e = 0, k = night(rng); e < k; ++e) at_home(in_block(day_start, 0, 8));
        for (int t = 0, k = trips(rng); t < k; ++t) {
          const int dest = dest_draw[static_cast<std::size_t>(user.home)](rng);
          const std::string bts = random_tower(dest);
          for (int e = 0, m = 1 + trip_events(rng); e < m; ++e) push(in_block(day_start, 9, 19), bts);
          visits.emplace(d, dest);
        }
        if (lt.weekday <= 3) {
          for (int e = 0, k = night(rng); e < k; ++e) at_home(in_block(day_start, 20, 24));
          if (unit(rng) < cfg.evening_outing_prob) {
            const int dest = dest_draw[static_cast<std::size_t>(user.home)](rng);
            push(in_block(day_start, 20, 22), random_tower(dest));
            visits.emplace(d, dest);
          }
        }
      }
    }
    user.records = mine.size();
    const bool filtered = user.kind == UserKind::roaming || user.kind == UserKind::prepaid;
    user.expected_assigned = !filtered && user.kind != UserKind::ambiguous &&
                             user.records >= mobility::kMinRecordsPerUser;
    if (user.expected_assigned)
      for (const auto& [day, dest] : visits) ++out.true_visits(user.home, dest);
    out.records.insert(out.records.end(), mine.begin(), mine.end());
    out.users.push_back(std::move(user));
  }
  std::stable_sort(out.records.begin(), out.records.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  return out;
}

/// Points in `k` well-separated Gaussian blobs, with their labels.
inline std::pair<MatrixXd, std::vector<int>> planted_clusters(int per_cluster, int k, int dims,
                                                              double separation, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd centers(k, dims);
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = g(rng) * separation;
  MatrixXd x(per_cluster * k, dims);
  std::vector<int> labels;
  for (int c = 0; c < k; ++c)
    for (int p = 0; p < per_cluster; ++p) {
      const int row = c * per_cluster + p;
      for (int d = 0; d < dims; ++d) x(row, d) = centers(c, d) + g(rng);
      labels.push_back(c);
    }
  return {x, labels};
}

// ---------------------------------------------------------------------------
// Files

struct GeneratedCity {
  SynthConfig config;
  City city;
  PlaceCorpus places;
  CdrCorpus cdr;
};

inline GeneratedCity generate(const SynthConfig& cfg) {
  GeneratedCity g;
  g.config = cfg;
  g.city = generate_city(cfg);
  g.places = generate_places(cfg, g.city);
  g.cdr = generate_cdr(cfg, g.city, g.places.true_counts);
  return g;
}

inline semantics::CategoryScheme scheme_for(const SynthConfig& cfg) {
  semantics::CategoryScheme s;
  for (const auto& c : cfg.categories) {
    s.categories.push_back(c.label);
    s.category_keywords[c.label] = {c.terms.front()};
  }
  return s;
}

inline json ground_truth_json(const GeneratedCity& g) {
  json dup = json::array();
  json cats = json::object();
  for (const auto& p : g.places.truth) {
    dup.push_back(p.members);
    cats[p.key] = g.config.categories[static_cast<std::size_t>(p.category)].label;
  }
  json homes = json::array();
  for (const auto& u : g.cdr.users)
    homes.push_back({{"user_id", u.id},
                     {"home", g.city.geoms[static_cast<std::size_t>(u.home)].id},
                     {"kind", to_string(u.kind)},
                     {"records", u.records},
                     {"expected_assigned", u.expected_assigned}});
  json visits = json::array();
  for (Eigen::Index i = 0; i < g.cdr.true_visits.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < g.cdr.true_visits.cols(); ++j) row.push_back(g.cdr.true_visits(i, j));
    visits.push_back(row);
  }
  json profiles = json::object();
  for (std::size_t n = 0; n < g.city.geoms.size(); ++n) {
    json counts = json::object();
    double total = 0;
    for (std::size_t c = 0; c < g.config.categories.size(); ++c) {
      const double v = g.places.true_counts(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
      counts[g.config.categories[c].label] = v;
      total += v;
    }
    counts["total"] = total;
    profiles[g.city.geoms[n].id] = counts;
  }
  json ids = json::array();
  for (const auto& geom : g.city.geoms) ids.push_back(geom.id);
  return {{"duplicate_partition", dup},  {"place_category", cats}, {"homes", homes},
          {"neighborhood_ids", ids},     {"visit_tally", visits},  {"profiles", profiles},
          {"law", g.config.law.to_json()}, {"config", g.config.to_json()}};
}

/// Writes every input file of the pipeline plus `ground_truth.json` and a
/// ready-to-run `manifest.json` into `dir`.
inline void write_city(const GeneratedCity& g, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "sources");
  io::write_json(dir / "neighborhoods.geojson", geo::to_geojson(g.city.geoms));
  std::string bts = "bts_id,lat,lon\n";
  char buf[96];
  for (const auto& t : g.city.towers) {
    std::snprintf(buf, sizeof buf, "%s,%.7f,%.7f\n", t.id.c_str(), t.location.lat, t.location.lon);
    bts += buf;
  }
  io::write_atomic(dir / "bts.csv", bts);
  json sources = json::array();
  for (const auto& s : g.places.sources) {
    io::write_atomic(dir / "sources" / (s + ".csv"), places::to_csv(g.places.by_source.at(s)));
    sources.push_back({{"id", s}, {"path", "sources/" + s + ".csv"}});
  }
  io::write_atomic(dir / "cdr.csv", mobility::cdr_to_csv(g.cdr.records));
  auto dist = baselines::haversine_distances(g.city.geoms);
  dist.cost = (dist.cost.array() * 3.0).matrix();  // minutes at 20 km/h
  for (Eigen::Index i = 0; i < dist.cost.rows(); ++i)
    for (Eigen::Index j = 0; j < dist.cost.cols(); ++j)
      if (i != j) dist.cost(i, j) += 2.0;
  dist.unit = "minutes";
  io::write_atomic(dir / "distances.csv", baselines::distance_to_csv(dist));
  io::write_json(dir / "category_scheme.json", scheme_for(g.config).to_json());
  io::write_json(dir / "ground_truth.json", ground_truth_json(g));

  const auto window_start = g.config.start_local_epoch - g.config.utc_offset_s;
  json manifest = {
      {"geometries", "neighborhoods.geojson"},
      {"sources", sources},
      {"bts", "bts.csv"},
      {"cdr", json::array({"cdr.csv"})},
      {"cdr_metadata", {{"utc_offset_s", g.config.utc_offset_s},
                        {"window_start", window_start},
                        {"window_end", window_start + 86400LL * g.config.days}}},
      {"distances", "distances.csv"},
      {"distance_unit", "minutes"},
      {"category_scheme", "category_scheme.json"},
      {"output_dir", "out"},
      {"ablation_source", g.config.exclusive_source},
      {"semantics", {{"dimensions", 20},
                     {"k_range", {14, 15, 16, 17, 18, 19, 20, 21, 22}},
                     {"plateau_tolerance", 0.01},
                     {"kmeans_restarts", 10}}},
      {"depth", 3},
      {"depths", {1, 2, 3, 4}},
      {"tasks", {"to", "from"}},
      {"pairwise_depth", 1},
      {"audit", {{"repeats", 10}}},
      {"seed", g.config.seed}};
  io::write_json(dir / "manifest.json", manifest);
}

}  // namespace mobinsight::synth

#endif  // MOBINSIGHT_SYNTH_HPP
