#ifndef MOBINSIGHT_MOBILITY_HPP
#define MOBINSIGHT_MOBILITY_HPP

// Communication-record filtering, home detection and O-D matrix assembly.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mobinsight/geo.hpp"
#include "mobinsight/io.hpp"
#include "mobinsight/stats.hpp"

namespace mobinsight::mobility {

enum class RecordKind { call, sms, mms };

inline RecordKind parse_kind(const std::string& s, const std::string& file, std::size_t row) {
  if (s == "call") return RecordKind::call;
  if (s == "sms") return RecordKind::sms;
  if (s == "mms") return RecordKind::mms;
  throw SchemaError(file, row, "unknown record kind '" + s + "'");
}

struct CdrRecord {
  std::string user_id;
  std::int64_t timestamp = 0;  // epoch seconds
  std::string bts_id;
  RecordKind kind = RecordKind::call;
  double duration_s = 0.0;
  bool roaming = false;
  bool prepaid = false;
};

/// Dataset-level metadata: local-time offset and declared collection window.
struct CdrMetadata {
  std::int64_t utc_offset_s = 0;
  std::optional<std::int64_t> window_start;  // inclusive
  std::optional<std::int64_t> window_end;    // exclusive
};

struct BtsSite {
  std::string id;
  geo::GeoPoint location;
  int neighborhood = -1;  // index into the geometry list
};

enum class HomeStatus { assigned, discarded };
enum class DiscardReason { none, ambiguous_home, too_few_records, filtered };

inline const char* to_string(DiscardReason r) {
  switch (r) {
    case DiscardReason::ambiguous_home: return "ambiguous_home";
    case DiscardReason::too_few_records: return "too_few_records";
    case DiscardReason::filtered: return "filtered";
    default: return "none";
  }
}

struct HomeAssignment {
  std::string user_id;
  HomeStatus status = HomeStatus::discarded;
  int neighborhood = -1;
  DiscardReason reason = DiscardReason::none;

  static HomeAssignment assigned(std::string user, int nbhd) {
    return {std::move(user), HomeStatus::assigned, nbhd, DiscardReason::none};
  }
  static HomeAssignment discarded(std::string user, DiscardReason why) {
    return {std::move(user), HomeStatus::discarded, -1, why};
  }
  bool is_assigned() const { return status == HomeStatus::assigned; }
};

enum class Direction { to, from };

inline const char* to_string(Direction d) { return d == Direction::to ? "to" : "from"; }
inline Direction parse_direction(const std::string& s) {
  if (s == "to") return Direction::to;
  if (s == "from") return Direction::from;
  throw Error("direction must be 'to' or 'from', got '" + s + "'");
}

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct OdMatrix {
  std::vector<std::string> ids;
  CountMatrix counts;  // counts(home, visited)
  Direction direction = Direction::to;

  std::size_t order() const { return ids.size(); }
  std::int64_t total() const { return counts.sum(); }

  OdMatrix transposed() const {
    return {ids, counts.transpose(),
            direction == Direction::to ? Direction::from : Direction::to};
  }

  json to_json() const {
    json rows = json::array();
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
      json r = json::array();
      for (Eigen::Index j = 0; j < counts.cols(); ++j) r.push_back(counts(i, j));
      rows.push_back(std::move(r));
    }
    json index = json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
    return {{"direction", to_string(direction)}, {"ids", ids}, {"index", index}, {"counts", rows}};
  }

  static OdMatrix from_json(const json& j) {
    OdMatrix m;
    m.direction = parse_direction(j.at("direction"));
    m.ids = j.at("ids").get<std::vector<std::string>>();
    const auto n = static_cast<Eigen::Index>(m.ids.size());
    m.counts = CountMatrix::Zero(n, n);
    const auto& rows = j.at("counts");
    if (static_cast<Eigen::Index>(rows.size()) != n) throw Error("od matrix: row count mismatch");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (static_cast<Eigen::Index>(rows[i].size()) != n) throw Error("od matrix: ragged row");
      for (Eigen::Index j2 = 0; j2 < n; ++j2) {
        m.counts(i, j2) = rows[i][j2].get<std::int64_t>();
        if (m.counts(i, j2) < 0) throw Error("od matrix: negative count");
      }
      if (m.counts(i, i) != 0) throw Error("od matrix: nonzero diagonal");
    }
    return m;
  }
};

inline constexpr std::size_t kMinRecordsPerUser = 10;

struct FilterResult {
  std::vector<CdrRecord> retained;
  std::vector<HomeAssignment> discards;  // sorted by user id
};

/// Drops roaming and prepaid records, then users left with fewer than ten.
inline FilterResult filter_users(std::span<const CdrRecord> records,
                                 std::size_t min_records = kMinRecordsPerUser) {
  std::map<std::string, std::size_t> clean;
  std::set<std::string> seen;
  for (const auto& r : records) {
    seen.insert(r.user_id);
    if (!r.roaming && !r.prepaid) ++clean[r.user_id];
  }
  FilterResult out;
  std::set<std::string> keep;
  for (const auto& u : seen) {
    auto it = clean.find(u);
    if (it == clean.end()) out.discards.push_back(HomeAssignment::discarded(u, DiscardReason::filtered));
    else if (it->second < min_records)
      out.discards.push_back(HomeAssignment::discarded(u, DiscardReason::too_few_records));
    else keep.insert(u);
  }
  for (const auto& r : records)
    if (!r.roaming && !r.prepaid && keep.count(r.user_id)) out.retained.push_back(r);
  return out;
}

struct LocalTime {
  std::int64_t day = 0;  // days since the epoch, local calendar
  int weekday = 0;       // 0 = Monday .. 6 = Sunday
  int hour = 0;
};

inline LocalTime local_time(std::int64_t ts, std::int64_t utc_offset_s) {
  const std::int64_t local = ts + utc_offset_s;
  LocalTime t;
  t.day = local >= 0 ? local / 86400 : -((-local + 86399) / 86400);
  const std::int64_t sec = local - t.day * 86400;
  t.hour = static_cast<int>(sec / 3600);
  t.weekday = static_cast<int>(((t.day + 3) % 7 + 7) % 7);  // 1970-01-01 was a Thursday
  return t;
}

/// Mon-Thu nights ([Mon 20:00, Tue 08:00) ... [Thu 20:00, Fri 08:00)) and
/// all of Saturday and Sunday.
inline bool in_home_window(std::int64_t ts, std::int64_t utc_offset_s) {
  const auto t = local_time(ts, utc_offset_s);
  if (t.weekday >= 5) return true;
  if (t.weekday <= 3 && t.hour >= 20) return true;
  if (t.weekday >= 1 && t.weekday <= 4 && t.hour < 8) return true;
  return false;
}

using SiteMap = std::unordered_map<std::string, BtsSite>;

inline constexpr double kSecondSiteRatio = 0.8;
inline constexpr double kColocatedSitesM = 100.0;

/// Home neighborhood from the most used tower in the home window. A close
/// runner-up (>= 80% of the top count) is tolerated only within 100 m.
inline HomeAssignment detect_home(const std::string& user_id, std::span<const CdrRecord> records,
                                  const SiteMap& sites, std::int64_t utc_offset_s = 0) {
  std::map<std::string, std::size_t> usage;
  for (const auto& r : records)
    if (in_home_window(r.timestamp, utc_offset_s) && sites.count(r.bts_id)) ++usage[r.bts_id];
  if (usage.empty()) return HomeAssignment::discarded(user_id, DiscardReason::ambiguous_home);
  std::vector<std::pair<std::string, std::size_t>> ranked(usage.begin(), usage.end());
  // map order is by id, so a stable sort keeps the smaller id first on ties
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const BtsSite& first = sites.at(ranked[0].first);
  if (ranked.size() == 1) return HomeAssignment::assigned(user_id, first.neighborhood);
  const std::size_t c1 = ranked[0].second, c2 = ranked[1].second;
  if (static_cast<double>(c2) < kSecondSiteRatio * static_cast<double>(c1))
    return HomeAssignment::assigned(user_id, first.neighborhood);
  const BtsSite& second = sites.at(ranked[1].first);
  if (geo::haversine_distance_m(first.location, second.location) <= kColocatedSitesM)
    return HomeAssignment::assigned(user_id, first.neighborhood);
  return HomeAssignment::discarded(user_id, DiscardReason::ambiguous_home);
}

/// Groups record indices per user, users in ascending id order.
inline std::map<std::string, std::vector<std::size_t>> group_by_user(
    std::span<const CdrRecord> records) {
  std::map<std::string, std::vector<std::size_t>> g;
  for (std::size_t i = 0; i < records.size(); ++i) g[records[i].user_id].push_back(i);
  return g;
}

/// Filters and runs home detection for every user.
inline std::vector<HomeAssignment> assign_homes(std::span<const CdrRecord> records,
                                                const SiteMap& sites,
                                                std::int64_t utc_offset_s = 0) {
  auto filtered = filter_users(records);
  std::vector<HomeAssignment> out = std::move(filtered.discards);
  const auto groups = group_by_user(filtered.retained);
  std::vector<CdrRecord> buf;
  for (const auto& [user, idx] : groups) {
    buf.clear();
    for (auto i : idx) buf.push_back(filtered.retained[i]);
    out.push_back(detect_home(user, buf, sites, utc_offset_s));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.user_id < b.user_id; });
  return out;
}

struct OdBuild {
  OdMatrix matrix;
  std::size_t rejected_records = 0;  // unknown tower ids
};

/// Counts distinct (local day, visited neighborhood) pairs per resident
/// outside the home neighborhood into counts(home, visited).
inline OdBuild build_od_matrix(std::span<const CdrRecord> records,
                               std::span<const HomeAssignment> homes, const SiteMap& sites,
                               std::span<const geo::NeighborhoodGeometry> geoms,
                               std::int64_t utc_offset_s = 0) {
  OdBuild out;
  const auto n = static_cast<Eigen::Index>(geoms.size());
  out.matrix.direction = Direction::to;
  for (const auto& g : geoms) out.matrix.ids.push_back(g.id);
  out.matrix.counts = CountMatrix::Zero(n, n);
  std::unordered_map<std::string, int> home_of;
  for (const auto& h : homes)
    if (h.is_assigned()) home_of.emplace(h.user_id, h.neighborhood);
  std::unordered_map<std::string, std::set<std::pair<std::int64_t, int>>> visits;
  for (const auto& r : records) {
    auto site = sites.find(r.bts_id);
    if (site == sites.end()) {
      ++out.rejected_records;
      continue;
    }
    auto home = home_of.find(r.user_id);
    if (home == home_of.end()) continue;
    const int visited = site->second.neighborhood;
    if (visited == home->second || visited < 0) continue;
    visits[r.user_id].emplace(local_time(r.timestamp, utc_offset_s).day, visited);
  }
  for (const auto& [user, days] : visits) {
    const int h = home_of.at(user);
    for (const auto& [day, v] : days) ++out.matrix.counts(h, v);
  }
  if (out.rejected_records > 0)
    io::warn(std::to_string(out.rejected_records) + " records reference unknown towers; rejected");
  return out;
}

/// Row-stochastic view; an all-zero row becomes uniform off the diagonal.
inline Eigen::MatrixXd normalize_rows(const CountMatrix& counts) {
  const Eigen::Index n = counts.rows();
  Eigen::MatrixXd p = counts.cast<double>();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = p.row(i).sum();
    if (s > 0.0) {
      p.row(i) /= s;
    } else {
      p.row(i).setConstant(n > 1 ? 1.0 / static_cast<double>(n - 1) : 0.0);
      p(i, i) = 0.0;
    }
  }
  return p;
}

inline Eigen::MatrixXd normalize_rows(const OdMatrix& m) { return normalize_rows(m.counts); }

inline std::vector<double> home_counts(std::span<const HomeAssignment> homes, std::size_t n) {
  std::vector<double> c(n, 0.0);
  for (const auto& h : homes)
    if (h.is_assigned()) c[static_cast<std::size_t>(h.neighborhood)] += 1.0;
  return c;
}

/// Pearson r between detected residents and census population.
inline stats::Correlation population_correlation(std::span<const HomeAssignment> homes,
                                                 std::span<const geo::NeighborhoodGeometry> geoms) {
  const auto counts = home_counts(homes, geoms.size());
  std::vector<double> pop;
  for (const auto& g : geoms) pop.push_back(g.population);
  return stats::pearson(counts, pop);
}

// ---------------------------------------------------------------------------
// Files

inline std::vector<CdrRecord> load_cdr_csv(const std::filesystem::path& path,
                                           const CdrMetadata& meta = {}) {
  const auto t = io::read_csv(path);
  const std::string file = path.string();
  const auto c_user = t.column("user_id", file), c_ts = t.column("timestamp", file),
             c_bts = t.column("bts_id", file), c_kind = t.column("kind", file),
             c_dur = t.column("duration_s", file), c_roam = t.column("roaming", file),
             c_pre = t.column("prepaid", file);
  std::vector<CdrRecord> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto line = t.line_numbers[r];
    CdrRecord rec;
    rec.user_id = row[c_user];
    rec.timestamp = io::parse_int(row[c_ts], file, line, "timestamp");
    rec.bts_id = row[c_bts];
    rec.kind = parse_kind(row[c_kind], file, line);
    rec.duration_s = io::parse_double(row[c_dur], file, line, "duration_s");
    if (rec.duration_s < 0) throw SchemaError(file, line, "negative duration");
    rec.roaming = io::parse_bool(row[c_roam], file, line, "roaming");
    rec.prepaid = io::parse_bool(row[c_pre], file, line, "prepaid");
    if ((meta.window_start && rec.timestamp < *meta.window_start) ||
        (meta.window_end && rec.timestamp >= *meta.window_end))
      throw SchemaError(file, line, "timestamp outside the collection window");
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::string cdr_to_csv(std::span<const CdrRecord> records) {
  std::string out = "user_id,timestamp,bts_id,kind,duration_s,roaming,prepaid\n";
  static constexpr const char* kKinds[] = {"call", "sms", "mms"};
  for (const auto& r : records) {
    out += r.user_id + "," + std::to_string(r.timestamp) + "," + r.bts_id + "," +
           kKinds[static_cast<int>(r.kind)] + "," +
           std::to_string(static_cast<long long>(r.duration_s)) + "," + (r.roaming ? "1" : "0") +
           "," + (r.prepaid ? "1" : "0") + "\n";
  }
  return out;
}

/// Reads `bts_id,lat,lon` and maps every tower to its neighborhood
/// (containment, falling back to the nearest centroid).
inline SiteMap load_bts_csv(const std::filesystem::path& path,
                            std::span<const geo::NeighborhoodGeometry> geoms) {
  const auto t = io::read_csv(path);
  const std::string file = path.string();
  const auto c_id = t.column("bts_id", file), c_lat = t.column("lat", file),
             c_lon = t.column("lon", file);
  SiteMap sites;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto line = t.line_numbers[r];
    BtsSite s;
    s.id = t.rows[r][c_id];
    s.location = {io::parse_double(t.rows[r][c_lat], file, line, "lat"),
                  io::parse_double(t.rows[r][c_lon], file, line, "lon")};
    if (!s.location.valid()) throw SchemaError(file, line, "coordinate out of range");
    s.neighborhood = geo::locate_neighborhood(s.location, geoms,
                                              std::numeric_limits<double>::infinity());
    if (s.neighborhood < 0) throw SchemaError(file, line, "tower cannot be mapped");
    if (!sites.emplace(s.id, s).second) throw SchemaError(file, line, "duplicate bts_id " + s.id);
  }
  return sites;
}

inline json homes_to_json(std::span<const HomeAssignment> homes,
                          std::span<const geo::NeighborhoodGeometry> geoms) {
  json arr = json::array();
  for (const auto& h : homes) {
    json j = {{"user_id", h.user_id}, {"status", h.is_assigned() ? "assigned" : "discarded"}};
    if (h.is_assigned()) j["neighborhood_id"] = geoms[static_cast<std::size_t>(h.neighborhood)].id;
    else j["reason"] = to_string(h.reason);
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace mobinsight::mobility

#endif  // MOBINSIGHT_MOBILITY_HPP
