#ifndef MOBINSIGHT_PLACES_HPP
#define MOBINSIGHT_PLACES_HPP

// Place ingestion and cross-source duplicate resolution.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mobinsight/geo.hpp"
#include "mobinsight/io.hpp"

namespace mobinsight::places {

struct RawPlace {
  std::string source;
  std::string source_place_id;
  std::string name;
  geo::GeoPoint location;
  std::vector<std::string> tags;
  std::vector<std::string> taxonomy;
};

struct CanonicalPlace {
  std::string canonical_id;
  std::set<std::string> names;
  geo::GeoPoint location;
  std::set<std::string> tags;
  std::set<std::string> sources;
  std::size_t member_count = 0;
  std::vector<std::size_t> members;  // ingestion indices, ascending
};

namespace detail {

// ASCII folding of U+00C0..U+00FF; "" marks a separator.
inline constexpr std::string_view kLatin1Fold[64] = {
    "A", "A", "A", "A", "A", "A", "AE", "C", "E", "E", "E", "E", "I", "I", "I", "I",
    "D", "N", "O", "O", "O", "O", "O", "",  "O", "U", "U", "U", "U", "Y", "TH", "ss",
    "a", "a", "a", "a", "a", "a", "ae", "c", "e", "e", "e", "e", "i", "i", "i", "i",
    "d", "n", "o", "o", "o", "o", "o", "",  "o", "u", "u", "u", "u", "y", "th", "y"};

// Base letters of U+0100..U+017F, two code points per letter where cased.
inline std::string_view fold_extended_a(char32_t cp) {
  struct Range {
    char32_t lo, hi;
    std::string_view upper, lower;
  };
  static constexpr Range kRanges[] = {
      {0x100, 0x105, "A", "a"}, {0x106, 0x10D, "C", "c"}, {0x10E, 0x111, "D", "d"},
      {0x112, 0x11B, "E", "e"}, {0x11C, 0x123, "G", "g"}, {0x124, 0x127, "H", "h"},
      {0x128, 0x131, "I", "i"}, {0x132, 0x133, "IJ", "ij"}, {0x134, 0x135, "J", "j"},
      {0x136, 0x138, "K", "k"}, {0x139, 0x142, "L", "l"}, {0x143, 0x14B, "N", "n"},
      {0x14C, 0x151, "O", "o"}, {0x152, 0x153, "OE", "oe"}, {0x154, 0x159, "R", "r"},
      {0x15A, 0x161, "S", "s"}, {0x162, 0x167, "T", "t"}, {0x168, 0x173, "U", "u"},
      {0x174, 0x175, "W", "w"}, {0x176, 0x178, "Y", "y"}, {0x179, 0x17E, "Z", "z"},
      {0x17F, 0x17F, "s", "s"}};
  for (const auto& r : kRanges)
    if (cp >= r.lo && cp <= r.hi) return r.lower;
  return {};
}

// Decodes one UTF-8 sequence; malformed bytes come back as U+FFFD.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = (b0 & 0xE0) == 0xC0 ? 2 : (b0 & 0xF0) == 0xE0 ? 3 : (b0 & 0xF8) == 0xF0 ? 4 : 0;
  if (len == 0) {
    ++i;
    return 0xFFFD;
  }
  char32_t cp = b0 & (0x7F >> len);
  for (int k = 1; k < len; ++k) {
    const int c = cont(static_cast<std::size_t>(k));
    if (c < 0) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline bool is_separator(char32_t cp) {
  if (cp < 0x80) return !std::isalnum(static_cast<int>(cp));
  if (cp >= 0x80 && cp <= 0xBF) return true;         // Latin-1 punctuation and symbols
  if (cp >= 0x2000 && cp <= 0x206F) return true;     // general punctuation
  if (cp >= 0x3000 && cp <= 0x303F) return true;     // CJK punctuation
  return cp == 0xFFFD || cp == 0xD7 || cp == 0xF7;
}

}  // namespace detail

/// Lowercased, diacritic-folded tokens. Apostrophes are dropped without
/// splitting; every other punctuation mark separates tokens.
inline std::vector<std::string> normalize_name(std::string_view name) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < name.size();) {
    const char32_t cp = detail::next_code_point(name, i);
    if (cp == '\'' || cp == 0x2019) continue;
    if (cp >= 0xC0 && cp <= 0xFF) {
      const auto f = detail::kLatin1Fold[cp - 0xC0];
      if (f.empty()) {
        flush();
      } else {
        for (char c : f) cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      }
      continue;
    }
    if (cp >= 0x100 && cp <= 0x17F) {
      cur += detail::fold_extended_a(cp);
      continue;
    }
    if (detail::is_separator(cp)) {
      flush();
      continue;
    }
    if (cp < 0x80) cur.push_back(static_cast<char>(std::tolower(static_cast<int>(cp))));
    else detail::append_utf8(cur, cp);
  }
  flush();
  return tokens;
}

/// token -> ingestion indices of the places whose names contain it. Groups
/// larger than `source_count` are dropped as too common to identify a place.
inline std::map<std::string, std::vector<std::size_t>> candidate_groups(
    std::span<const RawPlace> places, std::size_t source_count) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < places.size(); ++i) {
    auto tokens = normalize_name(places[i].name);
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (auto& t : tokens) groups[t].push_back(i);
  }
  std::erase_if(groups, [&](const auto& kv) { return kv.second.size() > source_count; });
  return groups;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  // The smaller index becomes the root, so roots are component minima.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

inline std::size_t count_sources(std::span<const RawPlace> places) {
  std::set<std::string_view> s;
  for (const auto& p : places) s.insert(p.source);
  return s.size();
}

/// Merges places that share a name token inside a retained candidate group
/// and lie within `radius_m`. Merging is transitive; output is ordered by
/// each component's earliest member.
inline std::vector<CanonicalPlace> resolve_duplicates(std::span<const RawPlace> places,
                                                      double radius_m = 50.0) {
  if (!(radius_m > 0.0)) throw Error("radius_m must be positive");
  const auto groups = candidate_groups(places, std::max<std::size_t>(1, count_sources(places)));
  UnionFind uf(places.size());
  for (const auto& [token, members] : groups) {
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b)
        if (geo::haversine_distance_m(places[members[a]].location, places[members[b]].location) <=
            radius_m)
          uf.unite(members[a], members[b]);
  }
  std::map<std::size_t, std::vector<std::size_t>> components;
  for (std::size_t i = 0; i < places.size(); ++i) components[uf.find(i)].push_back(i);

  std::vector<CanonicalPlace> out;
  out.reserve(components.size());
  for (const auto& [root, members] : components) {
    CanonicalPlace c;
    const auto& first = places[members.front()];
    c.canonical_id = first.source + ":" + first.source_place_id;
    c.location = first.location;
    c.member_count = members.size();
    c.members = members;
    for (std::size_t m : members) {
      const auto& p = places[m];
      c.names.insert(p.name);
      c.sources.insert(p.source);
      c.tags.insert(p.tags.begin(), p.tags.end());
      c.tags.insert(p.taxonomy.begin(), p.taxonomy.end());
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Expresses a resolved set back as raw records, one per canonical place.
inline std::vector<RawPlace> lift_to_raw(std::span<const CanonicalPlace> canon) {
  std::vector<RawPlace> out;
  for (const auto& c : canon) {
    RawPlace r;
    r.source = *c.sources.begin();
    r.source_place_id = c.canonical_id;
    r.name = *c.names.begin();
    r.location = c.location;
    r.tags.assign(c.tags.begin(), c.tags.end());
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& field) {
  std::vector<std::string> out;
  for (auto& s : io::split(field, '|')) {
    auto t = io::trim(s);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

/// Reads one source file: `source_place_id,name,lat,lon,tags,taxonomy`.
inline std::vector<RawPlace> load_source_csv(const std::filesystem::path& path,
                                             const std::string& source) {
  const auto table = io::read_csv(path);
  const std::string file = path.string();
  const auto c_id = table.column("source_place_id", file);
  const auto c_name = table.column("name", file);
  const auto c_lat = table.column("lat", file);
  const auto c_lon = table.column("lon", file);
  const auto c_tags = table.column("tags", file);
  const auto c_tax = table.column("taxonomy", file);
  std::vector<RawPlace> out;
  out.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.line_numbers[r];
    RawPlace p;
    p.source = source;
    p.source_place_id = io::trim(row[c_id]);
    p.name = io::trim(row[c_name]);
    if (p.name.empty()) throw SchemaError(file, line, "empty place name");
    p.location = {io::parse_double(row[c_lat], file, line, "lat"),
                  io::parse_double(row[c_lon], file, line, "lon")};
    if (!p.location.valid()) throw SchemaError(file, line, "coordinate out of range");
    p.tags = split_list(row[c_tags]);
    p.taxonomy = split_list(row[c_tax]);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::string to_csv(std::span<const RawPlace> places) {
  std::string out = "source_place_id,name,lat,lon,tags,taxonomy\n";
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "|" : "") + v[i];
    return s;
  };
  char buf[64];
  for (const auto& p : places) {
    out += io::csv_escape(p.source_place_id) + "," + io::csv_escape(p.name) + ",";
    std::snprintf(buf, sizeof buf, "%.7f,%.7f", p.location.lat, p.location.lon);
    out += buf;
    out += "," + io::csv_escape(join(p.tags)) + "," + io::csv_escape(join(p.taxonomy)) + "\n";
  }
  return out;
}

inline json raw_to_json(const RawPlace& p) {
  return {{"source", p.source}, {"source_place_id", p.source_place_id}, {"name", p.name},
          {"lat", p.location.lat}, {"lon", p.location.lon}, {"tags", p.tags},
          {"taxonomy", p.taxonomy}};
}

inline RawPlace raw_from_json(const json& j) {
  return {j.at("source"), j.at("source_place_id"), j.at("name"),
          {j.at("lat").get<double>(), j.at("lon").get<double>()},
          j.at("tags").get<std::vector<std::string>>(),
          j.at("taxonomy").get<std::vector<std::string>>()};
}

inline json canonical_to_json(const CanonicalPlace& c) {
  return {{"canonical_id", c.canonical_id}, {"names", c.names},     {"lat", c.location.lat},
          {"lon", c.location.lon},          {"tags", c.tags},       {"sources", c.sources},
          {"member_count", c.member_count}, {"members", c.members}};
}

inline CanonicalPlace canonical_from_json(const json& j) {
  CanonicalPlace c;
  c.canonical_id = j.at("canonical_id");
  c.names = j.at("names").get<std::set<std::string>>();
  c.location = {j.at("lat").get<double>(), j.at("lon").get<double>()};
  c.tags = j.at("tags").get<std::set<std::string>>();
  c.sources = j.at("sources").get<std::set<std::string>>();
  c.member_count = j.at("member_count");
  c.members = j.value("members", std::vector<std::size_t>{});
  return c;
}

template <typename T, typename F>
std::string to_jsonl(std::span<const T> items, F&& to_json) {
  std::string out;
  for (const auto& it : items) out += to_json(it).dump() + "\n";
  return out;
}

template <typename F>
auto read_jsonl(const std::filesystem::path& path, F&& from_json) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path);
  std::vector<decltype(from_json(json{}))> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (io::trim(line).empty()) continue;
    try {
      out.push_back(from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw SchemaError(path.string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace mobinsight::places

#endif  // MOBINSIGHT_PLACES_HPP
