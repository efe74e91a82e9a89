#ifndef MOBINSIGHT_GEO_HPP
#define MOBINSIGHT_GEO_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mobinsight/io.hpp"

namespace mobinsight::geo {

inline constexpr double kEarthRadiusM = 6371000.0;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  bool valid() const {
    return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
           lon >= -180.0 && lon <= 180.0;
  }
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

inline GeoPoint make_point(double lat, double lon) {
  GeoPoint p{lat, lon};
  if (!p.valid())
    throw Error("invalid coordinate (" + std::to_string(lat) + ", " + std::to_string(lon) + ")");
  return p;
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

/// Great-circle distance on a spherical Earth.
inline double haversine_distance_m(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = deg2rad(a.lat), phi2 = deg2rad(b.lat);
  const double dphi = phi2 - phi1;
  const double dlambda = deg2rad(b.lon - a.lon);
  const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlambda / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

/// Closed ring, closure implicit (first vertex is not repeated).
class PolygonRing {
 public:
  PolygonRing() = default;
  explicit PolygonRing(std::vector<GeoPoint> vertices) : vertices_(std::move(vertices)) {
    if (vertices_.size() >= 2 && vertices_.front() == vertices_.back()) vertices_.pop_back();
    validate();
  }

  const std::vector<GeoPoint>& vertices() const { return vertices_; }
  std::size_t size() const { return vertices_.size(); }

  /// Planar area in squared degrees (signed by orientation).
  double signed_area_deg2() const {
    double acc = 0.0;
    for (std::size_t i = 0, n = vertices_.size(); i < n; ++i) {
      const auto& p = vertices_[i];
      const auto& q = vertices_[(i + 1) % n];
      acc += p.lon * q.lat - q.lon * p.lat;
    }
    return acc / 2.0;
  }

  struct Bounds {
    double min_lat, max_lat, min_lon, max_lon;
  };
  Bounds bounds() const {
    Bounds b{90.0, -90.0, 180.0, -180.0};
    for (const auto& v : vertices_) {
      b.min_lat = std::min(b.min_lat, v.lat);
      b.max_lat = std::max(b.max_lat, v.lat);
      b.min_lon = std::min(b.min_lon, v.lon);
      b.max_lon = std::max(b.max_lon, v.lon);
    }
    return b;
  }

 private:
  static double cross(const GeoPoint& o, const GeoPoint& a, const GeoPoint& b) {
    return (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon);
  }
  static bool segments_intersect(const GeoPoint& a, const GeoPoint& b, const GeoPoint& c,
                                 const GeoPoint& d) {
    const double d1 = cross(c, d, a), d2 = cross(c, d, b);
    const double d3 = cross(a, b, c), d4 = cross(a, b, d);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
      return true;
    auto on_seg = [](const GeoPoint& p, const GeoPoint& q, const GeoPoint& r) {
      return std::min(p.lon, q.lon) <= r.lon && r.lon <= std::max(p.lon, q.lon) &&
             std::min(p.lat, q.lat) <= r.lat && r.lat <= std::max(p.lat, q.lat);
    };
    return (d1 == 0 && on_seg(c, d, a)) || (d2 == 0 && on_seg(c, d, b)) ||
           (d3 == 0 && on_seg(a, b, c)) || (d4 == 0 && on_seg(a, b, d));
  }

  void validate() const {
    const std::size_t n = vertices_.size();
    if (n < 3) throw Error("polygon ring needs at least 3 vertices");
    for (const auto& v : vertices_)
      if (!v.valid()) throw Error("polygon ring has an invalid vertex");
    if (signed_area_deg2() == 0.0) throw Error("degenerate (zero-area) polygon ring");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
        if (adjacent) continue;
        if (segments_intersect(vertices_[i], vertices_[(i + 1) % n], vertices_[j],
                               vertices_[(j + 1) % n]))
          throw Error("self-intersecting polygon ring");
      }
    }
  }

  std::vector<GeoPoint> vertices_;
};

/// Ray-casting membership in the (lon, lat) plane. Points on an edge or
/// vertex are inside.
inline bool point_in_polygon(const GeoPoint& p, const PolygonRing& ring) {
  const auto& v = ring.vertices();
  const std::size_t n = v.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const GeoPoint& a = v[i];
    const GeoPoint& b = v[j];
    const double cr = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    if (cr == 0.0 && std::min(a.lon, b.lon) <= p.lon && p.lon <= std::max(a.lon, b.lon) &&
        std::min(a.lat, b.lat) <= p.lat && p.lat <= std::max(a.lat, b.lat))
      return true;
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      const double x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

/// Area-weighted centroid on an equirectangular projection around the mean
/// vertex latitude.
inline GeoPoint centroid(const PolygonRing& ring) {
  const auto& v = ring.vertices();
  const std::size_t n = v.size();
  if (n < 3) throw Error("degenerate polygon ring");
  double lat0 = 0.0, lon0 = 0.0;
  for (const auto& p : v) {
    lat0 += p.lat;
    lon0 += p.lon;
  }
  lat0 /= static_cast<double>(n);
  lon0 /= static_cast<double>(n);
  const double kx = std::cos(deg2rad(lat0));
  double area2 = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x0 = (v[i].lon - lon0) * kx, y0 = v[i].lat - lat0;
    const double x1 = (v[(i + 1) % n].lon - lon0) * kx, y1 = v[(i + 1) % n].lat - lat0;
    const double c = x0 * y1 - x1 * y0;
    area2 += c;
    cx += (x0 + x1) * c;
    cy += (y0 + y1) * c;
  }
  if (area2 == 0.0) throw Error("degenerate (zero-area) polygon ring");
  return GeoPoint{lat0 + cy / (3.0 * area2), lon0 + cx / (3.0 * area2) / kx};
}

struct Site {
  std::string id;
  GeoPoint location;
};

/// Voronoi cell membership: the nearest site wins, ties go to the smallest id.
inline const std::string& assign_nearest_site(const GeoPoint& p, std::span<const Site> sites) {
  if (sites.empty()) throw Error("no sites");
  const Site* best = &sites[0];
  double best_d = haversine_distance_m(p, best->location);
  for (const auto& s : sites.subspan(1)) {
    const double d = haversine_distance_m(p, s.location);
    if (d < best_d || (d == best_d && s.id < best->id)) {
      best = &s;
      best_d = d;
    }
  }
  return best->id;
}

struct NeighborhoodGeometry {
  std::string id;
  std::string name;
  PolygonRing boundary;
  GeoPoint centroid;
  double population = 0.0;
};

inline NeighborhoodGeometry make_neighborhood(std::string id, std::string name, PolygonRing ring,
                                              double population) {
  if (!(population >= 0.0) || !std::isfinite(population))
    throw Error("neighborhood " + id + ": population must be nonnegative");
  NeighborhoodGeometry g{std::move(id), std::move(name), std::move(ring), {}, population};
  g.centroid = centroid(g.boundary);
  return g;
}

/// Index of the neighborhood containing `p`; falls back to the nearest
/// centroid within `max_fallback_m`. Returns -1 when neither applies.
inline int locate_neighborhood(const GeoPoint& p, std::span<const NeighborhoodGeometry> geoms,
                               double max_fallback_m = 1000.0) {
  for (std::size_t i = 0; i < geoms.size(); ++i) {
    const auto b = geoms[i].boundary.bounds();
    if (p.lat < b.min_lat || p.lat > b.max_lat || p.lon < b.min_lon || p.lon > b.max_lon) continue;
    if (point_in_polygon(p, geoms[i].boundary)) return static_cast<int>(i);
  }
  int best = -1;
  double best_d = max_fallback_m;
  for (std::size_t i = 0; i < geoms.size(); ++i) {
    const double d = haversine_distance_m(p, geoms[i].centroid);
    if (d <= best_d && (best < 0 || d < best_d || geoms[i].id < geoms[static_cast<std::size_t>(best)].id)) {
      best = static_cast<int>(i);
      best_d = d;
    }
  }
  return best;
}

inline std::vector<NeighborhoodGeometry> parse_geojson(const json& doc, const std::string& origin) {
  if (doc.value("type", "") != "FeatureCollection")
    throw SchemaError(origin, 0, "expected a GeoJSON FeatureCollection");
  std::vector<NeighborhoodGeometry> out;
  std::size_t row = 0;
  for (const auto& f : doc.at("features")) {
    ++row;
    try {
      const auto& props = f.at("properties");
      const auto& geom = f.at("geometry");
      if (geom.at("type") != "Polygon") throw Error("only Polygon geometries are supported");
      std::vector<GeoPoint> verts;
      for (const auto& c : geom.at("coordinates").at(0))
        verts.push_back(make_point(c.at(1).get<double>(), c.at(0).get<double>()));
      std::string id = props.at("id").is_string() ? props.at("id").get<std::string>()
                                                  : props.at("id").dump();
      out.push_back(make_neighborhood(id, props.value("name", id), PolygonRing(std::move(verts)),
                                      props.at("population").get<double>()));
    } catch (const SchemaError&) {
      throw;
    } catch (const std::exception& e) {
      throw SchemaError(origin, row, e.what());
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = i + 1; j < out.size(); ++j)
      if (out[i].id == out[j].id) throw SchemaError(origin, j + 1, "duplicate neighborhood id " + out[i].id);
  return out;
}

inline std::vector<NeighborhoodGeometry> load_geojson(const std::filesystem::path& path) {
  return parse_geojson(io::read_json(path), path.string());
}

inline json to_geojson(std::span<const NeighborhoodGeometry> geoms) {
  json features = json::array();
  for (const auto& g : geoms) {
    json ring = json::array();
    for (const auto& v : g.boundary.vertices()) ring.push_back({v.lon, v.lat});
    ring.push_back({g.boundary.vertices().front().lon, g.boundary.vertices().front().lat});
    features.push_back({{"type", "Feature"},
                        {"properties", {{"id", g.id}, {"name", g.name}, {"population", g.population}}},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", json::array({ring})}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

}  // namespace mobinsight::geo

#endif  // MOBINSIGHT_GEO_HPP
