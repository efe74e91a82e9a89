#ifndef MOBINSIGHT_SERVICE_HPP
#define MOBINSIGHT_SERVICE_HPP

// Read-only HTTP JSON API over the artifacts of one pipeline run, plus
// what-if inference with the fold models.

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>

#include "mobinsight/evaluation.hpp"
#include "mobinsight/io.hpp"
#include "mobinsight/pipeline.hpp"

namespace mobinsight::service {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using mobility::Direction;

/// Everything the API serves, loaded once and never modified.
class ArtifactStore {
 public:
  static ArtifactStore load(const fs::path& dir) {
    namespace a = pipeline::artifact;
    ArtifactStore s;
    s.dir_ = dir;
    auto need = [&](const std::string& name) {
      const auto p = dir / name;
      if (!fs::exists(p)) throw MissingArtifact(p);
      s.hashes_[name] = io::hash_file(p);
      return p;
    };
    s.geoms_ = geo::load_geojson(need(a::kGeometries));
    s.features_ = pipeline::read_features(need(a::kProfiles), s.geoms_);
    s.categories_ = semantics::load_profiles_csv(dir / a::kProfiles).categories;
    s.od_ = pipeline::read_od(need(a::kOdTo), s.geoms_);
    s.targets_[Direction::to] = evaluation::task_targets(s.od_, Direction::to);
    s.targets_[Direction::from] = evaluation::task_targets(s.od_, Direction::from);
    if (fs::exists(dir / a::kEvaluation)) {
      s.evaluation_ = io::read_json(need(a::kEvaluation));
      s.default_depth_ = s.evaluation_.value("nf_depth", 0);
    }
    for (auto task : {Direction::to, Direction::from}) {
      for (int d = 1; d <= 4; ++d) {
        const auto name = a::folds(task, d);
        if (!fs::exists(dir / name)) continue;
        auto fa = pipeline::FoldArtifact::from_json(io::read_json(need(name)));
        if (fa.ids != s.features_.ids) throw SchemaError((dir / name).string(), 0, "fold ids differ from profiles");
        s.folds_.emplace(std::make_pair(task, d), std::move(fa));
      }
      const auto imp = a::importance(task);
      if (fs::exists(dir / imp)) s.importance_[task] = io::read_json(need(imp));
    }
    if (s.folds_.empty()) throw MissingArtifact(dir / a::folds(Direction::to, 1));
    if (s.default_depth_ == 0 || !s.has_depth(Direction::to, s.default_depth_))
      s.default_depth_ = s.folds_.begin()->first.second;
    std::string digest;
    for (const auto& [name, h] : s.hashes_) digest += name + ":" + h + "\n";
    s.version_ = io::hex64(io::fnv1a(digest));
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    s.loaded_at_ = buf;
    return s;
  }

  const std::string& version() const { return version_; }
  const std::string& loaded_at() const { return loaded_at_; }
  const fs::path& dir() const { return dir_; }
  const std::vector<geo::NeighborhoodGeometry>& geometries() const { return geoms_; }
  const evaluation::FeatureTable& features() const { return features_; }
  const std::vector<std::string>& categories() const { return categories_; }
  const mobility::OdMatrix& od() const { return od_; }
  const MatrixXd& targets(Direction d) const { return targets_.at(d); }
  const json& evaluation() const { return evaluation_; }
  int default_depth() const { return default_depth_; }
  bool has_depth(Direction d, int depth) const { return folds_.count({d, depth}) > 0; }
  const pipeline::FoldArtifact& folds(Direction d, int depth) const { return folds_.at({d, depth}); }
  const json* importance(Direction d) const {
    auto it = importance_.find(d);
    return it == importance_.end() ? nullptr : &it->second;
  }
  std::vector<int> depths(Direction d) const {
    std::vector<int> out;
    for (const auto& [k, v] : folds_)
      if (k.first == d) out.push_back(k.second);
    return out;
  }
  const std::map<std::string, std::string>& file_hashes() const { return hashes_; }

  /// Rehash of the files this store was loaded from.
  std::string disk_version() const {
    std::string digest;
    for (const auto& [name, h] : hashes_) digest += name + ":" + io::hash_file(dir_ / name) + "\n";
    return io::hex64(io::fnv1a(digest));
  }

 private:
  fs::path dir_;
  std::vector<geo::NeighborhoodGeometry> geoms_;
  evaluation::FeatureTable features_;
  std::vector<std::string> categories_;
  mobility::OdMatrix od_;
  std::map<Direction, MatrixXd> targets_;
  json evaluation_ = json::object();
  std::map<std::pair<Direction, int>, pipeline::FoldArtifact> folds_;
  std::map<Direction, json> importance_;
  std::map<std::string, std::string> hashes_;
  std::string version_, loaded_at_;
  int default_depth_ = 0;
};

struct Reply {
  int status = 200;
  json body;
};

using Query = std::map<std::string, std::string>;

inline Reply error_reply(int status, std::string message, json extra = json::object()) {
  extra["error"] = std::move(message);
  return {status, extra};
}

inline json to_array(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

class Api {
 public:
  explicit Api(const ArtifactStore& store) : store_(store) {}

  Reply health() const {
    ++requests_;
    json depths = json::object();
    for (auto d : {Direction::to, Direction::from}) depths[mobility::to_string(d)] = store_.depths(d);
    return {200, {{"status", "ok"}, {"version", store_.version()}, {"loaded_at", store_.loaded_at()},
                  {"neighborhoods", store_.geometries().size()}, {"default_depth", store_.default_depth()},
                  {"depths", depths}, {"requests", requests_.load()}}};
  }

  Reply neighborhoods() const {
    ++requests_;
    const auto geo = geo::to_geojson(store_.geometries());
    const auto& f = store_.features();
    json items = json::array();
    for (std::size_t i = 0; i < store_.geometries().size(); ++i) {
      const auto& g = store_.geometries()[i];
      json profile = json::object();
      for (std::size_t c = 0; c < f.count_features; ++c)
        profile[f.names[c]] = f.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      items.push_back({{"id", g.id}, {"name", g.name}, {"population", g.population},
                       {"centroid", {{"lat", g.centroid.lat}, {"lon", g.centroid.lon}}},
                       {"geometry", geo["features"][i]["geometry"]}, {"profile", profile},
                       {"total_places", f.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f.count_features - 1))}});
    }
    return {200, {{"categories", store_.categories()}, {"neighborhoods", items}}};
  }

  Reply od(const Query& q) const {
    ++requests_;
    Direction dir;
    if (auto r = parse_direction(q, dir)) return *r;
    auto it = q.find("id");
    if (it == q.end() || it->second.empty()) return error_reply(400, "missing query parameter", {{"field", "id"}});
    const int i = store_.features().index_of(it->second);
    if (i < 0) return unknown_id(it->second);
    const MatrixXd& t = store_.targets(dir);
    const MatrixXd counts = dir == Direction::to ? MatrixXd(store_.od().counts.cast<double>())
                                                 : MatrixXd(store_.od().counts.cast<double>().transpose());
    return {200, {{"id", it->second}, {"direction", mobility::to_string(dir)}, {"ids", store_.features().ids},
                  {"row", to_array(t.row(i).transpose())}, {"visits", counts.row(i).sum()}}};
  }

  Reply estimate(const std::string& id, const Query& q) const {
    ++requests_;
    Direction dir;
    if (auto r = parse_direction(q, dir)) return *r;
    int depth = store_.default_depth();
    if (auto r = parse_depth(q, dir, depth)) return *r;
    const int i = store_.features().index_of(id);
    if (i < 0) return unknown_id(id);
    const auto& fa = store_.folds(dir, depth);
    const auto& fm = fa.folds[static_cast<std::size_t>(i)];
    const VectorXd x = store_.features().values.row(i).transpose();
    const VectorXd p = model::forward(fm.model, fm.stats.apply(x), i);
    const double kl = model::score(p, store_.targets(dir).row(i).transpose(), fa.kl_direction);
    return {200, {{"id", id}, {"direction", mobility::to_string(dir)}, {"depth", depth},
                  {"ids", store_.features().ids}, {"prediction", to_array(p)}, {"kl", kl},
                  {"kl_direction", model::to_string(fa.kl_direction)}, {"fold_kl", fa.fold_kl},
                  {"mean_kl", evaluation::mean_of(fa.fold_kl)}}};
  }

  Reply importance(const std::string& id, const Query& q) const {
    ++requests_;
    Direction dir;
    if (auto r = parse_direction(q, dir)) return *r;
    const json* rep = store_.importance(dir);
    if (id == "global") {
      if (!rep) return error_reply(404, "no importance report for this direction", {{"id", id}});
      return {200, (*rep)["global"]};
    }
    if (store_.features().index_of(id) < 0) return unknown_id(id);
    if (!rep) return error_reply(404, "no importance report for this direction", {{"id", id}});
    for (const auto& r : (*rep)["neighborhoods"])
      if (r["neighborhood_id"] == id) return {200, r};
    return error_reply(404, "no importance report for neighborhood", {{"id", id}});
  }

  /// Body {id, feature_deltas: {category: delta}, depth?, direction?}.
  /// Category deltas also shift the total; derived features are not editable.
  Reply whatif(const std::string& raw_body) const {
    ++requests_;
    json body;
    try {
      body = json::parse(raw_body);
    } catch (const json::parse_error&) {
      return error_reply(400, "body is not valid JSON", {{"field", "body"}});
    }
    if (!body.is_object()) return error_reply(400, "body must be a JSON object", {{"field", "body"}});
    for (const auto& [k, v] : body.items())
      if (k != "id" && k != "feature_deltas" && k != "depth" && k != "direction")
        return error_reply(400, "unknown field", {{"field", k}});
    if (!body.contains("id") || !body["id"].is_string()) return error_reply(400, "id must be a string", {{"field", "id"}});
    if (!body.contains("feature_deltas") || !body["feature_deltas"].is_object())
      return error_reply(400, "feature_deltas must be an object", {{"field", "feature_deltas"}});
    Query q;
    if (body.contains("direction")) {
      if (!body["direction"].is_string()) return error_reply(400, "direction must be a string", {{"field", "direction"}});
      q["direction"] = body["direction"].get<std::string>();
    }
    if (body.contains("depth")) {
      if (!body["depth"].is_number_integer()) return error_reply(400, "depth must be an integer", {{"field", "depth"}});
      q["depth"] = std::to_string(body["depth"].get<int>());
    }
    Direction dir;
    if (auto r = parse_direction(q, dir)) return *r;
    int depth = store_.default_depth();
    if (auto r = parse_depth(q, dir, depth)) return *r;
    const std::string id = body["id"];
    const auto& f = store_.features();
    const int i = f.index_of(id);
    if (i < 0) return unknown_id(id);

    const std::size_t n_categories = f.count_features - 1;
    const VectorXd base = f.values.row(i).transpose();
    VectorXd edited = base;
    for (const auto& [name, v] : body["feature_deltas"].items()) {
      const std::string field = "feature_deltas." + name;
      if (!v.is_number()) return error_reply(400, "delta must be a number", {{"field", field}});
      std::size_t c = 0;
      while (c < n_categories && f.names[c] != name) ++c;
      if (c == n_categories) return error_reply(400, "not an editable category", {{"field", field}});
      const double d = v.get<double>();
      if (!std::isfinite(d)) return error_reply(400, "delta must be finite", {{"field", field}});
      edited(static_cast<Eigen::Index>(c)) += d;
      edited(static_cast<Eigen::Index>(n_categories)) += d;
    }
    for (std::size_t c = 0; c < f.count_features; ++c)
      if (edited(static_cast<Eigen::Index>(c)) < 0.0)
        return error_reply(422, "resulting count is negative",
                           {{"field", c < n_categories ? "feature_deltas." + f.names[c] : std::string("total")},
                            {"value", edited(static_cast<Eigen::Index>(c))}});

    const auto& fm = store_.folds(dir, depth).folds[static_cast<std::size_t>(i)];
    const VectorXd baseline = model::forward(fm.model, fm.stats.apply(base), i);
    const VectorXd pred = evaluation::what_if(fm, edited, f.count_features, i);
    json features = json::object();
    for (std::size_t c = 0; c < f.names.size(); ++c) features[f.names[c]] = edited(static_cast<Eigen::Index>(c));
    return {200, {{"id", id}, {"direction", mobility::to_string(dir)}, {"depth", depth}, {"ids", f.ids},
                  {"baseline", to_array(baseline)}, {"prediction", to_array(pred)},
                  {"delta", to_array(pred - baseline)}, {"features", features}}};
  }

  std::uint64_t requests() const { return requests_.load(); }

 private:
  static Reply unknown_id(const std::string& id) { return error_reply(404, "unknown neighborhood id", {{"id", id}}); }

  static std::optional<Reply> parse_direction(const Query& q, Direction& out) {
    auto it = q.find("direction");
    if (it == q.end()) {
      out = Direction::to;
      return std::nullopt;
    }
    if (it->second == "to") out = Direction::to;
    else if (it->second == "from") out = Direction::from;
    else return error_reply(400, "direction must be 'to' or 'from'", {{"field", "direction"}});
    return std::nullopt;
  }

  std::optional<Reply> parse_depth(const Query& q, Direction dir, int& out) const {
    auto it = q.find("depth");
    if (it != q.end()) {
      try {
        std::size_t used = 0;
        out = std::stoi(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("depth");
      } catch (const std::exception&) {
        return error_reply(400, "depth must be an integer", {{"field", "depth"}});
      }
    }
    if (!store_.has_depth(dir, out))
      return error_reply(404, "no models for this depth", {{"field", "depth"}, {"depth", out}});
    return std::nullopt;
  }

  const ArtifactStore& store_;
  mutable std::atomic<std::uint64_t> requests_{0};
};

inline Query query_of(const httplib::Request& req) {
  Query q;
  for (const auto& [k, v] : req.params) q[k] = v;
  return q;
}

inline void send(httplib::Response& res, const Reply& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

/// Registers every route on `server`; `api` must outlive it.
inline void mount(httplib::Server& server, const Api& api, const ArtifactStore& store) {
  server.set_default_headers({{"X-Artifact-Version", store.version()}});
  server.Get("/api/health", [&](const httplib::Request&, httplib::Response& res) { send(res, api.health()); });
  server.Get("/api/neighborhoods",
             [&](const httplib::Request&, httplib::Response& res) { send(res, api.neighborhoods()); });
  server.Get("/api/od", [&](const httplib::Request& req, httplib::Response& res) { send(res, api.od(query_of(req))); });
  server.Get(R"(/api/estimate/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, api.estimate(req.matches[1], query_of(req)));
  });
  server.Get(R"(/api/importance/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, api.importance(req.matches[1], query_of(req)));
  });
  server.Post("/api/whatif", [&](const httplib::Request& req, httplib::Response& res) { send(res, api.whatif(req.body)); });
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    send(res, error_reply(res.status, "no such route", {{"path", req.path}}));
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    }
    send(res, error_reply(500, msg));
  });
}

}  // namespace mobinsight::service

#endif  // MOBINSIGHT_SERVICE_HPP
