#ifndef MOBINSIGHT_PIPELINE_HPP
#define MOBINSIGHT_PIPELINE_HPP

// Stage orchestration over a JSON manifest. Every stage reads declared
// inputs, writes its artifacts atomically under the output directory and
// logs one JSON line with the hashes of what it read and wrote.

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mobinsight/audit.hpp"
#include "mobinsight/baselines.hpp"
#include "mobinsight/evaluation.hpp"
#include "mobinsight/geo.hpp"
#include "mobinsight/io.hpp"
#include "mobinsight/mobility.hpp"
#include "mobinsight/model.hpp"
#include "mobinsight/places.hpp"
#include "mobinsight/semantics.hpp"
#include "mobinsight/synth.hpp"

namespace mobinsight::pipeline {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using mobility::Direction;

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"synth",    "ingest", "dedup",    "semantics",
                                                 "profile",  "odmatrix", "train",  "evaluate",
                                                 "audit",    "report"};
  return names;
}

namespace artifact {
inline constexpr const char* kRawPlaces = "raw_places.jsonl";
inline constexpr const char* kCanonical = "canonical_places.jsonl";
inline constexpr const char* kDedupSummary = "dedup_summary.json";
inline constexpr const char* kCategories = "place_categories.json";
inline constexpr const char* kProfiles = "profiles.csv";
inline constexpr const char* kGeometries = "neighborhoods.geojson";
inline constexpr const char* kHomes = "homes.json";
inline constexpr const char* kOdTo = "od_to.json";
inline constexpr const char* kOdFrom = "od_from.json";
inline constexpr const char* kOdSummary = "od_summary.json";
inline constexpr const char* kEvaluation = "evaluation.json";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kReportMd = "report.md";

inline std::string od(Direction d) { return d == Direction::to ? kOdTo : kOdFrom; }
inline std::string folds(Direction task, int depth) {
  return "folds_" + std::string(mobility::to_string(task)) + "_d" + std::to_string(depth) + ".json";
}
inline std::string trained(Direction task, int depth) {
  return "model_" + std::string(mobility::to_string(task)) + "_d" + std::to_string(depth) + ".json";
}
inline std::string importance(Direction task) {
  return "importance_" + std::string(mobility::to_string(task)) + ".json";
}
inline std::string ablation_profiles(const std::string& source) { return "profiles_wo_" + source + ".csv"; }
}  // namespace artifact

namespace model_name {
inline constexpr const char* kRandom = "Random";
inline constexpr const char* kAverage = "Average";
inline constexpr const char* kGravity = "Gravity";
inline constexpr const char* kVecDist = "VecDist";
inline constexpr const char* kPairwise = "Pairwise";
inline constexpr const char* kAblation = "NF_woPub_Dist";
inline constexpr const char* kNf = "NF_Dist";
inline const std::vector<std::string>& comparison_roster() {
  static const std::vector<std::string> r = {kRandom, kAverage, kGravity, kVecDist, kPairwise, kAblation, kNf};
  return r;
}
}  // namespace model_name

struct SourceSpec {
  std::string id;
  fs::path path;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> depth;
  std::optional<Direction> task;
};

/// Manifest paths are resolved against the manifest's own directory.
class Manifest {
 public:
  static Manifest load(const fs::path& path, const Overrides& ov = {}) {
    if (!fs::exists(path)) throw MissingArtifact(path);
    Manifest m;
    m.file_ = fs::absolute(path);
    m.base_ = m.file_.parent_path();
    m.doc_ = io::read_json(path);
    if (!m.doc_.is_object()) throw SchemaError(path.string(), 0, "manifest must be a JSON object");
    if (ov.seed) m.doc_["seed"] = *ov.seed;
    if (ov.depth) m.doc_["depth"] = *ov.depth;
    if (ov.task) m.doc_["tasks"] = json::array({mobility::to_string(*ov.task)});
    m.validate();
    return m;
  }

  static Manifest from_json(json doc, const fs::path& base) {
    Manifest m;
    m.base_ = fs::absolute(base);
    m.file_ = m.base_ / "manifest.json";
    m.doc_ = std::move(doc);
    m.validate();
    return m;
  }

  const json& doc() const { return doc_; }
  const fs::path& base() const { return base_; }
  const fs::path& file() const { return file_; }

  fs::path resolve(const std::string& rel) const {
    fs::path p(rel);
    return p.is_absolute() ? p : base_ / p;
  }

  /// Required input path; throws MissingArtifact when absent on disk.
  fs::path input(const std::string& key) const {
    if (!doc_.contains(key) || !doc_[key].is_string())
      throw SchemaError(file_.string(), 0, "manifest lacks path '" + key + "'");
    auto p = resolve(doc_[key].get<std::string>());
    if (!fs::exists(p)) throw MissingArtifact(p);
    return p;
  }
  bool has(const std::string& key) const { return doc_.contains(key) && !doc_[key].is_null(); }

  fs::path output_dir() const { return resolve(doc_.value("output_dir", std::string("out"))); }
  fs::path artifact(const std::string& name) const { return output_dir() / name; }
  /// Existing artifact; throws MissingArtifact naming the path otherwise.
  fs::path require(const std::string& name) const {
    auto p = artifact(name);
    if (!fs::exists(p)) throw MissingArtifact(p);
    return p;
  }

  std::vector<SourceSpec> sources() const {
    std::vector<SourceSpec> out;
    if (!doc_.contains("sources") || !doc_["sources"].is_array())
      throw SchemaError(file_.string(), 0, "manifest lacks 'sources' array");
    for (const auto& s : doc_["sources"]) {
      SourceSpec spec{s.at("id").get<std::string>(), resolve(s.at("path").get<std::string>())};
      if (!fs::exists(spec.path)) throw MissingArtifact(spec.path);
      out.push_back(std::move(spec));
    }
    return out;
  }

  std::vector<fs::path> cdr_files() const {
    std::vector<fs::path> out;
    if (!has("cdr")) throw SchemaError(file_.string(), 0, "manifest lacks 'cdr'");
    const auto& c = doc_["cdr"];
    auto add = [&](const json& v) {
      auto p = resolve(v.get<std::string>());
      if (!fs::exists(p)) throw MissingArtifact(p);
      out.push_back(p);
    };
    if (c.is_array()) for (const auto& v : c) add(v);
    else add(c);
    return out;
  }

  mobility::CdrMetadata cdr_metadata() const {
    mobility::CdrMetadata m;
    const json meta = doc_.value("cdr_metadata", json::object());
    m.utc_offset_s = meta.value("utc_offset_s", std::int64_t{0});
    if (meta.contains("window_start")) m.window_start = meta["window_start"].get<std::int64_t>();
    if (meta.contains("window_end")) m.window_end = meta["window_end"].get<std::int64_t>();
    return m;
  }

  std::uint64_t seed() const { return doc_.value("seed", std::uint64_t{0}); }
  int nf_depth() const { return doc_.value("depth", 3); }
  std::vector<int> depths() const { return doc_.value("depths", std::vector<int>{1, 2, 3, 4}); }
  std::vector<Direction> tasks() const {
    std::vector<Direction> out;
    for (const auto& t : doc_.value("tasks", std::vector<std::string>{"to", "from"}))
      out.push_back(mobility::parse_direction(t));
    return out;
  }
  model::KlDirection kl_direction() const {
    return model::parse_kl_direction(doc_.value("kl_direction", std::string("printed")));
  }
  std::string ablation_source() const { return doc_.value("ablation_source", std::string()); }
  double dedup_radius_m() const { return doc_.value("dedup_radius_m", 50.0); }
  unsigned workers() const { return doc_.value("workers", 0u); }
  int pairwise_depth() const { return doc_.value("pairwise_depth", 1); }
  int audit_repeats() const {
    return doc_.contains("audit") ? doc_["audit"].value("repeats", 10) : 10;
  }

  model::TrainConfig train_config() const {
    auto c = model::TrainConfig::from_json(doc_.value("train", json::object()));
    if (!doc_.value("train", json::object()).contains("seed")) c.seed = model::derive_seed(seed(), 101);
    return c;
  }

  semantics::SemanticsConfig semantics_config() const {
    semantics::SemanticsConfig c;
    const json s = doc_.value("semantics", json::object());
    c.dimensions = s.value("dimensions", c.dimensions);
    c.k_range = s.value("k_range", c.k_range);
    c.plateau_tolerance = s.value("plateau_tolerance", c.plateau_tolerance);
    c.kmeans_restarts = s.value("kmeans_restarts", c.kmeans_restarts);
    c.unit_rows = s.value("unit_rows", c.unit_rows);
    c.seed = s.value("seed", model::derive_seed(seed(), 202));
    if (s.contains("lemma_rules")) {
      const auto& lr = s["lemma_rules"];
      c.lemma_rules = semantics::LemmaRules::from_json(lr.is_string() ? io::read_json(resolve(lr.get<std::string>())) : lr);
    }
    return c;
  }

 private:
  void validate() const {
    const auto d = nf_depth();
    if (d < 1 || d > 4) throw SchemaError(file_.string(), 0, "depth must be in 1..4");
    for (int k : depths())
      if (k < 1 || k > 4) throw SchemaError(file_.string(), 0, "depths must be in 1..4");
  }

  fs::path file_, base_;
  json doc_;
};

// ---------------------------------------------------------------------------
// Stage bookkeeping

class StageRecord {
 public:
  StageRecord(std::string stage, const Manifest& m)
      : stage_(std::move(stage)), m_(m), start_(std::chrono::steady_clock::now()) {}

  fs::path read(const fs::path& p) {
    inputs_[rel(p)] = io::hash_file(p);
    return p;
  }
  void wrote(const fs::path& p) { outputs_[rel(p)] = io::hash_file(p); }
  void write_json(const std::string& name, const json& j, int indent = 1) {
    const auto p = m_.artifact(name);
    io::write_json(p, j, indent);
    wrote(p);
  }
  void write_text(const std::string& name, const std::string& text) {
    const auto p = m_.artifact(name);
    io::write_atomic(p, text);
    wrote(p);
  }
  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

  json finish() {
    json stamp = {{"stage", stage_}, {"seed", m_.seed()}, {"inputs", inputs_}, {"outputs", outputs_}};
    io::write_json(m_.artifact("stamps/" + stage_ + ".json"), stamp);
    json line = stamp;
    line["level"] = "info";
    line["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    for (auto& [k, v] : extra_.items()) line[k] = v;
    io::log_event(line);
    return stamp;
  }

 private:
  std::string rel(const fs::path& p) const {
    auto r = fs::proximate(p, m_.base());
    return r.generic_string();
  }
  std::string stage_;
  const Manifest& m_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, std::string> inputs_, outputs_;
  json extra_ = json::object();
};

// ---------------------------------------------------------------------------
// Shared in-memory steps

inline std::vector<geo::NeighborhoodGeometry> read_geometries(const Manifest& m, StageRecord* rec) {
  const auto p = m.input("geometries");
  if (rec) rec->read(p);
  return geo::load_geojson(p);
}

inline std::vector<places::RawPlace> ingest_sources(const Manifest& m, StageRecord* rec,
                                                    const std::string& exclude = {}) {
  std::vector<places::RawPlace> all;
  for (const auto& s : m.sources()) {
    if (s.id == exclude) continue;
    if (rec) rec->read(s.path);
    auto v = places::load_source_csv(s.path, s.id);
    all.insert(all.end(), v.begin(), v.end());
  }
  return all;
}

inline semantics::CategoryScheme read_scheme(const Manifest& m, StageRecord* rec) {
  if (!m.has("category_scheme")) {
    semantics::CategoryScheme s;
    s.categories = semantics::default_categories();
    return s;
  }
  const auto p = m.input("category_scheme");
  if (rec) rec->read(p);
  return semantics::CategoryScheme::from_json(io::read_json(p));
}

struct PlacePipeline {
  std::vector<places::RawPlace> raw;
  std::vector<places::CanonicalPlace> canonical;
  semantics::SemanticsResult semantics;
  semantics::ProfileResult profiles;
};

/// ingest -> dedup -> semantics -> profile in memory, optionally without
/// one source (the ablation runs this with the excluded source).
inline PlacePipeline run_place_pipeline(const Manifest& m, const std::string& exclude,
                                        StageRecord* rec) {
  PlacePipeline p;
  p.raw = ingest_sources(m, rec, exclude);
  p.canonical = places::resolve_duplicates(p.raw, m.dedup_radius_m());
  const auto scheme = read_scheme(m, rec);
  p.semantics = semantics::categorize_places(p.canonical, scheme, m.semantics_config());
  const auto geoms = read_geometries(m, rec);
  std::vector<semantics::CategorizedPlace> placed;
  for (std::size_t i = 0; i < p.canonical.size(); ++i)
    placed.push_back({p.canonical[i].location, p.semantics.place_category[i]});
  p.profiles = semantics::profile_neighborhoods(placed, p.semantics.scheme.categories.size(), geoms);
  return p;
}

inline json categories_to_json(const semantics::SemanticsResult& s,
                               std::span<const places::CanonicalPlace> canon, std::uint64_t seed) {
  json places = json::array();
  for (std::size_t i = 0; i < canon.size(); ++i)
    places.push_back({{"canonical_id", canon[i].canonical_id},
                      {"cluster", s.clustering.assignment[i]},
                      {"category", s.scheme.categories[static_cast<std::size_t>(s.place_category[i])]}});
  return {{"seed", seed},
          {"scheme", s.scheme.to_json()},
          {"k", s.sweep.chosen},
          {"k_sweep", {{"k", s.sweep.ks}, {"silhouette", s.sweep.scores}}},
          {"dimensions", s.embedding.d},
          {"explained_variance_ratio", s.embedding.explained_variance_ratio},
          {"vocabulary_size", s.vocab.terms.size()},
          {"empty_rows", s.matrix.empty_rows()},
          {"places", places}};
}

/// Features (profile counts + centroid) in geometry order.
inline evaluation::FeatureTable read_features(const fs::path& profiles_csv,
                                              std::span<const geo::NeighborhoodGeometry> geoms) {
  const auto table = semantics::load_profiles_csv(profiles_csv);
  std::map<std::string, const semantics::NeighborhoodProfile*> by_id;
  for (const auto& p : table.profiles) by_id[p.neighborhood_id] = &p;
  std::vector<semantics::NeighborhoodProfile> ordered;
  for (const auto& g : geoms) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw SchemaError(profiles_csv.string(), 0, "no profile for neighborhood " + g.id);
    ordered.push_back(*it->second);
  }
  return evaluation::make_features(ordered, table.categories);
}

inline mobility::OdMatrix read_od(const fs::path& p, std::span<const geo::NeighborhoodGeometry> geoms) {
  auto od = mobility::OdMatrix::from_json(io::read_json(p));
  if (od.ids.size() != geoms.size()) throw SchemaError(p.string(), 0, "O-D order differs from geometries");
  for (std::size_t i = 0; i < geoms.size(); ++i)
    if (od.ids[i] != geoms[i].id) throw SchemaError(p.string(), 0, "O-D ids differ from geometry order");
  return od;
}

inline baselines::DistanceMatrix read_distances(const Manifest& m,
                                                std::span<const geo::NeighborhoodGeometry> geoms,
                                                StageRecord* rec) {
  if (!m.has("distances")) return baselines::haversine_distances(geoms);
  const auto p = m.input("distances");
  if (rec) rec->read(p);
  std::vector<std::string> ids;
  for (const auto& g : geoms) ids.push_back(g.id);
  return baselines::load_distance_csv(p, m.doc().value("distance_unit", std::string("minutes"))).reordered(ids);
}

inline json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json loocv_json(const evaluation::LoocvResult& r) {
  return {{"mean_kl", r.mean_kl}, {"fold_kl", r.fold_kl}};
}

inline json fold_artifact(Direction task, int depth, const evaluation::FeatureTable& f,
                          const evaluation::LoocvResult& r, const model::TrainConfig& cfg,
                          model::KlDirection dir) {
  json folds = json::array();
  for (std::size_t i = 0; i < r.folds.size(); ++i)
    folds.push_back({{"neighborhood_id", f.ids[i]},
                     {"kl", r.fold_kl[i]},
                     {"seed", model::derive_seed(cfg.seed, i)},
                     {"prediction", vec_json(r.predictions[i])},
                     {"stats", r.folds[i].stats.to_json()},
                     {"model", r.folds[i].model.to_json()}});
  return {{"task", mobility::to_string(task)}, {"depth", depth},     {"ids", f.ids},
          {"feature_names", f.names},          {"count_features", f.count_features},
          {"kl_direction", model::to_string(dir)}, {"train_config", cfg.to_json()},
          {"mean_kl", r.mean_kl},              {"folds", folds}};
}

struct FoldArtifact {
  Direction task = Direction::to;
  int depth = 1;
  std::vector<std::string> ids, feature_names;
  std::size_t count_features = 0;
  model::KlDirection kl_direction = model::KlDirection::printed;
  std::vector<evaluation::FoldModel> folds;
  std::vector<double> fold_kl;

  static FoldArtifact from_json(const json& j) {
    FoldArtifact a;
    a.task = mobility::parse_direction(j.at("task"));
    a.depth = j.at("depth");
    a.ids = j.at("ids").get<std::vector<std::string>>();
    a.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    a.count_features = j.at("count_features");
    a.kl_direction = model::parse_kl_direction(j.value("kl_direction", std::string("printed")));
    for (const auto& f : j.at("folds")) {
      a.folds.push_back({model::MlpModel::from_json(f.at("model")), model::Standardizer::from_json(f.at("stats"))});
      a.fold_kl.push_back(f.at("kl"));
    }
    if (a.folds.size() != a.ids.size()) throw Error("fold artifact: one fold per neighborhood expected");
    return a;
  }
};

// ---------------------------------------------------------------------------
// Stages

inline json stage_synth(const Manifest& m) {
  StageRecord rec("synth", m);
  const json spec = m.doc().value("synth", json::object());
  synth::SynthConfig base;
  json cfg_json = base.to_json();
  cfg_json.merge_patch(spec.value("config", json::object()));
  if (m.doc().contains("seed")) cfg_json["seed"] = m.seed();
  const auto cfg = synth::SynthConfig::from_json(cfg_json);
  const fs::path dir = m.resolve(spec.value("output_dir", std::string("city")));
  const auto g = synth::generate(cfg);
  synth::write_city(g, dir);
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) rec.wrote(e.path());
  rec.note("records", g.cdr.records.size());
  rec.note("places", g.places.truth.size());
  return rec.finish();
}

inline json stage_ingest(const Manifest& m) {
  StageRecord rec("ingest", m);
  const auto raw = ingest_sources(m, &rec);
  rec.write_text(artifact::kRawPlaces, places::to_jsonl<places::RawPlace>(raw, places::raw_to_json));
  rec.note("records", raw.size());
  return rec.finish();
}

inline json stage_dedup(const Manifest& m) {
  StageRecord rec("dedup", m);
  const auto raw = places::read_jsonl(rec.read(m.require(artifact::kRawPlaces)), places::raw_from_json);
  const auto canon = places::resolve_duplicates(raw, m.dedup_radius_m());
  rec.write_text(artifact::kCanonical, places::to_jsonl<places::CanonicalPlace>(canon, places::canonical_to_json));
  std::size_t merged = 0;
  for (const auto& c : canon) merged += c.member_count > 1;
  rec.write_json(artifact::kDedupSummary, {{"raw", raw.size()},
                                           {"canonical", canon.size()},
                                           {"merged_groups", merged},
                                           {"radius_m", m.dedup_radius_m()},
                                           {"source_count", places::count_sources(raw)}});
  return rec.finish();
}

inline json stage_semantics(const Manifest& m) {
  StageRecord rec("semantics", m);
  const auto canon = places::read_jsonl(rec.read(m.require(artifact::kCanonical)), places::canonical_from_json);
  const auto scheme = read_scheme(m, &rec);
  const auto cfg = m.semantics_config();
  const auto s = semantics::categorize_places(canon, scheme, cfg);
  rec.write_json(artifact::kCategories, categories_to_json(s, canon, cfg.seed));
  rec.note("k", s.sweep.chosen);
  return rec.finish();
}

inline json stage_profile(const Manifest& m) {
  StageRecord rec("profile", m);
  const auto canon = places::read_jsonl(rec.read(m.require(artifact::kCanonical)), places::canonical_from_json);
  const auto cats = io::read_json(rec.read(m.require(artifact::kCategories)));
  const auto scheme = semantics::CategoryScheme::from_json(cats.at("scheme"));
  const auto& rows = cats.at("places");
  if (rows.size() != canon.size())
    throw SchemaError(m.artifact(artifact::kCategories).string(), 0, "place count differs from canonical places");
  std::vector<semantics::CategorizedPlace> placed;
  for (std::size_t i = 0; i < canon.size(); ++i) {
    if (rows[i].at("canonical_id") != canon[i].canonical_id)
      throw SchemaError(m.artifact(artifact::kCategories).string(), i + 1, "canonical id order mismatch");
    placed.push_back({canon[i].location, scheme.category_index(rows[i].at("category"))});
  }
  const auto geoms = read_geometries(m, &rec);
  const auto prof = semantics::profile_neighborhoods(placed, scheme.categories.size(), geoms);
  rec.write_text(artifact::kProfiles, semantics::profiles_to_csv(prof.profiles, scheme.categories));
  rec.write_json(artifact::kGeometries, geo::to_geojson(geoms));
  rec.note("assigned", prof.assigned);
  rec.note("excluded", prof.excluded);
  return rec.finish();
}

inline json stage_odmatrix(const Manifest& m) {
  StageRecord rec("odmatrix", m);
  const auto geoms = read_geometries(m, &rec);
  const auto sites = mobility::load_bts_csv(rec.read(m.input("bts")), geoms);
  const auto meta = m.cdr_metadata();
  std::vector<mobility::CdrRecord> records;
  for (const auto& f : m.cdr_files()) {
    auto v = mobility::load_cdr_csv(rec.read(f), meta);
    records.insert(records.end(), v.begin(), v.end());
  }
  const auto homes = mobility::assign_homes(records, sites, meta.utc_offset_s);
  const auto build = mobility::build_od_matrix(records, homes, sites, geoms, meta.utc_offset_s);
  rec.write_json(artifact::kHomes, mobility::homes_to_json(homes, geoms));
  rec.write_json(artifact::kOdTo, build.matrix.to_json());
  rec.write_json(artifact::kOdFrom, build.matrix.transposed().to_json());
  std::size_t assigned = 0;
  std::map<std::string, std::size_t> discarded;
  for (const auto& h : homes) {
    if (h.is_assigned()) ++assigned;
    else ++discarded[mobility::to_string(h.reason)];
  }
  json summary = {{"records", records.size()},    {"users", homes.size()},
                  {"assigned", assigned},         {"discarded", discarded},
                  {"rejected_records", build.rejected_records},
                  {"total_visits", build.matrix.total()}};
  try {
    const auto c = mobility::population_correlation(homes, geoms);
    summary["population_correlation"] = {{"r", c.r}, {"p_value", c.p_value}, {"n", c.n}};
  } catch (const Error& e) {
    summary["population_correlation"] = {{"error", e.what()}};
  }
  rec.write_json(artifact::kOdSummary, summary);
  return rec.finish();
}

inline MatrixXd training_targets_for(const Manifest& m, Direction task,
                                     std::span<const geo::NeighborhoodGeometry> geoms, StageRecord& rec) {
  return evaluation::task_targets(read_od(rec.read(m.require(artifact::od(Direction::to))), geoms), task);
}

/// Fits the model on every neighborhood (no held-out fold).
inline json stage_train(const Manifest& m) {
  StageRecord rec("train", m);
  const auto geoms = read_geometries(m, &rec);
  const auto f = read_features(rec.read(m.require(artifact::kProfiles)), geoms);
  const auto cfg = m.train_config();
  const int depth = m.nf_depth();
  for (auto task : m.tasks()) {
    const MatrixXd targets = training_targets_for(m, task, geoms, rec);
    model::Dataset data;
    const auto stats = model::Standardizer::fit(f.values);
    data.inputs = stats.apply_rows(f.values);
    data.targets = targets;
    for (Eigen::Index i = 0; i < targets.rows(); ++i) data.self.push_back(static_cast<int>(i));
    const auto res = model::train(cfg, data, depth);
    rec.write_json(artifact::trained(task, depth),
                   {{"task", mobility::to_string(task)}, {"depth", depth}, {"ids", f.ids},
                    {"feature_names", f.names}, {"train_config", cfg.to_json()},
                    {"initial_loss", res.initial_loss}, {"final_loss", res.final_loss},
                    {"stats", stats.to_json()}, {"model", res.model.to_json()}}, -1);
  }
  return rec.finish();
}

/// LOOCV of every model in the roster for each task, the depth sweep and
/// the source ablation.
inline json stage_evaluate(const Manifest& m) {
  StageRecord rec("evaluate", m);
  const auto geoms = read_geometries(m, &rec);
  const auto features = read_features(rec.read(m.require(artifact::kProfiles)), geoms);
  const auto od = read_od(rec.read(m.require(artifact::kOdTo)), geoms);
  const auto dist = read_distances(m, geoms, &rec);
  const auto cfg = m.train_config();
  const auto dir = m.kl_direction();
  const unsigned workers = m.workers();
  const int nf_depth = m.nf_depth();
  auto depths = m.depths();
  if (std::find(depths.begin(), depths.end(), nf_depth) == depths.end()) depths.push_back(nf_depth);
  std::sort(depths.begin(), depths.end());

  std::optional<evaluation::FeatureTable> ablated;
  const std::string ablation = m.ablation_source();
  if (!ablation.empty()) {
    const auto pp = run_place_pipeline(m, ablation, &rec);
    const auto csv = semantics::profiles_to_csv(pp.profiles.profiles, pp.semantics.scheme.categories);
    rec.write_text(artifact::ablation_profiles(ablation), csv);
    ablated = read_features(m.artifact(artifact::ablation_profiles(ablation)), geoms);
  }

  std::vector<double> population;
  for (const auto& g : geoms) population.push_back(g.population);
  const MatrixXd counts = features.values.leftCols(static_cast<Eigen::Index>(features.count_features));

  json tasks = json::object();
  for (auto task : m.tasks()) {
    const MatrixXd targets = evaluation::task_targets(od, task);
    json models = json::object();
    const auto rnd = baselines::random_model(targets.rows(), model::derive_seed(m.seed(), 303));
    evaluation::LoocvResult rr;
    for (Eigen::Index i = 0; i < targets.rows(); ++i)
      rr.fold_kl.push_back(model::score(rnd.row(i).transpose(), targets.row(i).transpose(), dir));
    rr.mean_kl = evaluation::mean_of(rr.fold_kl);
    models[model_name::kRandom] = loocv_json(rr);

    const auto avg = evaluation::loocv_predictor(
        targets, [&](Eigen::Index i, const std::vector<Eigen::Index>& rows) {
          return baselines::average_model(targets, rows, i);
        }, dir, 1);
    models[model_name::kAverage] = loocv_json(avg);

    // Gravity and VecDist are symmetric in (i, j), so the same rows serve both tasks.
    const auto grid = m.doc().value("gravity_grid", baselines::default_gravity_grid());
    const auto gs = baselines::gravity_grid_search(population, dist.cost, targets, grid, dir);
    const MatrixXd grav = baselines::normalize_each_row(baselines::gravity_model(population, dist.cost, gs.best_g));
    evaluation::LoocvResult gr;
    for (Eigen::Index i = 0; i < targets.rows(); ++i)
      gr.fold_kl.push_back(model::score(grav.row(i).transpose(), targets.row(i).transpose(), dir));
    gr.mean_kl = evaluation::mean_of(gr.fold_kl);
    models[model_name::kGravity] = loocv_json(gr);
    models[model_name::kGravity]["g"] = gs.best_g;

    const MatrixXd vd = baselines::vecdist_model(counts, dist.cost);
    evaluation::LoocvResult vr;
    for (Eigen::Index i = 0; i < targets.rows(); ++i)
      vr.fold_kl.push_back(model::score(vd.row(i).transpose(), targets.row(i).transpose(), dir));
    vr.mean_kl = evaluation::mean_of(vr.fold_kl);
    models[model_name::kVecDist] = loocv_json(vr);

    auto pcfg = cfg;
    pcfg.seed = model::derive_seed(cfg.seed, 404);
    const auto pw = baselines::pairwise_loocv(features.values, targets, pcfg, m.pairwise_depth(), dir, workers);
    models[model_name::kPairwise] = loocv_json(pw);
    models[model_name::kPairwise]["depth"] = m.pairwise_depth();

    json by_depth = json::object();
    for (int d : depths) {
      evaluation::LoocvOptions opt;
      opt.depth = d;
      opt.kl_direction = dir;
      opt.keep_models = true;
      opt.workers = workers;
      const auto r = evaluation::loocv(features.values, targets, cfg, opt);
      by_depth[std::to_string(d)] = loocv_json(r);
      rec.write_json(artifact::folds(task, d), fold_artifact(task, d, features, r, cfg, dir), -1);
      if (d == nf_depth) {
        models[model_name::kNf] = loocv_json(r);
        models[model_name::kNf]["depth"] = d;
      }
    }
    if (ablated) {
      evaluation::LoocvOptions opt;
      opt.depth = nf_depth;
      opt.kl_direction = dir;
      opt.workers = workers;
      const auto r = evaluation::loocv(ablated->values, targets, cfg, opt);
      models[model_name::kAblation] = loocv_json(r);
      models[model_name::kAblation]["excluded_source"] = ablation;
      models[model_name::kAblation]["depth"] = nf_depth;
    }
    tasks[mobility::to_string(task)] = {{"models", models}, {"depths", by_depth}};
  }
  rec.write_json(artifact::kEvaluation, {{"seed", m.seed()},
                                         {"kl_direction", model::to_string(dir)},
                                         {"nf_depth", nf_depth},
                                         {"ablation_source", ablation},
                                         {"neighborhood_ids", features.ids},
                                         {"feature_names", features.names},
                                         {"train_config", cfg.to_json()},
                                         {"tasks", tasks}});
  return rec.finish();
}

inline json importance_json(const std::vector<audit::ImportanceReport>& reports,
                            std::span<const geo::NeighborhoodGeometry> geoms, Direction task, int depth,
                            int repeats, std::uint64_t seed) {
  json per = json::array();
  for (const auto& r : reports) per.push_back(audit::to_json(r));
  json global = json::array();
  for (std::size_t f = 0; f < reports.front().features.size(); ++f) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(r.features[f].mean_pct);
    const auto s = audit::summarize(reports.front().features[f].name, v);
    global.push_back({{"name", s.name}, {"mean_pct", s.mean_pct}, {"std_pct", s.std_pct}, {"repeats", repeats}});
  }
  json out = {{"task", mobility::to_string(task)}, {"depth", depth},       {"repeats", repeats},
              {"seed", seed},                      {"interpretation", "correlational"},
              {"global", {{"neighborhood_id", "global"}, {"features", global}}},
              {"neighborhoods", per}};
  std::vector<double> var, pop;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    var.push_back(reports[i].variance);
    pop.push_back(geoms[i].population);
  }
  try {
    const auto c = stats::pearson(var, pop);
    out["variance_vs_population"] = {{"r", c.r}, {"p_value", c.p_value}, {"n", c.n}};
  } catch (const Error& e) {
    out["variance_vs_population"] = {{"error", e.what()}};
  }
  return out;
}

inline json stage_audit(const Manifest& m) {
  StageRecord rec("audit", m);
  const auto geoms = read_geometries(m, &rec);
  const auto features = read_features(rec.read(m.require(artifact::kProfiles)), geoms);
  const auto od = read_od(rec.read(m.require(artifact::kOdTo)), geoms);
  const int depth = m.nf_depth();
  const int repeats = m.audit_repeats();
  const auto seed = model::derive_seed(m.seed(), 505);
  for (auto task : m.tasks()) {
    const auto folds = FoldArtifact::from_json(io::read_json(rec.read(m.require(artifact::folds(task, depth)))));
    if (folds.ids != features.ids) throw Error("audit: fold artifact ids differ from profiles");
    const MatrixXd targets = evaluation::task_targets(od, task);
    auto reports = evaluation::run_folds<audit::ImportanceReport>(
        folds.folds.size(),
        [&](std::size_t i) {
          return audit::neighborhood_importance(folds.folds[i], features, targets,
                                                static_cast<Eigen::Index>(i), repeats, seed,
                                                folds.kl_direction);
        },
        m.workers());
    rec.write_json(artifact::importance(task), importance_json(reports, geoms, task, depth, repeats, seed));
  }
  return rec.finish();
}

inline std::string fmt(double v, int prec = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

/// Model comparison and depth sweep tables from the evaluation artifact.
inline json build_report(const json& ev) {
  json comparison = json::array(), depth_sweep = json::array();
  const auto& tasks = ev.at("tasks");
  for (const auto& name : model_name::comparison_roster()) {
    json row = {{"model", name}};
    for (const auto& [t, body] : tasks.items())
      row[t] = body.at("models").contains(name) ? json(body["models"][name]["mean_kl"].get<double>()) : json(nullptr);
    comparison.push_back(row);
  }
  std::set<int> depths;
  for (const auto& [t, body] : tasks.items())
    for (const auto& [d, v] : body.at("depths").items()) depths.insert(std::stoi(d));
  for (int d : depths) {
    json row = {{"depth", d}, {"model", "NF_Dist(" + std::to_string(d) + ")"}};
    for (const auto& [t, body] : tasks.items()) {
      const auto key = std::to_string(d);
      row[t] = body["depths"].contains(key) ? json(body["depths"][key]["mean_kl"].get<double>()) : json(nullptr);
    }
    depth_sweep.push_back(row);
  }
  json improvements = json::object();
  for (const auto& [t, body] : tasks.items()) {
    const auto& ms = body.at("models");
    if (!ms.contains(model_name::kNf)) continue;
    const double nf = ms[model_name::kNf]["mean_kl"];
    json imp = json::object();
    for (const auto& [name, v] : ms.items())
      if (name != model_name::kNf) imp[name] = (v["mean_kl"].get<double>() - nf) / v["mean_kl"].get<double>() * 100.0;
    improvements[t] = imp;
  }
  return {{"kl_direction", ev.value("kl_direction", "printed")},
          {"nf_depth", ev.value("nf_depth", 0)},
          {"comparison", comparison},
          {"depth_sweep", depth_sweep},
          {"relative_improvement_pct", improvements}};
}

inline std::string report_markdown(const json& rep) {
  std::vector<std::string> task_names;
  for (const auto& [k, v] : rep.at("comparison").front().items())
    if (k != "model") task_names.push_back(k);
  std::sort(task_names.begin(), task_names.end(), [](const auto& a, const auto& b) { return a > b; });
  auto table = [&](const json& rows, const std::string& title) {
    std::string s = "## " + title + "\n\n| Model |";
    for (const auto& t : task_names) s += " " + t + " |";
    s += "\n|---|";
    for (std::size_t i = 0; i < task_names.size(); ++i) s += "---:|";
    s += "\n";
    for (const auto& r : rows) {
      s += "| " + r.at("model").get<std::string>() + " |";
      for (const auto& t : task_names) s += " " + (r[t].is_null() ? std::string("n/a") : fmt(r[t].get<double>())) + " |";
      s += "\n";
    }
    return s + "\n";
  };
  std::string md = "# Mean LOOCV KL divergence (nats, " + rep.at("kl_direction").get<std::string>() + ")\n\n";
  md += table(rep.at("comparison"), "Performance comparison (NF_Dist depth " +
                                    std::to_string(rep.at("nf_depth").get<int>()) + ")");
  md += table(rep.at("depth_sweep"), "Effect of the number of layers");
  return md;
}

inline json stage_report(const Manifest& m) {
  StageRecord rec("report", m);
  const auto ev = io::read_json(rec.read(m.require(artifact::kEvaluation)));
  const auto rep = build_report(ev);
  rec.write_json(artifact::kReportJson, rep);
  rec.write_text(artifact::kReportMd, report_markdown(rep));
  return rec.finish();
}

inline json run_stage(const std::string& name, const Manifest& m) {
  if (name == "synth") return stage_synth(m);
  if (name == "ingest") return stage_ingest(m);
  if (name == "dedup") return stage_dedup(m);
  if (name == "semantics") return stage_semantics(m);
  if (name == "profile") return stage_profile(m);
  if (name == "odmatrix") return stage_odmatrix(m);
  if (name == "train") return stage_train(m);
  if (name == "evaluate") return stage_evaluate(m);
  if (name == "audit") return stage_audit(m);
  if (name == "report") return stage_report(m);
  throw Error("unknown stage '" + name + "'");
}

/// Exit status: 0 success, 2 missing artifact, 3 schema violation, 1 other.
inline int run_stage_status(const std::string& name, const fs::path& manifest, const Overrides& ov = {}) {
  try {
    run_stage(name, Manifest::load(manifest, ov));
    return 0;
  } catch (const MissingArtifact& e) {
    io::log_event({{"level", "error"}, {"stage", name}, {"kind", "missing_artifact"},
                   {"path", e.path().string()}, {"message", e.what()}});
    return 2;
  } catch (const SchemaError& e) {
    io::log_event({{"level", "error"}, {"stage", name}, {"kind", "schema"}, {"file", e.file()},
                   {"row", e.row()}, {"message", e.what()}});
    return 3;
  } catch (const std::exception& e) {
    io::log_event({{"level", "error"}, {"stage", name}, {"message", e.what()}});
    return 1;
  }
}

}  // namespace mobinsight::pipeline

#endif  // MOBINSIGHT_PIPELINE_HPP
