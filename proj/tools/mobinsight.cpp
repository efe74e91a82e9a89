#include <CLI11.hpp>
#include <csignal>
#include <iostream>

#include "mobinsight/pipeline.hpp"
#include "mobinsight/service.hpp"

namespace {

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

int serve(const std::string& dir, const std::string& host, int port) {
  using namespace mobinsight;
  try {
    const auto store = service::ArtifactStore::load(dir);
    const service::Api api(store);
    httplib::Server server;
    service::mount(server, api, store);
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
      io::log_event({{"level", "error"}, {"stage", "serve"}, {"message", "cannot bind"}, {"host", host}, {"port", port}});
      return 1;
    }
    io::log_event({{"level", "info"}, {"stage", "serve"}, {"host", host}, {"port", bound},
                   {"version", store.version()}, {"artifacts_dir", dir}});
    server.listen_after_bind();
    return 0;
  } catch (const MissingArtifact& e) {
    io::log_event({{"level", "error"}, {"stage", "serve"}, {"kind", "missing_artifact"}, {"path", e.path().string()},
                   {"message", e.what()}});
    return 2;
  } catch (const SchemaError& e) {
    io::log_event({{"level", "error"}, {"stage", "serve"}, {"kind", "schema"}, {"file", e.file()},
                   {"row", e.row()}, {"message", e.what()}});
    return 3;
  } catch (const std::exception& e) {
    io::log_event({{"level", "error"}, {"stage", "serve"}, {"message", e.what()}});
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace mobinsight;
  CLI::App app{"Neighborhood mobility pipeline"};
  app.require_subcommand(1);

  std::string manifest;
  std::optional<std::uint64_t> seed;
  std::optional<int> depth;
  std::optional<std::string> task;
  std::vector<std::string> chosen;

  auto add_stage = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--manifest", manifest, "Run manifest (JSON)")->required();
    sub->add_option("--seed", seed, "Override the manifest seed");
    sub->add_option("--depth", depth, "NF model depth (1-4)")->check(CLI::Range(1, 4));
    sub->add_option("--task", task, "Restrict to one task")->check(CLI::IsMember({"to", "from"}));
    sub->callback([&, name] { chosen.push_back(name); });
  };
  add_stage("synth", "Generate a synthetic city with ground truth");
  add_stage("ingest", "Read every place source into raw_places.jsonl");
  add_stage("dedup", "Merge duplicate places across sources");
  add_stage("semantics", "Cluster place descriptions into categories");
  add_stage("profile", "Count categorized places per neighborhood");
  add_stage("odmatrix", "Detect homes and count neighborhood visits");
  add_stage("train", "Fit the NF model on all neighborhoods");
  add_stage("evaluate", "Leave-one-out comparison of all models");
  add_stage("audit", "Permutation importance of the fold models");
  add_stage("report", "Render the comparison tables");
  auto* all = app.add_subcommand("all", "Run every stage after synth in order");
  all->add_option("--manifest", manifest, "Run manifest (JSON)")->required();
  all->add_option("--seed", seed, "Override the manifest seed");
  all->add_option("--depth", depth, "NF model depth (1-4)")->check(CLI::Range(1, 4));
  all->add_option("--task", task, "Restrict to one task")->check(CLI::IsMember({"to", "from"}));

  std::string artifacts_dir = "out";
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* srv = app.add_subcommand("serve", "Serve the artifacts over HTTP");
  srv->add_option("--artifacts-dir", artifacts_dir, "Output directory of a pipeline run");
  srv->add_option("--port", port, "TCP port, 0 picks a free one")->check(CLI::Range(0, 65535));
  srv->add_option("--host", host, "Bind address");

  CLI11_PARSE(app, argc, argv);

  if (srv->parsed()) return serve(artifacts_dir, host, port);

  pipeline::Overrides ov;
  ov.seed = seed;
  ov.depth = depth;
  if (task) ov.task = mobility::parse_direction(*task);
  if (all->parsed()) {
    for (const auto& s : pipeline::stage_names()) {
      if (s == "synth") continue;
      if (int rc = pipeline::run_stage_status(s, manifest, ov); rc != 0) return rc;
    }
    return 0;
  }
  return pipeline::run_stage_status(chosen.front(), manifest, ov);
}
