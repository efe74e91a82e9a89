#include <gtest/gtest.h>

#include <sys/wait.h>

#include "mobinsight/io.hpp"
#include "support.hpp"

using namespace mobinsight;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(MOBINSIGHT_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("frobnicate"), 0);
  testsupport::TempDir dir("cli_usage");
  io::write_json(dir / "m.json", json::object());
  EXPECT_NE(run("train --manifest " + q(dir / "m.json") + " --depth 9"), 0);
  EXPECT_NE(run("train --manifest " + q(dir / "m.json") + " --task sideways"), 0);
}

TEST(Cli, ExitCodes) {
  testsupport::TempDir dir("cli_codes");
  EXPECT_EQ(run("ingest --manifest " + q(dir / "absent.json")), 2);
  EXPECT_EQ(run("serve --artifacts-dir " + q(dir / "nothing") + " --port 0"), 2);
  synth::write_city(synth::generate(testsupport::small_city_config()), dir.path());
  EXPECT_EQ(run("train --manifest " + q(dir / "manifest.json")), 2);
  io::write_atomic(dir / "bts.csv", "bts_id,lat,lon\nB0101,91.5,2.0\n");
  EXPECT_EQ(run("odmatrix --manifest " + q(dir / "manifest.json")), 3);
}

TEST(Cli, SynthThenAllProducesTheReport) {
  testsupport::TempDir dir("cli_all");
  io::write_json(dir / "m.json", {{"seed", 11}, {"synth", {{"output_dir", "city"}, {"config", testsupport::small_city_config().to_json()}}}});
  ASSERT_EQ(run("synth --manifest " + q(dir / "m.json")), 0);
  auto m = io::read_json(dir / "city" / "manifest.json");
  m["train"] = {{"epochs", 20}};
  m["depths"] = {1};
  m["depth"] = 1;
  m["audit"] = {{"repeats", 2}};
  io::write_json(dir / "city" / "manifest.json", m);
  ASSERT_EQ(run("all --manifest " + q(dir / "city" / "manifest.json") + " --task to"), 0);
  const auto ev = io::read_json(dir / "city" / "out" / "evaluation.json");
  EXPECT_TRUE(ev["tasks"].contains("to"));
  EXPECT_FALSE(ev["tasks"].contains("from"));
  EXPECT_TRUE(std::filesystem::exists(dir / "city" / "out" / "report.md"));
}
