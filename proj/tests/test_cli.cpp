#include "dilate/cli.hpp"
#include "dilate/io.hpp"
#include "dilate/synth.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <filesystem>

namespace dilate {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / "dilate_cli_test");
    fs::remove_all(*root_);
    fs::create_directories(*root_);
    ASSERT_EQ(cli::run({"gen-data", "--profile", "ci", "--count", "2", "--seed", "1", "--queries", "800", "--points",
                        "1500", "--out", (*root_ / "d").string()}),
              0);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
  }
  static fs::path path(const std::string& p) { return *root_ / p; }
  static fs::path* root_;
};
fs::path* Cli::root_ = nullptr;

json manifest(const fs::path& dir) { return json::parse(io::read_text(dir / "manifest.json")); }

TEST_F(Cli, GenDataWritesSubjectsAndManifest) {
  const auto dirs = list_subjects(path("d"));
  ASSERT_EQ(dirs.size(), 2u);
  for (const auto& d : dirs) {
    for (const char* f : {"inner.obj", "outer.obj", "params.json", "input.xyz", "queries.xyz"}) {
      EXPECT_TRUE(fs::exists(d / f)) << d / f;
    }
  }
  EXPECT_TRUE(fs::exists(path("d") / "body.json"));
  const json m = manifest(path("d"));
  ASSERT_EQ(m.at("runs").size(), 1u);
  const json& run = m.at("runs")[0];
  EXPECT_EQ(run.at("command"), "gen-data");
  EXPECT_EQ(run.at("library_version"), std::string(cli::kVersion));
  EXPECT_EQ(run.at("config").at("count"), "2");
  EXPECT_FALSE(run.at("config_hash").get<std::string>().empty());
  EXPECT_TRUE(run.at("seeds").contains("data"));
  EXPECT_TRUE(run.contains("timings_s"));
  EXPECT_FALSE(run.at("artifacts").empty());
}

TEST_F(Cli, GenDataIsReproducible) {
  ASSERT_EQ(cli::run({"gen-data", "--profile", "ci", "--count", "2", "--seed", "1", "--queries", "800", "--points",
                      "1500", "--out", path("d2").string()}),
            0);
  for (const char* f : {"subject_0000/outer.obj", "subject_0001/queries.xyz", "subject_0001/params.json"}) {
    EXPECT_EQ(io::read_text(path("d") / f), io::read_text(path("d2") / f)) << f;
  }
  EXPECT_EQ(manifest(path("d")).at("runs")[0].at("artifacts"), manifest(path("d2")).at("runs")[0].at("artifacts"));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli::run({"gen-data", "--out", path("x").string(), "--bogus-flag"}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"no-such-command"}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"gen-data", "--count", "0", "--out", path("x").string()}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"eval", "--report", "r.json"}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"--profile", "huge", "gen-data", "--out", path("x").string()}), cli::kExitUsage);
  EXPECT_EQ(cli::run({"--help"}), cli::kExitOk);
  EXPECT_FALSE(fs::exists(path("x")));
}

TEST_F(Cli, MissingInputExitsOne) {
  EXPECT_EQ(cli::run({"train", "--data", path("nowhere").string(), "--out", path("w.json").string()}),
            cli::kExitDomain);
}

TEST_F(Cli, EvalTopologyMismatchExitsOne) {
  io::write_obj(path("bad_mesh.obj"), test::icosphere(0.5, 2));
  EXPECT_EQ(cli::run({"eval", "--pred-prefix", path("bad").string(), "--gt-dir", (path("d") / "subject_0000").string(),
                      "--report", path("bad_report.json").string()}),
            cli::kExitDomain);
  EXPECT_FALSE(fs::exists(path("bad_report.json")));
}

TEST_F(Cli, ConfigFileFeedsFlagsAndCommandLineWins) {
  io::write_text(path("cfg.json"), R"({"count": 1, "seed": 5, "queries": 300, "points": 400})");
  ASSERT_EQ(cli::run({"gen-data", "--config", path("cfg.json").string(), "--out", path("c1").string()}), 0);
  EXPECT_EQ(list_subjects(path("c1")).size(), 1u);
  EXPECT_EQ(manifest(path("c1")).at("runs")[0].at("config").at("seed"), "5");
  ASSERT_EQ(cli::run({"gen-data", "--config", path("cfg.json").string(), "--count", "2", "--out", path("c2").string()}),
            0);
  EXPECT_EQ(list_subjects(path("c2")).size(), 2u);
  io::write_text(path("broken.json"), "[1, 2]");
  EXPECT_EQ(cli::run({"gen-data", "--config", path("broken.json").string(), "--out", path("c3").string()}),
            cli::kExitUsage);
}

TEST_F(Cli, OracleRegisterReposeAndEval) {
  const fs::path subject = path("d") / "subject_0000";
  const std::string prefix = path("fit/s0").string();
  ASSERT_EQ(cli::run({"register", "--oracle", subject.string(), "--cloud", (subject / "input.xyz").string(), "--res",
                      "48", "--out-prefix", prefix}),
            0);
  for (const char* f : {"s0_params.json", "s0_mesh.obj", "s0_body.obj", "s0_trace.csv", "s0_inner.obj", "s0_outer.obj"}) {
    EXPECT_TRUE(fs::exists(path("fit") / f)) << f;
  }
  const std::string trace = io::read_text(path("fit/s0_trace.csv"));
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "iteration,stage,E_data,E_part,E_lap,total");

  io::write_text(path("pose.json"), json{{"pose", std::vector<std::vector<double>>(kNumJoints, {0.0, 0.0, 0.0})}}.dump());
  ASSERT_EQ(cli::run({"repose", "--model", (path("d") / "body.json").string(), "--params", path("fit/s0_params.json").string(),
                      "--pose", path("pose.json").string(), "--out", path("fit/rest.obj").string()}),
            0);
  const TriMesh rest = io::read_obj(path("fit/rest.obj"));
  EXPECT_EQ(rest.faces(), io::read_obj(path("fit/s0_mesh.obj")).faces());

  ASSERT_EQ(cli::run({"eval", "--pred-prefix", prefix, "--gt-dir", subject.string(), "--report",
                      path("fit/report.json").string()}),
            0);
  const json rep = json::parse(io::read_text(path("fit/report.json")));
  EXPECT_LT(rep.at("v2v_cm").get<double>(), 3.0);
  EXPECT_TRUE(rep.contains("metric_definitions"));
  const json m = manifest(path("fit"));
  ASSERT_EQ(m.at("runs").size(), 3u);
  EXPECT_EQ(m.at("runs")[2].at("command"), "eval");
}

}  // namespace
}  // namespace dilate
