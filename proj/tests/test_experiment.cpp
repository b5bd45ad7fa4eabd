#include "helpers.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "deeptruck/experiment.hpp"

using namespace deeptruck;
namespace fs = std::filesystem;

namespace {

fs::path smoke_manifest() { return fs::path(DEEPTRUCK_SOURCE_DIR) / "configs" / "smoke.manifest"; }

Manifest manifest_from(const std::string& text, const fs::path& base) {
  return Manifest::parse(Config::from_string(text), base);
}

}  // namespace

TEST(Manifest, RejectsUnknownAndEmptyStages) {
  EXPECT_THROW(manifest_from("[run]\nstages = gen-data, fly\n", "."), Error);
  EXPECT_THROW(manifest_from("[run]\nseed = 1\n", "."), Error);
}

TEST(Manifest, MissingCheckpointFailsBeforeAnyStageRuns) {
  dt_test::TempDir tmp("manifest");
  const Manifest m = manifest_from(
      "[run]\nseed = 2\nstages = gen-data, train-policy\n[train-policy]\nmodel = nowhere/model.ckpt\n", tmp.path());
  try {
    run_experiment(m, tmp / "out");
    FAIL() << "expected a resolution error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Resolution);
    EXPECT_NE(std::string(e.what()).find("model.ckpt"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(tmp / "out" / "data"));
  EXPECT_FALSE(fs::exists(tmp / "out" / "logs"));
}

TEST(Manifest, MissingConfigFileIsAResolutionError) {
  dt_test::TempDir tmp("manifest_cfg");
  const Manifest m = manifest_from("[run]\nstages = gen-data\n[gen-data]\nplant_config = absent.cfg\n", tmp.path());
  try {
    resolve_manifest(m, 1);
    FAIL() << "expected a resolution error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Resolution);
  }
}

TEST(Manifest, StageSeedsDeriveFromTheRunSeed) {
  const Manifest m = manifest_from("[run]\nseed = 10\nstages = gen-data, train-model\n", ".");
  const ResolvedRun r = resolve_manifest(m, 1);
  EXPECT_EQ(r.data.cycle.seed, 10u);
  EXPECT_EQ(r.data.validation_seed, 110u);
  EXPECT_EQ(r.validation.seed, 210u);
  EXPECT_EQ(r.eval.seed, 310u);
  EXPECT_EQ(r.pg.seed, 10u);
}

TEST(Experiment, SmokeRunIsBitReproducible) {
  dt_test::TempDir tmp("smoke");
  const Manifest m = Manifest::load(smoke_manifest());
  const RunReport a = run_experiment(m, tmp / "a");
  const RunReport b = run_experiment(m, tmp / "b", 2);
  for (const char* f : {"data", "model/best.ckpt", "validation", "policy/final.ckpt", "eval/deep/summary.txt",
                        "eval/plant/summary.txt", "checksums.sha256", "resolved.cfg", "seeds.txt"})
    EXPECT_TRUE(fs::exists(tmp / "a" / f)) << f;
  const std::string sa = read_text(tmp / "a" / "checksums.sha256");
  EXPECT_FALSE(sa.empty());
  EXPECT_EQ(sa, read_text(tmp / "b" / "checksums.sha256"));
  ASSERT_TRUE(a.eval && b.eval);
  EXPECT_EQ(a.eval->deep.to_text(), b.eval->deep.to_text());
}

TEST(Cli, HelpAndSmokeRun) {
  dt_test::TempDir tmp("cli");
  const std::string cli = DEEPTRUCK_CLI;
  EXPECT_EQ(std::system((cli + " --help > " + (tmp / "help.txt").string()).c_str()), 0);
  const std::string help = read_text(tmp / "help.txt");
  for (const char* sub : {"gen-cycle", "train-model", "validate-model", "train-policy", "eval-policy", "run"})
    EXPECT_NE(help.find(sub), std::string::npos) << sub;
  EXPECT_NE(std::system((cli + " bogus-subcommand > /dev/null 2>&1").c_str()), 0);

  const std::string out = (tmp / "gen").string();
  ASSERT_EQ(std::system((cli + " --seed 4 --out " + out + " gen-cycle --hours 0.02 --validation-hours 0.01 > /dev/null").c_str()), 0);
  EXPECT_FALSE(read_episode_dir(tmp / "gen" / "train").empty());
  EXPECT_TRUE(fs::exists(tmp / "gen" / "checksums.sha256"));
}
