// Runs the kge binary end to end. KGE_CLI_PATH and KGE_TOY_DIR are compile definitions.

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "kge/config.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int rc = -1;
  std::string out;
};

// stdout captured; stderr folded in when merge is set.
Result run(const std::string& args, bool merge = false) {
  const std::string cmd = std::string(KGE_CLI_PATH) + " " + args + (merge ? " 2>&1" : " 2>/dev/null");
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const std::string name = ::testing::UnitTest::GetInstance()->current_test_info()->name();
    dir_ = fs::temp_directory_path() / ("kge_cli_" + name);
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }
  static std::string toy(const std::string& name) { return (fs::path(KGE_TOY_DIR) / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, IngestPrintsStats) {
  const auto r = run("ingest --train " + toy("tiny.tsv") + " --data_dir " + p("store"), true);
  EXPECT_EQ(r.rc, 0);
  EXPECT_NE(r.out.find("entities=3 relations=2 train=3"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(p("store")));
}

TEST_F(Cli, MissingFileIsUsageError) {
  const auto r = run("ingest --train " + p("nope.tsv") + " --data_dir " + p("store"), true);
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.out.find("does not exist"), std::string::npos);
}

TEST_F(Cli, UnknownFlagIsUsageError) { EXPECT_EQ(run("train --no_such_key 3").rc, 2); }

TEST_F(Cli, TrainZeroStepsThenEvalAllFiltered) {
  // Two entities, every (h, r, t) known: each filtered query has the gold alone.
  {
    std::ofstream tr(p("train.tsv")), te(p("test.tsv"));
    tr << "a\tr\ta\na\tr\tb\nb\tr\ta\n";
    te << "b\tr\tb\n";
  }
  ASSERT_EQ(run("ingest --train " + p("train.tsv") + " --test " + p("test.tsv") + " --data_dir " + p("store")).rc, 0);
  const std::string common = " --data_dir " + p("store") + " --checkpoint " + p("model.ckpt") + " --dim 4";
  const auto tr = run("train --steps_max 0 --valid_every 0" + common);
  ASSERT_EQ(tr.rc, 0);
  EXPECT_TRUE(fs::exists(p("model.ckpt")));
  const auto ev = run("eval" + common);
  ASSERT_EQ(ev.rc, 0);
  const auto j = nlohmann::json::parse(ev.out.substr(0, ev.out.find('\n')));
  EXPECT_DOUBLE_EQ(j.at("mrr").get<double>(), 1.0);
  EXPECT_EQ(j.at("count").get<int>(), 2);
}

TEST_F(Cli, TrainAndEvalRing) {
  ASSERT_EQ(run("ingest --train " + toy("train.tsv") + " --valid " + toy("valid.tsv") + " --test " + toy("test.tsv") +
                " --data_dir " + p("store"))
                .rc,
            0);
  const std::string common = " --data_dir " + p("store") + " --checkpoint " + p("m.ckpt") + " --dim 16 --gamma 4";
  const auto tr = run("train --steps_max 200 --valid_every 100 --batch_size 32 --neg_size 8 --lr 0.01 --log " +
                      p("log.jsonl") + common);
  ASSERT_EQ(tr.rc, 0);
  EXPECT_NE(tr.out.find("valid_mrr"), std::string::npos);
  EXPECT_TRUE(fs::exists(p("m.ckpt.best")));
  const auto ev = run("eval --tie_policy pessimistic" + common);
  ASSERT_EQ(ev.rc, 0);
  EXPECT_NE(ev.out.find("\"tie_policy\":\"pessimistic\""), std::string::npos);
  const auto ex = run("export --out " + p("ents.bin") + common);
  EXPECT_EQ(ex.rc, 0);
  EXPECT_TRUE(fs::exists(p("ents.bin")));
}

TEST_F(Cli, EvalTakesShapeFromCheckpoint) {
  ASSERT_EQ(run("ingest --train " + toy("tiny.tsv") + " --test " + toy("tiny.tsv") + " --data_dir " + p("s")).rc, 0);
  ASSERT_EQ(run("train --steps_max 0 --valid_every 0 --dim 8 --data_dir " + p("s") + " --checkpoint " + p("c")).rc, 0);
  // eval builds the model from the checkpoint header, so it succeeds regardless of --dim
  EXPECT_EQ(run("eval --dim 16 --data_dir " + p("s") + " --checkpoint " + p("c")).rc, 0);
}

TEST_F(Cli, GradcheckPasses) {
  const auto r = run("gradcheck --gradcheck_instances 20");
  EXPECT_EQ(r.rc, 0);
  EXPECT_NE(r.out.find("\"pass\":true"), std::string::npos);
  EXPECT_EQ(r.out.find("\"pass\":false"), std::string::npos);
}

TEST_F(Cli, HelpListsEveryKey) {
  const auto r = run("--help");
  EXPECT_EQ(r.rc, 0);
  for (const auto& k : kge::config_keys()) {
    EXPECT_NE(r.out.find("--" + std::string(k.name)), std::string::npos) << k.name;
  }
}

TEST_F(Cli, PresetWithoutLossConstantsIsRejected) {
  const auto r = run("--preset interht-paper gradcheck", true);
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.out.find("gamma"), std::string::npos);
  EXPECT_NE(r.out.find("adv_alpha"), std::string::npos);
}

TEST_F(Cli, EnvironmentLayerApplies) {
  const std::string cmd = "KGE_GRADCHECK_INSTANCES=zero " + std::string(KGE_CLI_PATH) + " gradcheck 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string out;
  std::array<char, 512> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  const int status = pclose(pipe);
  EXPECT_EQ(WEXITSTATUS(status), 2);
  EXPECT_NE(out.find("gradcheck_instances"), std::string::npos);
}
