#include "ded/analysis.hpp"
#include "ded/format.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(DED_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("ded_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
    std::string p(const std::string& name) const { return (dir / name).string(); }
    fs::path dir;
};

} // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("no-such-command"), 2);
    EXPECT_EQ(run("split"), 2) << "missing --in";
}

TEST_F(Cli, UnknownConfigKeyExitsTwo) {
    ded::write_text_file(p("bad.json"), R"({"dqn": {"updatez": 1}})");
    EXPECT_EQ(run("solve-exact --config " + p("bad.json") + " --out " + p("o")), 2);
}

TEST_F(Cli, MissingInputFileExitsNonZero) {
    EXPECT_NE(run("split --in " + p("absent.jsonl") + " --out " + p("o")), 0);
}

TEST_F(Cli, SolveExactWritesArtifacts) {
    ASSERT_EQ(run("solve-exact --out " + p("exact")), 0);
    for (const char* f : {"q_d.json", "q_r.json", "special_states.json", "theorem_report.json", "v_d_grid.csv",
                          "v_r_grid.csv", "config.json"})
        EXPECT_TRUE(fs::exists(dir / "exact" / f)) << f;
}

TEST_F(Cli, TabularLifeGatePipeline) {
    ASSERT_EQ(run("gen-lifegate --transitions 20000 --seed 1 --out " + p("lg")), 0);
    ASSERT_TRUE(fs::exists(dir / "lg" / "trajectories.jsonl"));
    const auto data = p("lg/trajectories.jsonl");
    ASSERT_EQ(run("train-d --train " + data + " --out " + p("d")), 0);
    ASSERT_EQ(run("train-r --train " + data + " --out " + p("r")), 0);
    ASSERT_EQ(run("flag --data " + data + " --qd " + p("d/q_d.json") + " --qr " + p("r/q_r.json") + " --out " +
                  p("flags")),
              0);
    const auto flagged = ded::load_flagged(dir / "flags" / "flagged.jsonl");
    EXPECT_FALSE(flagged.empty());
    ASSERT_EQ(run("analyze --flagged " + p("flags/flagged.jsonl") + " --out " + p("an")), 0);
    for (const char* f : {"flag_emergence.csv", "flag_duration_runs.csv", "flag_duration_ends.csv",
                          "value_histogram.csv"})
        EXPECT_TRUE(fs::exists(dir / "an" / f)) << f;
    ASSERT_EQ(run("report --in " + p("an") + " --out " + p("an")), 0);
    EXPECT_TRUE(fs::exists(dir / "an" / "report.txt"));
    // Swapped checkpoints are a validation error.
    EXPECT_EQ(run("flag --data " + data + " --qd " + p("r/q_r.json") + " --qr " + p("d/q_d.json") + " --out " +
                  p("bad")),
              2);
}

TEST_F(Cli, NetworkCheckpointWithoutEncoderExitsTwo) {
    ASSERT_EQ(run("gen-synthetic --n-trajectories 60 --out " + p("syn")), 0);
    ded::write_text_file(p("small.json"), R"({"encoder": {"epochs": 2, "embed_dim": 4, "hidden": [8]}, "dqn": {"updates": 5, "hidden": 8}})");
    const auto data = p("syn/trajectories.jsonl");
    ASSERT_EQ(run("train-sc --config " + p("small.json") + " --train " + data + " --out " + p("sc")), 0);
    ASSERT_EQ(run("train-d --config " + p("small.json") + " --train " + data + " --sc " + p("sc/sc.json") +
                  " --out " + p("d")),
              0);
    ASSERT_EQ(run("train-r --config " + p("small.json") + " --train " + data + " --sc " + p("sc/sc.json") +
                  " --out " + p("r")),
              0);
    EXPECT_EQ(run("flag --data " + data + " --qd " + p("d/q_d.json") + " --qr " + p("r/q_r.json") + " --out " +
                  p("f")),
              2);
    EXPECT_EQ(run("flag --data " + data + " --qd " + p("d/q_d.json") + " --qr " + p("r/q_r.json") + " --sc " +
                  p("sc/sc.json") + " --out " + p("f")),
              0);
}

TEST_F(Cli, VerifyTheoremsSmallSuite) {
    EXPECT_EQ(run("verify-theorems --seeds 5 --out " + p("v")), 0);
    EXPECT_TRUE(fs::exists(dir / "v" / "theorem_suite.csv"));
}
