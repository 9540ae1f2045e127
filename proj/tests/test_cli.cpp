#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "hrank/cli.hpp"
#include "hrank/model_io.hpp"
#include "hrank/presets.hpp"

using namespace hrank;
namespace fs = std::filesystem;

namespace {

struct Result {
  int rc = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.rc = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Runs each test inside its own scratch directory.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    old_ = fs::current_path();
    dir_ = fs::temp_directory_path() / ("hrank_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    fs::current_path(dir_);
  }
  void TearDown() override {
    fs::current_path(old_);
    fs::remove_all(dir_);
  }

  // tiny_plain model, stats over 8 of 16 synthetic images, and a half-rate plan.
  void pipeline() {
    save_model(build_tiny_plain({{3, 8, 8}, {6, 6, 6}, 4, true, 1}), "m.hrm");
    ASSERT_EQ(run({"estimate-ranks", "--model", "m.hrm", "--synthetic", "16", "--g", "8", "--workers", "2",
                   "--out", "st.json"}).rc, 0);
    ASSERT_EQ(run({"plan", "--stats", "st.json", "--model", "m.hrm", "--rate", "0.5", "--out", "plan.json"}).rc, 0);
  }

  fs::path old_;
  fs::path dir_;
};

std::string slurp(const std::string& p) { return read_text_file(p); }

}  // namespace

TEST_F(Cli, HelpAndUsageExitCodes) {
  EXPECT_EQ(run({"--help"}).rc, 0);
  EXPECT_EQ(run({}).rc, 2);
  EXPECT_EQ(run({"no-such-command"}).rc, 2);
  EXPECT_EQ(run({"prune", "--model", "x.hrm"}).rc, 2);
  const auto v = run({"--version"});
  EXPECT_EQ(v.rc, 0);
  EXPECT_NE(v.out.find(kToolVersion), std::string::npos);
}

TEST_F(Cli, ZeroSampleCountIsUsageError) {
  const auto r = run({"estimate-ranks", "--preset", "resnet56", "--width", "0.25", "--synthetic", "10", "--g", "0",
                      "--out", "st.json"});
  EXPECT_EQ(r.rc, 2);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  EXPECT_FALSE(fs::exists("st.json"));
}

TEST_F(Cli, ConfigErrorsExitWithTwoAndRuntimeErrorsWithOne) {
  EXPECT_EQ(run({"build-preset", "--preset", "alexnet", "--out", "a.hrm"}).rc, 2);
  const auto missing = run({"prune", "--model", "nope.hrm", "--plan", "nope.json", "--out", "p.hrm"});
  EXPECT_EQ(missing.rc, 1);
  EXPECT_EQ(std::count(missing.err.begin(), missing.err.end(), '\n'), 1) << missing.err;
}

TEST_F(Cli, EstimateIsByteIdenticalAcrossRuns) {
  pipeline();
  const std::string first = slurp("st.json");
  ASSERT_EQ(run({"estimate-ranks", "--model", "m.hrm", "--synthetic", "16", "--g", "8", "--workers", "1",
                 "--out", "st.json"}).rc, 0);
  EXPECT_EQ(slurp("st.json"), first);
  const auto j = nlohmann::json::parse(first);
  EXPECT_EQ(j.at("model_fingerprint").get<std::string>(), model_fingerprint(load_model("m.hrm")));
}

TEST_F(Cli, DefaultSampleCountIsFiveHundred) {
  save_model(build_tiny_plain({{3, 4, 4}, {2}, 2, true, 1}), "m.hrm");
  ASSERT_EQ(run({"estimate-ranks", "--model", "m.hrm", "--synthetic", "600", "--out", "st.json"}).rc, 0);
  const auto j = nlohmann::json::parse(slurp("st.json"));
  EXPECT_EQ(j.at("layers").at(0).at("g").get<std::size_t>(), 500u);
}

TEST_F(Cli, PipelineProducesPrunedModelAndReport) {
  pipeline();
  ASSERT_EQ(run({"prune", "--model", "m.hrm", "--plan", "plan.json", "--out", "p.hrm"}).rc, 0);
  const auto pruned = load_model("p.hrm");
  for (int id : pruned.prunable_ids()) EXPECT_EQ(pruned.node(id).conv().filters.n_out(), 3u);
  const auto rep = run({"report", "--before", "m.hrm", "--after", "p.hrm", "--name", "tiny"});
  ASSERT_EQ(rep.rc, 0);
  EXPECT_NE(rep.out.find("model\tFLOPs(PR)\tParameters(PR)"), std::string::npos);
  EXPECT_NE(rep.out.find("tiny\t"), std::string::npos);
  const auto same = run({"report", "--before", "m.hrm", "--after", "m.hrm"});
  EXPECT_EQ(same.out.find("(0.0%)") != std::string::npos, true);
  EXPECT_EQ(same.out.find("%)", same.out.find("model\t", 10)) != std::string::npos, true);
  const auto acc = run({"report", "--before", "m.hrm", "--after", "p.hrm", "--synthetic", "20"});
  EXPECT_NE(acc.out.find("Top-1%"), std::string::npos);
}

TEST_F(Cli, PruneRefusesPlanFromAnotherModel) {
  pipeline();
  save_model(build_tiny_plain({{3, 8, 8}, {6, 6, 6}, 4, true, 2}), "other.hrm");
  const auto r = run({"prune", "--model", "other.hrm", "--plan", "plan.json", "--out", "p.hrm"});
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.err.find("different model"), std::string::npos) << r.err;
  EXPECT_EQ(run({"plan", "--stats", "st.json", "--model", "other.hrm", "--rate", "0.5", "--out", "x.json"}).rc, 1);
}

TEST_F(Cli, FinetuneWritesCheckpointStateAndTrajectory) {
  pipeline();
  ASSERT_EQ(run({"prune", "--model", "m.hrm", "--plan", "plan.json", "--out", "p.hrm"}).rc, 0);
  ASSERT_EQ(run({"freeze-mask", "--plan", "plan.json", "--stats", "st.json", "--freeze-fraction", "0.5",
                 "--out", "mask.json"}).rc, 0);
  const auto r = run({"finetune", "--model", "p.hrm", "--synthetic", "32", "--epochs", "2", "--batch-size", "8",
                      "--mask", "mask.json", "--out", "ft.hrm"});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_TRUE(fs::exists("ft.hrm"));
  EXPECT_TRUE(fs::exists("ft.hrm.opt"));
  const std::string traj = slurp("ft.hrm.trajectory.tsv");
  EXPECT_EQ(std::count(traj.begin(), traj.end(), '\n'), 3);
  const auto resumed = run({"finetune", "--model", "ft.hrm", "--synthetic", "32", "--epochs", "1", "--batch-size",
                            "8", "--resume", "ft.hrm.opt", "--out", "ft2.hrm"});
  ASSERT_EQ(resumed.rc, 0) << resumed.err;
  EXPECT_NE(slurp("ft2.hrm.trajectory.tsv").find("train\t2\t"), std::string::npos);
}

TEST_F(Cli, ScheduleRunsFromPlan) {
  pipeline();
  const auto r = run({"finetune", "--model", "m.hrm", "--synthetic", "16", "--epochs", "1", "--batch-size", "8",
                      "--plan", "plan.json", "--stats", "st.json", "--freeze-fraction", "0.3", "--schedule",
                      "per_layer", "--out", "s.hrm"});
  ASSERT_EQ(r.rc, 0) << r.err;
  const std::string traj = slurp("s.hrm.trajectory.tsv");
  EXPECT_EQ(std::count(traj.begin(), traj.end(), '\n'), 4);
}

TEST_F(Cli, EveryManifestReplaysByteIdentically) {
  ASSERT_EQ(run({"build-preset", "--preset", "resnet56", "--width", "0.25", "--seed", "3", "--out", "r.hrm"}).rc, 0);
  pipeline();
  ASSERT_EQ(run({"prune", "--model", "m.hrm", "--plan", "plan.json", "--out", "p.hrm"}).rc, 0);
  ASSERT_EQ(run({"report", "--before", "m.hrm", "--after", "p.hrm", "--out", "c.json"}).rc, 0);
  ASSERT_EQ(run({"evaluate", "--model", "p.hrm", "--synthetic", "16", "--out", "e.json"}).rc, 0);
  ASSERT_EQ(run({"finetune", "--model", "p.hrm", "--synthetic", "16", "--epochs", "1", "--batch-size", "8",
                 "--out", "ft.hrm"}).rc, 0);
  std::size_t manifests = 0;
  for (const auto& e : fs::directory_iterator(".")) {
    const std::string name = e.path().filename().string();
    if (name.size() < 14 || name.substr(name.size() - 14) != ".manifest.json") continue;
    ++manifests;
    const auto r = run({"replay", name});
    EXPECT_EQ(r.rc, 0) << name << ": " << r.err;
  }
  EXPECT_EQ(manifests, 7u);
}

TEST_F(Cli, ReplayDetectsDifferentBytes) {
  pipeline();
  auto m = nlohmann::json::parse(slurp("plan.json.manifest.json"));
  m["outputs"][0]["sha256"] = std::string(64, '0');
  write_text_file("tampered.json", m.dump());
  const auto r = run({"replay", "tampered.json"});
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.err.find("plan.json"), std::string::npos);
  EXPECT_EQ(run({"replay", "st.json"}).rc, 1);
}

TEST_F(Cli, EveryPresetSurvivesEstimatePlanPrune) {
  for (const auto& name : preset_names()) {
    const std::string m = name + ".hrm";
    ASSERT_EQ(run({"build-preset", "--preset", name, "--width", "0.125", "--out", m}).rc, 0) << name;
    ASSERT_EQ(run({"estimate-ranks", "--model", m, "--synthetic", "10", "--g", "2", "--out", name + ".st"}).rc, 0)
        << name;
    ASSERT_EQ(run({"plan", "--stats", name + ".st", "--model", m, "--rate", "0.1", "--out", name + ".plan"}).rc, 0)
        << name;
    const auto r = run({"prune", "--model", m, "--plan", name + ".plan", "--out", name + ".p.hrm"});
    ASSERT_EQ(r.rc, 0) << name << ": " << r.err;
    const auto pruned = load_model(name + ".p.hrm");
    const auto& d = pruned.input_dims();
    EXPECT_NO_THROW(forward(pruned, Tensor4({2, d.c, d.h, d.w}))) << name;
  }
}
