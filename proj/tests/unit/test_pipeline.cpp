#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "phantom.hpp"
#include "yoho/hash.hpp"
#include "yoho/pipeline.hpp"

namespace {

using namespace yoho;
namespace fs = std::filesystem;
using nlohmann::json;

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("yoho_cli_" + std::to_string(::getpid()));
    fs::create_directories(root_);
    annotation_ = yoho::testing::write_phantom(yoho::testing::make_phantom(7, {128, 128}), root_ / "phantom");
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static CliResult run(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    const fs::path out = root_ / ("stdout" + std::to_string(counter));
    const fs::path err = root_ / ("stderr" + std::to_string(counter++));
    const std::string cmd = env + " \"" YOHO_CLI "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

  static inline fs::path root_;
  static inline fs::path annotation_;
};

TEST_F(Cli, SmokeRunSucceeds) {
  const fs::path out = root_ / "run_a";
  const CliResult r = run("run " + q(annotation_) + " --profile smoke --seed 5 --out " + q(out) + " --gt " +
                          q(annotation_.parent_path() / "gt.png"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json summary = json::parse(r.out);
  EXPECT_TRUE(summary.contains("dice"));
  for (const char* f : {"mask.png", "prob.png", "checkpoint.yoho", "history.csv", "report.json", "dataset/manifest.json",
                        "eval/metrics.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const json report = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(report.at("size"), json::array({128, 128}));
  EXPECT_EQ(report.at("mask_sha256").get<std::string>(), sha256_file(out / "mask.png"));
  EXPECT_TRUE(report.at("metrics").contains("e_phi_max"));
  const BinaryMask mask = read_binary_mask(out / "mask.png");
  EXPECT_EQ(mask.rows, 128);
  EXPECT_EQ(mask.cols, 128);
}

TEST_F(Cli, SameSeedGivesIdenticalMask) {
  std::string sha[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path out = root_ / ("det_" + std::to_string(i));
    const CliResult r = run("run " + q(annotation_) + " --profile smoke --seed 11 --out " + q(out));
    ASSERT_EQ(r.code, 0) << r.err;
    sha[i] = json::parse(slurp(out / "report.json")).at("mask_sha256").get<std::string>();
  }
  EXPECT_EQ(sha[0], sha[1]);
}

TEST_F(Cli, MissingCheckpointIsIoError) {
  const fs::path ckpt = root_ / "nowhere" / "missing.yoho";
  const CliResult r = run("infer " + q(annotation_) + " " + q(ckpt) + " --profile smoke --out " + q(root_ / "inf"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find(ckpt.string()), std::string::npos) << r.err;
}

TEST_F(Cli, InvalidAnnotationReportsJson) {
  const fs::path bad = root_ / "phantom" / "bad.json";
  std::ofstream(bad) << R"({"image": "phantom.png", "reverse": false,
    "rois": [[[10,10],[40,10],[40,40],[10,40]]],
    "samples": [{"cx": 100, "cy": 100, "r": 10}, {"cx": 20, "cy": 20, "r": 9}]})";
  const CliResult r = run("run " + q(bad) + " --profile smoke --out " + q(root_ / "bad"));
  EXPECT_EQ(r.code, 2);
  const json j = json::parse(r.err);
  EXPECT_EQ(j.at("exit_code"), 2);
  ASSERT_TRUE(j.contains("report"));
  EXPECT_FALSE(j.at("report").at("errors").empty());
}

TEST_F(Cli, ConfigOverridesRenderCount) {
  const fs::path cfg = root_ / "k8.json";
  std::ofstream(cfg) << R"({"profile": "smoke", "render": {"K": 8}})";
  auto two = yoho::testing::make_phantom(7, {128, 128});
  two.annotation.samples.resize(2);
  const fs::path ann = yoho::testing::write_phantom(two, root_ / "two_samples");
  const fs::path out = root_ / "k8";
  const CliResult r = run("render " + q(ann) + " --config " + q(cfg) + " --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.err;
  const render::DatasetManifest m = render::load_manifest(out / "dataset" / "manifest.json");
  EXPECT_EQ(m.K(), 8);
  EXPECT_EQ(m.config.out_size, (Size2{64, 64}));
}

TEST_F(Cli, StagedCommandsMatchRun) {
  const fs::path out = root_ / "staged";
  const std::string common = " --profile smoke --seed 5 --out " + q(out);
  const CliResult r1 = run("render " + q(annotation_) + common);
  ASSERT_EQ(r1.code, 0) << r1.err;
  const CliResult r2 = run("train " + q(out / "dataset" / "manifest.json") + common);
  ASSERT_EQ(r2.code, 0) << r2.err;
  const auto mtime = fs::last_write_time(out / "checkpoint.yoho");
  const CliResult again = run("train " + q(out / "dataset" / "manifest.json") + common);
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(fs::last_write_time(out / "checkpoint.yoho"), mtime);
  const CliResult r3 = run("infer " + q(annotation_) + " " + q(out / "checkpoint.yoho") + common);
  ASSERT_EQ(r3.code, 0) << r3.err;
  const CliResult full = run("run " + q(annotation_) + " --profile smoke --seed 5 --out " + q(root_ / "staged_run"));
  ASSERT_EQ(full.code, 0) << full.err;
  EXPECT_EQ(sha256_file(out / "mask.png"), sha256_file(root_ / "staged_run" / "mask.png"));

  const CliResult changed = run("train " + q(out / "dataset" / "manifest.json") + " --profile smoke --seed 6 --out " + q(out));
  EXPECT_EQ(changed.code, 3) << changed.err;
}

TEST_F(Cli, EvalScoresDirectories) {
  const fs::path pred = root_ / "eval_pred", gt = root_ / "eval_gt";
  fs::create_directories(pred);
  fs::create_directories(gt);
  fs::copy_file(annotation_.parent_path() / "gt.png", pred / "a.png");
  fs::copy_file(annotation_.parent_path() / "gt.png", gt / "a.png");
  const CliResult r = run("eval " + q(pred) + " " + q(gt) + " --out " + q(root_ / "eval_out"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "eval_out" / "metrics.csv"));
}

TEST_F(Cli, RejectsBadConfigAndDevice) {
  const fs::path cfg = root_ / "bad_cfg.json";
  std::ofstream(cfg) << R"({"render": {"K": 8, "typo": 1}})";
  EXPECT_EQ(run("render " + q(annotation_) + " --config " + q(cfg) + " --out " + q(root_ / "x")).code, 2);
  EXPECT_EQ(run("render " + q(annotation_) + " --profile smoke --out " + q(root_ / "y"), "YOHO_DEVICE=cuda").code, 2);
  EXPECT_EQ(run("render " + q(root_ / "absent.json") + " --profile smoke --out " + q(root_ / "z")).code, 3);
  EXPECT_NE(run("frobnicate").code, 0);
}

TEST(ExitCodes, Mapping) {
  using pipeline::exit_code_for;
  EXPECT_EQ(exit_code_for(ErrorCode::MalformedAnnotation), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::InvariantViolation), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::InvalidConfig), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::IoFailure), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::MissingImage), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::NonFiniteLoss), 4);
  EXPECT_EQ(exit_code_for(ErrorCode::EmptyGroundTruth), 1);
}

}  // namespace
