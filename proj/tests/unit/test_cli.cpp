#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "atpnet/image.hpp"
#include "atpnet/pipeline.hpp"
#include "atpnet/ternary.hpp"
#include "atpnet/train.hpp"
#include "synthetic.hpp"

namespace atp {
namespace {

namespace fs = std::filesystem;

// Runs the CLI with output discarded; returns its exit status.
int run(const std::string& args) {
  const std::string command = std::string("\"") + ATPNET_CLI + "\" -q " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("atpnet_cli_test_" + std::to_string(getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_ / "train");
    fs::create_directories(dir_ / "test");
    const auto train = testing::synthetic_set(3, 24, 24, 21);
    for (std::size_t i = 0; i < train.size(); ++i) save_png(dir_ / "train" / ("t" + std::to_string(i) + ".png"), train[i]);
    const auto test = testing::synthetic_set(2, 16, 24, 22);
    for (std::size_t i = 0; i < test.size(); ++i) save_pgm(dir_ / "test" / ("v" + std::to_string(i) + ".pgm"), test[i]);
    std::ofstream(dir_ / "config.json") << R"({"block_size": 8, "crop": 16, "batch": 2, "lr": 0.001, "epochs": 2,
      "warmup_epochs": 1, "calibration": {"crops": 4, "steps": 10},
      "model": {"features": 4, "blocks": 1, "dilations": [1]}})";
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string path(const std::string& name) { return "\"" + (dir_ / name).string() + "\""; }
  static std::string train_args(const std::string& out) {
    return "train --train-dir " + path("train") + " --config " + path("config.json") + " --seed 7 --out " + path(out);
  }

  static fs::path dir_;
};

fs::path Cli::dir_;

TEST_F(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("train --bogus"), 1);
  EXPECT_EQ(run("eval --ckpt " + path("missing.atpn") + " --data " + path("test") + " --mr 0.25"), 1);
}

TEST_F(Cli, TrainTwiceGivesIdenticalCheckpoints) {
  ASSERT_EQ(run(train_args("a.atpn")), 0);
  ASSERT_EQ(run(train_args("b.atpn")), 0);
  const std::string a = read_text(dir_ / "a.atpn");
  EXPECT_EQ(a.substr(0, 4), "ATPN");
  EXPECT_EQ(a, read_text(dir_ / "b.atpn"));
  EXPECT_EQ(load_checkpoint(dir_ / "a.atpn").config.seed, 7u);
}

TEST_F(Cli, ResumeMatchesUninterruptedRun) {
  ASSERT_EQ(run(train_args("full.atpn")), 0);
  ASSERT_EQ(run(train_args("half.atpn") + " --epochs 1"), 0);
  ASSERT_EQ(run("train --train-dir " + path("train") + " --resume " + path("half.atpn") + " --epochs 2 --out " +
                path("resumed.atpn")),
            0);
  EXPECT_EQ(read_text(dir_ / "full.atpn"), read_text(dir_ / "resumed.atpn"));
}

TEST_F(Cli, EvalPackSampleReconstructInspect) {
  ASSERT_EQ(run(train_args("m.atpn")), 0);
  ASSERT_EQ(run("eval --ckpt " + path("m.atpn") + " --data " + path("test") + " --mr 0.25 --out " +
                path("report.json") + " --images " + path("recon")),
            0);
  const auto report = nlohmann::json::parse(read_text(dir_ / "report.json"));
  EXPECT_EQ(report["images"].size(), 2u);
  EXPECT_EQ(report["mr"], 0.25);
  EXPECT_EQ(report["model_id"].get<std::string>().size(), 64u);
  EXPECT_TRUE(fs::exists(dir_ / "report.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "recon" / "v0.png"));
  EXPECT_EQ(run("eval --ckpt " + path("m.atpn") + " --data " + path("test") + " --mr 0.1"), 2);

  ASSERT_EQ(run("pack --ckpt " + path("m.atpn") + " --out " + path("m.atpk")), 0);
  EXPECT_EQ(read_text(dir_ / "m.atpk").substr(0, 4), "ATPK");
  const PackedTernaryMatrix packed = load_packed(dir_ / "m.atpk");
  EXPECT_EQ(packed.rows, 16);
  EXPECT_EQ(packed.cols, 64);

  ASSERT_EQ(run("sample --ckpt " + path("m.atpn") + " --image " + path("test/v0.pgm") + " --out " + path("y.atpm")),
            0);
  EXPECT_EQ(load_measurements(dir_ / "y.atpm").values.shape(), (Shape{1, 16, 3, 2}));
  ASSERT_EQ(run("reconstruct --ckpt " + path("m.atpn") + " --measurements " + path("y.atpm") + " --out " +
                path("y.png")),
            0);
  const Image image = load_grayscale(dir_ / "y.png");
  EXPECT_EQ(image.width, 16);
  EXPECT_EQ(image.height, 24);

  ASSERT_EQ(run("inspect " + path("m.atpk") + " --out " + path("inspect.json")), 0);
  EXPECT_EQ(nlohmann::json::parse(read_text(dir_ / "inspect.json"))["rows"], 16);
  std::ofstream(dir_ / "junk.bin") << "nonsense";
  EXPECT_EQ(run("inspect " + path("junk.bin")), 2);
}

TEST_F(Cli, TernarizeStepAndPackRefusesFloat) {
  ASSERT_EQ(run(train_args("float.atpn") + " --epochs 1 --warmup-epochs 1"), 0);
  EXPECT_EQ(load_checkpoint(dir_ / "float.atpn").mode, SamplerMode::kFloat);
  EXPECT_EQ(run("pack --ckpt " + path("float.atpn") + " --out " + path("f.atpk")), 2);
  ASSERT_EQ(run("ternarize --ckpt " + path("float.atpn") + " --data " + path("train") + " --config " +
                path("config.json") + " --out " + path("tern.atpn")),
            0);
  const Checkpoint tern = load_checkpoint(dir_ / "tern.atpn");
  EXPECT_EQ(tern.mode, SamplerMode::kTernary);
  EXPECT_FALSE(tern.attention_in_path);
  ASSERT_TRUE(tern.mask.has_value());
  EXPECT_EQ(tern.mask->zero_count(), static_cast<std::size_t>(std::llround(1024 / 3.0)));
}

}  // namespace
}  // namespace atp
