#include "gunet/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gunet/array_store.hpp"
#include "gunet/data.hpp"
#include "gunet/image.hpp"
#include "gunet/net.hpp"
#include "gunet/optim.hpp"

namespace gunet {
namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("gunet_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ::unsetenv("GUNC_SEED");
  }
  void TearDown() override {
    fs::remove_all(dir_);
    ::unsetenv("GUNC_SEED");
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int cli(std::vector<std::string> args) { return run_cli(args); }

  static std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    EXPECT_TRUE(in) << "cannot open " << p;
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
  }

  // A small dataset most tests share.
  void gen_fixture(const std::string& out, int images = 4, const std::string& extra_seed = "11") {
    ASSERT_EQ(0, cli({"gen-data", "--out", path(out), "--images", std::to_string(images),
                      "--count", "2..4", "--seed", extra_seed, "--val", "1"}));
  }

  std::vector<std::string> tiny_train(const std::string& data, const std::string& out,
                                      const std::string& iters) {
    return {"train",        "--data",     path(data) + "/manifest.json",
            "--out",        path(out),    "--channels",
            "2,2,4,4,8",    "--iters",    iters,
            "--batch-size", "4",          "--eval-every",
            "5",            "--checkpoint-every", "5",
            "--seed",       "3"};
  }

  fs::path dir_;
};

TEST_F(CliTest, GenDataWritesImagesAnnotationsAndManifest) {
  ASSERT_EQ(0, cli({"gen-data", "--out", path("d"), "--images", "5", "--count", "3..3", "--seed",
                    "7"}));
  const nlohmann::json manifest = parse_json_file(path("d/manifest.json"));
  ASSERT_EQ(manifest.at("images").size(), 5u);
  for (const auto& entry : manifest.at("images")) {
    EXPECT_EQ(entry.at("count").get<int>(), 3);  // --count 3..3 pins the count
    EXPECT_TRUE(fs::exists(dir_ / "d" / entry.at("annotation").get<std::string>()));
  }
  EXPECT_TRUE(fs::exists(path("d/img_0000.png")));
  EXPECT_TRUE(fs::exists(path("d/config.json")));
}

TEST_F(CliTest, GenDataRefusesNonEmptyOutputWithoutForce) {
  gen_fixture("d", 2);
  EXPECT_EQ(1, cli({"gen-data", "--out", path("d"), "--images", "2"}));
  EXPECT_EQ(0, cli({"gen-data", "--out", path("d"), "--images", "2", "--force"}));
}

TEST_F(CliTest, GenDataRerunsAreByteIdentical) {
  ASSERT_EQ(0, cli({"gen-data", "--out", path("a"), "--images", "3", "--seed", "5"}));
  ASSERT_EQ(0, cli({"gen-data", "--out", path("b"), "--images", "3", "--seed", "5"}));
  for (const std::string f : {"manifest.json", "img_0000.png", "img_0002.json", "config.json"})
    EXPECT_EQ(read_bytes(dir_ / "a" / f), read_bytes(dir_ / "b" / f)) << f;
}

TEST_F(CliTest, SeedFallsBackToEnvironmentVariable) {
  ::setenv("GUNC_SEED", "99", 1);
  ASSERT_EQ(0, cli({"gen-data", "--out", path("env"), "--images", "2"}));
  EXPECT_EQ(parse_json_file(path("env/manifest.json")).at("seed").get<std::uint64_t>(), 99u);
  // An explicit flag wins over the environment.
  ASSERT_EQ(0, cli({"gen-data", "--out", path("flag"), "--images", "2", "--seed", "5"}));
  EXPECT_EQ(parse_json_file(path("flag/manifest.json")).at("seed").get<std::uint64_t>(), 5u);
  ::setenv("GUNC_SEED", "not-a-number", 1);
  EXPECT_EQ(1, cli({"gen-data", "--out", path("bad"), "--images", "2"}));
}

TEST_F(CliTest, TrainTwiceProducesIdenticalTraces) {
  gen_fixture("d");
  ASSERT_EQ(0, cli(tiny_train("d", "r1", "6")));
  ASSERT_EQ(0, cli(tiny_train("d", "r2", "6")));
  EXPECT_EQ(read_bytes(dir_ / "r1/trace.csv"), read_bytes(dir_ / "r2/trace.csv"));
}

TEST_F(CliTest, TrainEchoesResolvedConfigThatRoundTrips) {
  gen_fixture("d");
  ASSERT_EQ(0, cli(tiny_train("d", "r1", "6")));
  const nlohmann::json cfg = parse_json_file(path("r1/config.json"));
  EXPECT_TRUE(cfg.at("net.gated").get<bool>());
  EXPECT_EQ(cfg.at("net.fusion").get<std::string>(), "concat");
  EXPECT_EQ(cfg.at("net.channels").get<std::string>(), "2,2,4,4,8");
  EXPECT_EQ(cfg.at("train.iterations").get<std::int64_t>(), 6);
  EXPECT_EQ(cfg.at("train.seed").get<std::uint64_t>(), 3u);
  EXPECT_FALSE(cfg.contains("data.sigma_preset"));  // folded into data.sigma

  // Re-running purely from the echoed config reproduces the run.
  ASSERT_EQ(0, cli({"train", "--config", path("r1/config.json"), "--out", path("r3")}));
  EXPECT_EQ(read_bytes(dir_ / "r1/trace.csv"), read_bytes(dir_ / "r3/trace.csv"));
}

TEST_F(CliTest, CommandLineFlagsWinOverConfigFile) {
  gen_fixture("d");
  write_text_file(path("cfg.json"),
                  "{\"train.iterations\": 4, \"net.channels\": \"2,2,4,4,8\", "
                  "\"train.batch_size\": 4, \"train.eval_every\": 2, "
                  "\"train.checkpoint_every\": 4, \"train.seed\": 3, "
                  "\"data.manifest\": \"" + path("d/manifest.json") + "\"}\n");
  ASSERT_EQ(0, cli({"train", "--config", path("cfg.json"), "--out", path("run"), "--iters", "6"}));
  std::ifstream in(path("run/trace.csv"));
  std::string line;
  int rows = -1;  // header
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6);  // the flag's 6 iterations, not the file's 4
}

TEST_F(CliTest, UnknownConfigKeyIsAUsageError) {
  gen_fixture("d", 2);
  write_text_file(path("cfg.json"), "{\"bogus.key\": 1}\n");
  EXPECT_EQ(1, cli({"train", "--data", path("d/manifest.json"), "--out", path("run"), "--config",
                    path("cfg.json")}));
}

TEST_F(CliTest, SigmaPresetsMapToNamedValues) {
  gen_fixture("d", 2);
  ASSERT_EQ(0, cli({"eval", "--data", path("d/manifest.json"), "--oracle-gt", "--split", "train",
                    "--sigma-preset", "trancos", "--out", path("e")}));
  EXPECT_DOUBLE_EQ(parse_json_file(path("e/config.json")).at("data.sigma").get<double>(), 10.0);
  EXPECT_EQ(1, cli({"eval", "--data", path("d/manifest.json"), "--oracle-gt", "--split", "train",
                    "--sigma-preset", "ucsd", "--sigma", "2", "--out", path("e2")}));
}

TEST_F(CliTest, TrainResumeMatchesUninterruptedRun) {
  gen_fixture("d");
  ASSERT_EQ(0, cli(tiny_train("d", "full", "10")));
  ASSERT_EQ(0, cli(tiny_train("d", "half", "5")));
  ASSERT_EQ(0, cli({"train", "--data", path("d/manifest.json"), "--out", path("resumed"),
                    "--resume", path("half/ckpt_00000005.gunc"), "--iters", "10"}));
  EXPECT_EQ(read_bytes(dir_ / "full/trace.csv"), read_bytes(dir_ / "resumed/trace.csv"));
  EXPECT_EQ(read_bytes(dir_ / "full/ckpt_00000010.gunc"),
            read_bytes(dir_ / "resumed/ckpt_00000010.gunc"));
}

TEST_F(CliTest, DivergentTrainingExitsWithRuntimeCodeAndKeepsCheckpoint) {
  gen_fixture("d");
  auto args = tiny_train("d", "boom", "10");
  args.push_back("--init-std");
  args.push_back("1e8");  // guarantees a non-finite loss immediately
  EXPECT_EQ(2, cli(args));
}

TEST_F(CliTest, EvalOracleModeScoresZeroAndWritesReports) {
  gen_fixture("d");
  ASSERT_EQ(0, cli({"eval", "--data", path("d/manifest.json"), "--oracle-gt", "--split", "train",
                    "--out", path("e")}));
  const nlohmann::json rep = parse_json_file(path("e/report.json"));
  EXPECT_EQ(rep.at("mae").get<double>(), 0.0);
  EXPECT_EQ(rep.at("mse").get<double>(), 0.0);
  for (const auto& g : rep.at("game")) EXPECT_EQ(g.get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(path("e/report.csv")));
}

TEST_F(CliTest, EvalScoresATrainedCheckpoint) {
  gen_fixture("d");
  ASSERT_EQ(0, cli(tiny_train("d", "run", "5")));
  ASSERT_EQ(0, cli({"eval", "--data", path("d/manifest.json"), "--checkpoint",
                    path("run/ckpt_00000005.gunc"), "--split", "val", "--out", path("e")}));
  const nlohmann::json rep = parse_json_file(path("e/report.json"));
  EXPECT_EQ(rep.at("game")[0].get<double>(), rep.at("mae").get<double>());
  ASSERT_TRUE(rep.contains("gate_means"));
  EXPECT_EQ(rep.at("gate_means").size(), 4u);
}

TEST_F(CliTest, EvalWithMissingCheckpointIsARuntimeFailure) {
  gen_fixture("d", 2);
  EXPECT_EQ(2, cli({"eval", "--data", path("d/manifest.json"), "--checkpoint",
                    path("nope.gunc"), "--split", "train", "--out", path("e")}));
}

TEST_F(CliTest, PredictWritesDensityFilesAndPreview) {
  gen_fixture("d");
  ASSERT_EQ(0, cli(tiny_train("d", "run", "5")));
  ASSERT_EQ(0, cli({"predict", "--checkpoint", path("run/ckpt_00000005.gunc"), "--out",
                    path("p"), path("d/img_0000.png")}));
  ASSERT_TRUE(fs::exists(path("p/img_0000_density.gunc")));
  ASSERT_TRUE(fs::exists(path("p/img_0000_density.png")));
  const ArrayStore store = ArrayStore::load(path("p/img_0000_density.gunc"));
  EXPECT_EQ(store.meta.at("kind").get<std::string>(), "density-map");
  const ArrayEntry& e = store.require("density");
  EXPECT_EQ(e.shape, (std::vector<std::int64_t>{96, 96}));
  const std::vector<float> vals = store.get<float>("density");
  double sum = 0;
  for (float v : vals) sum += v;
  EXPECT_NEAR(sum, store.meta.at("count").get<double>(), 1e-3);
}

TEST_F(CliTest, PredictHandlesArbitrarySizesViaPadding) {
  // A blank 100x140 image through an all-zero model: the emitted map matches
  // the input size and counts exactly zero.
  ImageU8 blank;
  blank.h = 100;
  blank.w = 140;
  blank.channels = 3;
  blank.pixels.assign(100 * 140 * 3, 0);
  write_png(path("blank.png"), blank);

  NetworkSpec spec;
  spec.encoder_channels = {2, 2, 4, 4, 8};
  Network<float> net(spec);
  TrainConfig cfg;
  TrainState<float> st;
  st.adam.init(net.parameters());
  save_training_checkpoint(path("zero.gunc"), net, cfg, st);

  ASSERT_EQ(0, cli({"predict", "--checkpoint", path("zero.gunc"), "--out", path("p"),
                    path("blank.png")}));
  const ArrayStore store = ArrayStore::load(path("p/blank_density.gunc"));
  EXPECT_EQ(store.require("density").shape, (std::vector<std::int64_t>{100, 140}));
  EXPECT_EQ(store.meta.at("count").get<double>(), 0.0);
}

TEST_F(CliTest, PredictReportsPerFileFailures) {
  gen_fixture("d", 2);
  ASSERT_EQ(0, cli(tiny_train("d", "run", "5")));
  EXPECT_EQ(2, cli({"predict", "--checkpoint", path("run/ckpt_00000005.gunc"), "--out", path("p"),
                    path("d/img_0000.png"), path("missing.png")}));
  // The readable image was still processed.
  EXPECT_TRUE(fs::exists(path("p/img_0000_density.gunc")));
}

TEST_F(CliTest, InspectGatesOnUntrainedModelReportsOneHalf) {
  gen_fixture("d");
  ASSERT_EQ(0, cli({"inspect-gates", "--data", path("d/manifest.json"), "--split", "train",
                    "--channels", "2,2,4,4,8", "--out", path("g")}));
  const nlohmann::json j = parse_json_file(path("g/gates.json"));
  ASSERT_EQ(j.at("gate_means").size(), 4u);
  for (const auto& v : j.at("gate_means")) EXPECT_NEAR(v.get<double>(), 0.5, 1e-6);
  EXPECT_TRUE(fs::exists(path("g/gates.csv")));
}

TEST_F(CliTest, InspectGatesOnTrainedCheckpointStaysInOpenUnitInterval) {
  gen_fixture("d");
  ASSERT_EQ(0, cli(tiny_train("d", "run", "5")));
  ASSERT_EQ(0, cli({"inspect-gates", "--data", path("d/manifest.json"), "--split", "train",
                    "--checkpoint", path("run/ckpt_00000005.gunc"), "--out", path("g")}));
  const nlohmann::json j = parse_json_file(path("g/gates.json"));
  ASSERT_EQ(j.at("gate_means").size(), 4u);
  for (const auto& v : j.at("gate_means")) {
    EXPECT_GT(v.get<double>(), 0.0);
    EXPECT_LT(v.get<double>(), 1.0);
  }
}

TEST_F(CliTest, InspectGatesRejectsUngatedModels) {
  gen_fixture("d", 2);
  EXPECT_EQ(1, cli({"inspect-gates", "--data", path("d/manifest.json"), "--split", "train",
                    "--channels", "2,2,4,4,8", "--ungated", "--out", path("g")}));
}

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(0, cli({"--help"}));
  EXPECT_EQ(1, cli({"train", "--no-such-flag"}));
  EXPECT_EQ(1, cli({}));  // a subcommand is required
}

}  // namespace
}  // namespace gunet
