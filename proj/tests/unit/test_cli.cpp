#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rceed/checkpoint.hpp"
#include "rceed/cli.hpp"
#include "rceed/synth.hpp"

namespace rceed {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream s(text);
  for (std::string line; std::getline(s, line);) out.push_back(line);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("rceed_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string path(const std::string& name) const { return (root_ / name).string(); }

  // Tiny dataset plus a two-step desk checkpoint.
  std::string trained_checkpoint(const std::vector<std::string>& extra = {}) {
    EXPECT_EQ(run({"gen-data", "--n", "4", "--out", path("data"), "--seed", "1", "--max-length", "3"}).code, 0);
    std::vector<std::string> args = {"train", "--data", path("data"), "--out", path("ckpt"),
                                     "--steps", "2",  "--batch", "2"};
    args.insert(args.end(), extra.begin(), extra.end());
    auto r = run(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return path("ckpt/final.rced");
  }

  fs::path root_;
};

TEST_F(Cli, GenDataWritesDatasetAndCount) {
  auto r = run({"gen-data", "--n", "100", "--out", path("a"), "--seed", "7"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "samples\t100\n");
  EXPECT_EQ(lines(slurp(path("a/labels.tsv"))).size(), 100u);
  EXPECT_EQ(read_dataset(path("a")).size(), 100u);
}

TEST_F(Cli, GenDataIsByteIdentical) {
  ASSERT_EQ(run({"gen-data", "--n", "100", "--out", path("a"), "--seed", "7"}).code, 0);
  ASSERT_EQ(run({"gen-data", "--n", "100", "--out", path("b"), "--seed", "7"}).code, 0);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(path("a"))) {
    const auto name = entry.path().filename();
    ASSERT_TRUE(fs::exists(root_ / "b" / name)) << name;
    EXPECT_EQ(slurp(entry.path()), slurp(root_ / "b" / name)) << name;
    ++files;
  }
  EXPECT_EQ(files, 101u);
}

TEST_F(Cli, GenDataUsageErrors) {
  EXPECT_EQ(run({"gen-data", "--n", "0", "--out", path("a")}).code, cli::kExitUsage);
  EXPECT_EQ(run({"gen-data", "--out", path("a")}).code, cli::kExitUsage);
  EXPECT_EQ(run({"gen-data", "--n", "3", "--out", path("a"), "--curvature", "0.5"}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"gen-data", "--n", "3", "--out", path("a"), "--min-length", "5", "--max-length", "2"}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

TEST_F(Cli, GenDataUnwritablePathIsRuntimeError) {
  std::ofstream(path("plain")) << "x";
  auto r = run({"gen-data", "--n", "2", "--out", path("plain/sub")});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("I/O error"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainLogsAndWritesCheckpoints) {
  ASSERT_EQ(run({"gen-data", "--n", "4", "--out", path("data"), "--seed", "1", "--max-length", "3"}).code, 0);
  auto r = run({"train", "--data", path("data"), "--out", path("ckpt"), "--steps", "3", "--batch", "2",
                "--checkpoint-every", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto log = lines(r.out);
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[0].substr(0, 5), "step\t");
  EXPECT_EQ(log[1].substr(0, 2), "1\t");
  EXPECT_EQ(log[3].substr(0, 2), "3\t");
  EXPECT_TRUE(fs::exists(path("ckpt/step-000002.rced")));
  EXPECT_TRUE(fs::exists(path("ckpt/final.rced")));
  EXPECT_FALSE(fs::exists(path("ckpt/step-000003.rced")));
  auto loaded = load_checkpoint(path("ckpt/final.rced"));
  EXPECT_EQ(loaded.step, 3u);
  EXPECT_EQ(loaded.config, ModelConfig::desk());
}

TEST_F(Cli, TrainIsDeterministic) {
  ASSERT_EQ(run({"gen-data", "--n", "4", "--out", path("data"), "--seed", "1", "--max-length", "3"}).code, 0);
  for (const char* out : {"x", "y"})
    ASSERT_EQ(run({"train", "--data", path("data"), "--out", path(out), "--steps", "2", "--batch", "2",
                   "--seed", "5"})
                  .code,
              0);
  EXPECT_EQ(slurp(path("x/final.rced")), slurp(path("y/final.rced")));
}

TEST_F(Cli, TrainTogglesReachTheModel) {
  const auto ckpt = trained_checkpoint({"--no-ld", "--no-gp", "--heads", "1", "--scale-exponent", "0.5"});
  auto cfg = load_checkpoint(ckpt).config;
  EXPECT_FALSE(cfg.ld);
  EXPECT_FALSE(cfg.gp);
  EXPECT_TRUE(cfg.gi);
  EXPECT_EQ(cfg.heads, 1u);
  EXPECT_EQ(cfg.scale_exponent, 0.5);
  // Plain cells carry biases and no layernorm gains.
  Model<float> model(cfg, 0);
  const auto& params = model.parameters().all();
  std::size_t cells = 0;
  for (const auto& p : params) {
    if (!p.name.ends_with(".w_h")) continue;
    ++cells;
    const auto prefix = p.name.substr(0, p.name.size() - 4);
    bool bias = false, gain = false;
    for (const auto& q : params) {
      bias |= q.name == prefix + ".bias";
      gain |= q.name.rfind(prefix + ".gain", 0) == 0;
    }
    EXPECT_TRUE(bias) << prefix;
    EXPECT_FALSE(gain) << prefix;
  }
  EXPECT_EQ(cells, 3u);
}

TEST_F(Cli, TrainConfigFileIsOverriddenByFlags) {
  ASSERT_EQ(run({"gen-data", "--n", "2", "--out", path("data"), "--max-length", "2"}).code, 0);
  std::ofstream(path("run.cfg")) << "# settings\nheads=1\n\ncf=false\nsteps=1\nbatch=1\n";
  auto r = run({"train", "--config", path("run.cfg"), "--data", path("data"), "--out", path("ckpt"),
                "--heads", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto cfg = load_checkpoint(path("ckpt/final.rced")).config;
  EXPECT_EQ(cfg.heads, 8u);
  EXPECT_FALSE(cfg.cf);
  std::ofstream(path("bad.cfg")) << "heads 4\n";
  EXPECT_EQ(run({"train", "--config", path("bad.cfg"), "--data", path("data"), "--out", path("c2")}).code,
            cli::kExitUsage);
  std::ofstream(path("unknown.cfg")) << "wings=2\n";
  EXPECT_EQ(run({"train", "--config", path("unknown.cfg"), "--data", path("data"), "--out", path("c2")}).code,
            cli::kExitUsage);
}

TEST_F(Cli, TrainUsageAndDataErrors) {
  ASSERT_EQ(run({"gen-data", "--n", "2", "--out", path("data"), "--max-length", "2"}).code, 0);
  EXPECT_EQ(run({"train", "--data", path("data"), "--out", path("o"), "--heads", "3"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "--data", path("data"), "--out", path("o"), "--steps", "0"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "--data", path("data"), "--out", path("o"), "--preset", "huge"}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"train", "--data", path("data"), "--out", path("o"), "--ld", "maybe"}).code, cli::kExitUsage);

  std::ofstream(path("data/000001.pgm"), std::ios::trunc) << "garbage";
  auto r = run({"train", "--data", path("data"), "--out", path("o"), "--steps", "1"});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("000001.pgm"), std::string::npos) << r.err;
}

TEST_F(Cli, EvalAndInferUseStoredConfig) {
  const auto ckpt = trained_checkpoint({"--no-cf"});
  auto eval = run({"eval", "--ckpt", ckpt, "--data", path("data")});
  ASSERT_EQ(eval.code, 0) << eval.err;
  ASSERT_EQ(eval.out.rfind("accuracy\t", 0), 0u);
  const double acc = std::stod(eval.out.substr(9));
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);

  EXPECT_EQ(run({"eval", "--ckpt", ckpt, "--data", path("data"), "--no-cf"}).code, 0);
  auto clash = run({"eval", "--ckpt", ckpt, "--data", path("data"), "--cf"});
  EXPECT_EQ(clash.code, cli::kExitRuntime);
  EXPECT_NE(clash.err.find("--cf"), std::string::npos) << clash.err;

  write_pgm(path("blank.pgm"), GrayImage(48, 160));
  auto infer = run({"infer", "--ckpt", ckpt, "--image", path("blank.pgm")});
  ASSERT_EQ(infer.code, 0) << infer.err;
  ASSERT_FALSE(infer.out.empty());
  EXPECT_EQ(infer.out.back(), '\n');
  const auto text = infer.out.substr(0, infer.out.size() - 1);
  EXPECT_LE(text.size(), 26u);
  for (char c : text) EXPECT_TRUE(CharSet::contains(c));
  EXPECT_EQ(run({"infer", "--ckpt", ckpt, "--image", path("blank.pgm")}).out, infer.out);
}

TEST_F(Cli, CorruptCheckpointIsIntegrityError) {
  const auto ckpt = trained_checkpoint();
  auto bytes = slurp(ckpt);
  bytes[bytes.size() / 2] ^= 0x01;
  std::ofstream(path("bad.rced"), std::ios::binary) << bytes;
  auto r = run({"eval", "--ckpt", path("bad.rced"), "--data", path("data")});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("checkpoint"), std::string::npos) << r.err;
  EXPECT_EQ(run({"infer", "--ckpt", path("missing.rced"), "--image", path("x.pgm")}).code, cli::kExitRuntime);
}

TEST_F(Cli, DumpAttentionWritesMapsAndManifest) {
  const auto ckpt = trained_checkpoint();
  write_dataset(path("one"), {render(SampleSpec{"ab"})});
  auto r = run({"dump-attention", "--ckpt", ckpt, "--image", path("one/000000.pgm"), "--out", path("att")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto manifest = lines(slurp(path("att/manifest.tsv")));
  ASSERT_GE(manifest.size(), 2u);
  EXPECT_EQ(manifest[0], "step\tchar\thead0\thead1\thead2\thead3");
  const std::size_t steps = manifest.size() - 1;
  std::size_t pgm_files = 0;
  for (const auto& e : fs::directory_iterator(path("att"))) pgm_files += e.path().extension() == ".pgm";
  EXPECT_EQ(pgm_files, steps * 4);
  for (std::size_t t = 1; t <= steps; ++t) {
    std::istringstream row(manifest[t]);
    std::string field;
    std::getline(row, field, '\t');
    EXPECT_EQ(std::stoul(field), t);
    std::getline(row, field, '\t');
    for (std::size_t j = 0; j < 4; ++j) {
      std::getline(row, field, '\t');
      const std::size_t argmax = std::stoul(field);
      auto map = read_pgm(path("att/step" + std::to_string(t) + "_head" + std::to_string(j) + ".pgm"));
      ASSERT_EQ(map.height, 3u);
      ASSERT_EQ(map.width, 20u);
      const auto brightest = static_cast<std::size_t>(
          std::max_element(map.pixels.begin(), map.pixels.end()) - map.pixels.begin());
      EXPECT_EQ(map.pixels[argmax], map.pixels[brightest]);
      EXPECT_EQ(map.pixels[brightest], 1.0f);
    }
  }
}

}  // namespace
}  // namespace rceed
