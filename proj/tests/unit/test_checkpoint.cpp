#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "rceed/checkpoint.hpp"
#include "rceed/errors.hpp"

namespace rceed {
namespace {

namespace fs = std::filesystem;
using Kind = CheckpointError::Kind;

std::vector<NamedTensor> sample_tensors() {
  return {
      {"a", testing::random_tensor({2, 3}, 1).cast<float>()},
      {"b.weight", testing::random_tensor({4}, 2).cast<float>()},
      {"c", Tensor<float>::zeros({1, 2, 3})},
  };
}

Kind decode_kind(const std::vector<unsigned char>& bytes) {
  try {
    decode_tensors(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return Kind::kIo;
}

void expect_same(const std::vector<NamedTensor>& a, const std::vector<NamedTensor>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].name, b[k].name);
    ASSERT_EQ(a[k].value.shape(), b[k].value.shape());
    EXPECT_EQ(std::memcmp(a[k].value.data().data(), b[k].value.data().data(),
                          a[k].value.size() * sizeof(float)),
              0)
        << a[k].name;
  }
}

TEST(CheckpointFormat, HeaderLayout) {
  auto bytes = encode_tensors(sample_tensors());
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RCED");
  EXPECT_EQ(bytes[4], kCheckpointVersion);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(bytes[8], 3);
  // name_len "a" rank 2 extents + 6 floats, then "b.weight" rank 1, then "c" rank 3.
  const std::size_t body = (4 + 1 + 4 + 8 + 24) + (4 + 8 + 4 + 4 + 16) + (4 + 1 + 4 + 12 + 24);
  EXPECT_EQ(bytes.size(), 12 + body + 4);
}

TEST(CheckpointFormat, EncodeDecodeIsBitExact) {
  auto tensors = sample_tensors();
  tensors[0].value[0] = -0.0f;
  tensors[0].value[1] = std::numeric_limits<float>::denorm_min();
  auto back = decode_tensors(encode_tensors(tensors));
  expect_same(tensors, back);
  EXPECT_TRUE(std::signbit(back[0].value[0]));
  EXPECT_EQ(encode_tensors(back), encode_tensors(tensors));
}

TEST(CheckpointFormat, DetectsCorruption) {
  const auto good = encode_tensors(sample_tensors());
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(decode_kind(magic), Kind::kBadMagic);
  auto version = good;
  version[4] = 9;
  EXPECT_EQ(decode_kind(version), Kind::kBadVersion);
  auto flipped = good;
  flipped[12 + 4 + 1 + 4 + 8 + 2] ^= 0x10;
  EXPECT_EQ(decode_kind(flipped), Kind::kBadCrc);
  auto crc = good;
  crc.back() ^= 1;
  EXPECT_EQ(decode_kind(crc), Kind::kBadCrc);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, good.size() - 1}) {
    auto truncated = std::vector<unsigned char>(good.begin(), good.begin() + cut);
    EXPECT_EQ(decode_kind(truncated), Kind::kTruncated) << cut;
  }
}

TEST(CheckpointFile, MissingFileIsIoError) {
  try {
    load_tensors(fs::temp_directory_path() / "rceed_no_such_checkpoint.bin");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), Kind::kIo);
  }
}

class CheckpointModels : public ::testing::TestWithParam<std::tuple<std::string, int>> {};

TEST_P(CheckpointModels, RoundTripIsBitForBit) {
  const auto [preset, toggles] = GetParam();
  auto cfg = ModelConfig::from_preset(preset);
  cfg.rectifier = toggles & 1;
  cfg.ld = toggles & 2;
  cfg.gi = toggles & 4;
  cfg.gp = toggles & 8;
  cfg.vf = toggles & 16;
  cfg.cf = toggles & 32;
  Model<float> model(cfg, 40 + toggles);
  const auto path = fs::temp_directory_path() / ("rceed_ckpt_" + preset + std::to_string(toggles));
  save_checkpoint(path, model, 123);
  auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.config, cfg);
  EXPECT_EQ(loaded.step, 123u);
  expect_same(checkpoint_tensors(model, 123), checkpoint_tensors(*loaded.model, 123));

  const auto path2 = fs::path(path.string() + ".again");
  save_checkpoint(path2, *loaded.model, 123);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {}), b2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(b1, b2);
  fs::remove(path);
  fs::remove(path2);
}

INSTANTIATE_TEST_SUITE_P(PresetsAndToggles, CheckpointModels,
                         ::testing::Combine(::testing::Values("micro", "desk"),
                                            ::testing::Values(63, 0, 21, 42, 62)));

TEST(Checkpoint, LoadedModelDecodesIdentically) {
  Model<float> model(ModelConfig::micro(), 9);
  const auto path = fs::temp_directory_path() / "rceed_ckpt_decode";
  save_checkpoint(path, model);
  auto loaded = load_checkpoint(path);
  auto image = testing::random_tensor({16, 32, 1}, 10, 0, 1).cast<float>();
  auto a = model.recognize(image);
  auto b = loaded.model->recognize(image);
  EXPECT_EQ(a.text, b.text);
  ASSERT_EQ(a.trace.steps.size(), b.trace.steps.size());
  for (std::size_t t = 0; t < a.trace.steps.size(); ++t) EXPECT_EQ(a.trace.steps[t].logits, b.trace.steps[t].logits);
  fs::remove(path);
}

TEST(Checkpoint, ConfigAndStepAreStored) {
  auto cfg = ModelConfig::micro();
  cfg.scale_exponent = 0.5;
  cfg.heads = 4;
  Model<float> model(cfg, 1);
  auto tensors = checkpoint_tensors(model, 77);
  EXPECT_EQ(checkpoint_config(tensors), cfg);
  EXPECT_EQ(checkpoint_step(tensors), 77u);
  std::size_t config_entries = 0;
  for (const auto& t : tensors) config_entries += t.name.rfind("config.", 0) == 0;
  EXPECT_GT(config_entries, 0u);
}

TEST(Checkpoint, RestoreRejectsMismatchedModels) {
  Model<float> small(ModelConfig::micro(), 1);
  Model<float> desk(ModelConfig::desk(), 1);
  auto tensors = checkpoint_tensors(small);
  try {
    restore_parameters(desk, tensors);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), Kind::kMismatch);
  }

  auto is_parameter = [](const NamedTensor& t) {
    return t.name.rfind("config.", 0) != 0 && t.name != "run.step";
  };
  auto missing = tensors;
  for (auto it = missing.begin(); it != missing.end(); ++it)
    if (is_parameter(*it)) {
      missing.erase(it);
      break;
    }
  Model<float> target(ModelConfig::micro(), 2);
  EXPECT_THROW(restore_parameters(target, missing), CheckpointError);

  auto reshaped = tensors;
  for (auto& t : reshaped)
    if (is_parameter(t)) {
      t.value = Tensor<float>::zeros({t.value.size() + 1});
      break;
    }
  EXPECT_THROW(restore_parameters(target, reshaped), CheckpointError);
}

TEST(Checkpoint, RestoreCopiesValues) {
  Model<float> source(ModelConfig::micro(), 3);
  Model<float> target(ModelConfig::micro(), 4);
  restore_parameters(target, checkpoint_tensors(source));
  expect_same(checkpoint_tensors(source), checkpoint_tensors(target));
}

}  // namespace
}  // namespace rceed
