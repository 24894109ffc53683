#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cartooner/checkpoint.hpp"
#include "cartooner/error.hpp"
#include "test_support.hpp"

namespace {

using namespace cartooner;
using namespace cartooner::ckpt;
using cartooner::testing::random_tensor;
using cartooner::testing::TempDir;

Archive sample_archive() {
  Archive a;
  a.manifest["kind"] = "test";
  a.manifest["list"] = {1, 2, 3};
  a.arrays.emplace_back("x.weight", random_tensor({2, 3, 4, 5}, 1));
  a.arrays.emplace_back("y", nn::Tensor({1, 1, 1, 1}, -0.0));
  return a;
}

TEST(Archive, SerializeRoundTripIsBitExact) {
  const Archive a = sample_archive();
  const std::string bytes = serialize(a);
  EXPECT_EQ(bytes.substr(0, 8), "CRTNCKPT");
  const Archive b = deserialize(bytes);
  EXPECT_EQ(b.manifest, a.manifest);
  ASSERT_EQ(b.arrays.size(), 2u);
  EXPECT_EQ(b.arrays[0].first, "x.weight");
  EXPECT_EQ(b.arrays[0].second, a.arrays[0].second);
  EXPECT_TRUE(std::signbit(b.find("y")->values()[0]));
  EXPECT_EQ(b.find("missing"), nullptr);
  EXPECT_EQ(serialize(b), bytes);
}

TEST(Archive, CorruptionIsFormatError) {
  const std::string bytes = serialize(sample_archive());
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW((void)deserialize(flipped), FormatError);
  EXPECT_THROW((void)deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW((void)deserialize(bytes.substr(0, 5)), FormatError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW((void)deserialize(magic), FormatError);
  EXPECT_THROW((void)deserialize(""), FormatError);
}

TEST(Archive, FilesAndMissingPaths) {
  TempDir dir;
  write_archive(sample_archive(), dir / "sub" / "a.ckpt");
  const Archive back = read_archive(dir / "sub" / "a.ckpt");
  EXPECT_EQ(back.manifest["kind"], "test");
  EXPECT_EQ(read_manifest(dir / "sub" / "a.ckpt")["list"], nlohmann::json({1, 2, 3}));
  EXPECT_THROW((void)read_archive(dir / "none.ckpt"), NotFoundError);
  EXPECT_THROW((void)read_manifest(dir / "none.ckpt"), NotFoundError);
  std::ofstream(dir / "junk.ckpt") << "junk";
  EXPECT_THROW((void)read_archive(dir / "junk.ckpt"), FormatError);
}

TEST(ModelCheckpoint, RoundTripRestoresEveryLeaf) {
  TempDir dir;
  nn::ModelConfig cfg = nn::ModelConfig::tiny();
  cfg.init_seed = 9;
  const nn::Cartooner model(cfg);
  ModelMeta meta;
  meta.color_mode = ColorMode::Target;
  meta.stage = "color_target";
  meta.step = 42;
  save_model(model, meta, dir / "m.ckpt");
  const LoadedModel loaded = load_model(dir / "m.ckpt");
  EXPECT_EQ(loaded.model->params().hash(), model.params().hash());
  EXPECT_EQ(loaded.model->config().preset, "tiny");
  EXPECT_EQ(loaded.model->config().init_seed, 9u);
  EXPECT_EQ(loaded.meta.color_mode, ColorMode::Target);
  EXPECT_EQ(loaded.meta.stage, "color_target");
  EXPECT_EQ(loaded.meta.step, 42);
  EXPECT_FALSE(loaded.meta.model_version.empty());
}

TEST(ModelCheckpoint, MissingOrMisshapenLeafIsFormatError) {
  const nn::Cartooner model(nn::ModelConfig::tiny());
  Archive a = model_archive(model, ModelMeta{});
  Archive missing = a;
  missing.arrays.pop_back();
  EXPECT_THROW((void)model_from_archive(missing), FormatError);
  Archive reshaped = a;
  reshaped.arrays[0].second = nn::Tensor({1, 1, 1, 1});
  EXPECT_THROW((void)model_from_archive(reshaped), FormatError);
  Archive schema = a;
  schema.manifest["schema_version"] = 99;
  EXPECT_THROW((void)model_from_archive(schema), FormatError);
}

TEST(ModelCheckpoint, ConfigJsonRoundTrip) {
  nn::ModelConfig cfg = nn::ModelConfig::paper();
  cfg.leaky_slope = 0.1;
  const nn::ModelConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(back.base_channels, cfg.base_channels);
  EXPECT_EQ(back.cardinality, cfg.cardinality);
  EXPECT_EQ(back.kernel_sizes, cfg.kernel_sizes);
  EXPECT_EQ(back.leaky_slope, 0.1);
  EXPECT_EQ(back.image_size, 256);
}

TEST(ModelCheckpoint, ColorModeStrings) {
  EXPECT_EQ(to_string(ColorMode::Preserve), "preserve");
  EXPECT_EQ(color_mode_from_string("target"), ColorMode::Target);
  EXPECT_THROW((void)color_mode_from_string("sepia"), ContractError);
}

}  // namespace
