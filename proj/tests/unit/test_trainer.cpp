#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "cartooner/error.hpp"
#include "cartooner/image_io.hpp"
#include "cartooner/trainer.hpp"
#include "test_support.hpp"

namespace {

using namespace cartooner;
using namespace cartooner::train;
using cartooner::testing::synthetic_cartoon;
using cartooner::testing::synthetic_photo;
using cartooner::testing::TempDir;

struct Rig {
  explicit Rig(Stage stage, std::uint64_t seed = 0) : model(nn::ModelConfig::tiny()) {
    cfg.stage = stage;
    cfg.steps = 3;
    cfg.lr = 1e-3;
    cfg.preset = "tiny";
    cfg.seed = seed;
    cfg.data.photo_size = 32;
    cfg.data.level_resolutions = data::level_resolutions_for("tiny");
    cfg.data.batch_size = 2;
    cfg.data.superpixels = 8;
    cfg.data.seed = seed;
    cfg.checkpoint_every = 0;
    std::vector<Image> photos, cartoons;
    for (int i = 0; i < 3; ++i) {
      photos.push_back(synthetic_photo(32, i));
      cartoons.push_back(synthetic_cartoon(40, i));
    }
    dataset = std::make_unique<data::Dataset>(cfg.data, photos, cartoons);
  }
  TrainConfig cfg;
  nn::Cartooner model;
  std::unique_ptr<data::Dataset> dataset;
  loss::FeatureExtractor ext = loss::FeatureExtractor::test();
};

std::uint64_t hash_except(const nn::ParamTree& t, const std::vector<std::string>& trainable) {
  std::uint64_t h = 0;
  for (const auto& l : t.leaves()) {
    bool skip = false;
    for (const auto& s : trainable) skip = skip || nn::ParamTree::under(l.path, s);
    if (!skip) h = h * 31 + t.hash(l.path);
  }
  return h;
}

TEST(TrainConfigTest, ParseKeysAndPaths) {
  const TrainConfig c = TrainConfig::parse(
      "# comment\nstage = abstraction\nsteps = 12\nlr = 0.001  # inline\npreset = tiny\n"
      "photo_dir = photos\ncartoon_dir = /abs/cartoons\nbatch_size = 3\nlevel_resolutions = 8, 16, 24, 32, 40\n"
      "w_gram = 0.5\n",
      "/base");
  EXPECT_EQ(c.stage, Stage::Abstraction);
  EXPECT_EQ(c.steps, 12);
  EXPECT_EQ(c.lr, 0.001);
  EXPECT_EQ(c.data.photo_dir, std::filesystem::path("/base/photos"));
  EXPECT_EQ(c.data.cartoon_dir, std::filesystem::path("/abs/cartoons"));
  EXPECT_EQ(c.data.batch_size, 3);
  EXPECT_EQ(c.data.level_resolutions, (std::vector<int>{8, 16, 24, 32, 40}));
  EXPECT_EQ(c.weights.gram, 0.5);
  EXPECT_EQ(c.total_steps(), 12);
  const TrainConfig back = TrainConfig::parse(c.to_text());
  EXPECT_EQ(back.data.level_resolutions, c.data.level_resolutions);
  EXPECT_EQ(back.weights.gram, 0.5);
  EXPECT_EQ(back.stage, Stage::Abstraction);
}

TEST(TrainConfigTest, Defaults) {
  const TrainConfig c = TrainConfig::parse("");
  EXPECT_EQ(c.lr, 2e-4);
  EXPECT_EQ(c.beta1, 0.5);
  EXPECT_EQ(c.beta2, 0.999);
  EXPECT_EQ(c.data.batch_size, 8);
  EXPECT_EQ(c.total_steps(), default_steps(Stage::Joint));
  EXPECT_EQ(stage_from_string("color-target"), Stage::ColorTarget);
  EXPECT_EQ(stage_from_string("color_target"), Stage::ColorTarget);
}

TEST(TrainConfigTest, Errors) {
  EXPECT_THROW((void)TrainConfig::parse("bogus = 1"), FormatError);
  EXPECT_THROW((void)TrainConfig::parse("steps = ten"), FormatError);
  EXPECT_THROW((void)TrainConfig::parse("no equals sign"), FormatError);
  EXPECT_THROW((void)stage_from_string("warmup"), ContractError);
  EXPECT_THROW(TrainConfig::parse("lr = -1").validate(), ContractError);
  EXPECT_THROW((void)TrainConfig::load("/nonexistent/cfg.txt"), NotFoundError);
}

TEST(AdamTest, FirstStepMovesByLr) {
  nn::ParamTree tree;
  nn::Var w = tree.add("w", nn::Tensor({1, 1, 1, 2}, std::vector<double>{1.0, -2.0}));
  Adam opt({"w"}, 0.1, 0.5, 0.999, 1e-12);
  nn::mean(nn::scale(w, 3.0)).backward();
  opt.step(tree);
  // Bias-corrected first step is lr * sign(g).
  EXPECT_NEAR(w.value().values()[0], 0.9, 1e-9);
  EXPECT_NEAR(w.value().values()[1], -2.1, 1e-9);
  EXPECT_EQ(opt.steps(), 1);
  tree.zero_grad();
  tree.freeze("w");
  opt.step(tree);
  EXPECT_NEAR(w.value().values()[0], 0.9, 1e-9);
}

TEST(TrainerTest, JointStageFreezesAbstractionUnit) {
  Rig rig(Stage::Joint);
  const std::uint64_t abs_before = rig.model.params().hash(nn::kAbstractionUnit);
  const std::uint64_t gen_before = rig.model.params().hash(nn::kStrokeUnit);
  Trainer tr(rig.cfg, rig.model, *rig.dataset, rig.ext);
  for (int i = 0; i < 2; ++i) {
    const StepRecord r = tr.step();
    EXPECT_EQ(rig.model.params().hash(nn::kAbstractionUnit), abs_before);
    // The adversarial term is active from the first step.
    EXPECT_GT(r.adversarial, 0.0);
    EXPECT_GT(r.loss_d, 0.0);
    EXPECT_GT(r.color, 0.0);
    EXPECT_NEAR(r.total_g, r.texture + r.color, 1e-12);
    EXPECT_TRUE(std::isfinite(r.total_g));
  }
  EXPECT_NE(rig.model.params().hash(nn::kStrokeUnit), gen_before);
  EXPECT_NO_THROW(tr.verify_frozen());
}

TEST(TrainerTest, AbstractionStageTouchesOnlyAbstractionUnit) {
  Rig rig(Stage::Abstraction);
  const std::vector<std::string> trainable{std::string(nn::kAbstractionUnit)};
  const std::uint64_t rest = hash_except(rig.model.params(), trainable);
  const std::uint64_t abs_before = rig.model.params().hash(nn::kAbstractionUnit);
  Trainer tr(rig.cfg, rig.model, *rig.dataset, rig.ext);
  for (int i = 0; i < 2; ++i) {
    const StepRecord r = tr.step();
    EXPECT_EQ(r.loss_d, 0.0);
    EXPECT_EQ(r.color, 0.0);
    for (int b = 1; b <= 5; ++b) {
      const int k = rig.model.config().kernel_sizes[b - 1];
      const int off = (19 - k) / 2;
      const nn::Tensor big = rig.model.abstraction_kernel(0, 5).value();
      const nn::Tensor sub = rig.model.abstraction_kernel(0, b).value();
      ASSERT_EQ(sub.at(0, 0, 0, 0), big.at(0, 0, off, off));
      ASSERT_EQ(sub.at(1, 2, k - 1, k - 1), big.at(1, 2, off + k - 1, off + k - 1));
    }
  }
  EXPECT_EQ(hash_except(rig.model.params(), trainable), rest);
  EXPECT_NE(rig.model.params().hash(nn::kAbstractionUnit), abs_before);
}

TEST(TrainerTest, ColorTargetStageTouchesColorDecoderAndDiscriminator) {
  Rig rig(Stage::ColorTarget);
  const std::vector<std::string> trainable{std::string(nn::kColorDecoder), std::string(nn::kDiscColor)};
  const std::uint64_t rest = hash_except(rig.model.params(), trainable);
  Trainer tr(rig.cfg, rig.model, *rig.dataset, rig.ext);
  const StepRecord r = tr.step();
  EXPECT_GT(r.color, 0.0);
  EXPECT_NEAR(r.total_g, r.color + 0.1 * r.adversarial, 1e-12);
  EXPECT_EQ(hash_except(rig.model.params(), trainable), rest);
}

TEST(TrainerTest, ResumeIsExact) {
  // Straight run of 4 steps vs 2 + snapshot + 2.
  Rig a(Stage::Joint, 5);
  a.cfg.steps = 4;
  Trainer ta(a.cfg, a.model, *a.dataset, a.ext);
  const auto full = ta.run();

  Rig b(Stage::Joint, 5);
  b.cfg.steps = 2;
  Trainer tb(b.cfg, b.model, *b.dataset, b.ext);
  tb.run();
  const std::string bytes = ckpt::serialize(tb.snapshot());

  Rig c(Stage::Joint, 5);
  c.cfg.init_seed = 77;
  c.cfg.steps = 4;
  Trainer tc(c.cfg, c.model, *c.dataset, c.ext);
  tc.restore(ckpt::deserialize(bytes));
  EXPECT_EQ(tc.step_count(), 2);
  const auto rest = tc.run();
  ASSERT_EQ(rest.size(), 2u);
  EXPECT_EQ(rest.back().total_g, full.back().total_g);
  EXPECT_EQ(c.model.params().hash(), a.model.params().hash());

  Rig d(Stage::Abstraction, 5);
  Trainer td(d.cfg, d.model, *d.dataset, d.ext);
  EXPECT_THROW(td.restore(ckpt::deserialize(bytes)), ContractError);
}

TEST(TrainerTest, NonFiniteLossAbortsWithDump) {
  TempDir dir;
  Rig rig(Stage::Joint);
  rig.cfg.out_dir = dir.path();
  auto& leaf = rig.model.params().leaf("texture_decoder.trunk.conv_out.bias");
  leaf.var.mutable_value().fill(std::numeric_limits<double>::quiet_NaN());
  Trainer tr(rig.cfg, rig.model, *rig.dataset, rig.ext);
  EXPECT_THROW((void)tr.step(), TrainingError);
  EXPECT_TRUE(std::filesystem::exists(dir / "nan_dump_step1" / "batch.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "nan_dump_step1" / "model.ckpt"));
}

TEST(TrainerTest, RejectsMismatchedLevels) {
  Rig rig(Stage::Joint);
  data::DatasetConfig dc = rig.cfg.data;
  dc.level_resolutions = {32, 40, 52};
  const data::Dataset ds(dc, {synthetic_photo(32, 1)}, {synthetic_cartoon(40, 1)});
  EXPECT_THROW((Trainer{rig.cfg, rig.model, ds, rig.ext}), ContractError);
}

TEST(TrainerTest, RunTrainingWritesNamedCheckpoints) {
  TempDir dir;
  std::filesystem::create_directories(dir / "photos");
  std::filesystem::create_directories(dir / "cartoons");
  for (int i = 0; i < 3; ++i) {
    data::save_image(synthetic_photo(32, i), dir / "photos" / ("p" + std::to_string(i) + ".png"));
    data::save_image(synthetic_cartoon(40, i), dir / "cartoons" / ("c" + std::to_string(i) + ".png"));
  }
  TrainConfig cfg = TrainConfig::parse(
      "preset = tiny\nsteps = 2\nbatch_size = 2\nphoto_size = 32\nsuperpixels = 8\nlr = 0.001\n"
      "photo_dir = photos\ncartoon_dir = cartoons\nout_dir = run\n",
      dir.path());
  std::ostringstream progress;
  const TrainResult joint = run_training(cfg, {}, &progress);
  EXPECT_EQ(joint.records.size(), 2u);
  EXPECT_EQ(joint.model_checkpoint.filename(), "preserve.ckpt");
  EXPECT_TRUE(std::filesystem::exists(joint.checkpoint));
  EXPECT_NE(progress.str().find("\"total_g\""), std::string::npos);

  cfg.stage = Stage::ColorTarget;
  cfg.steps = 1;
  const TrainResult target = run_training(cfg, joint.model_checkpoint, nullptr);
  EXPECT_EQ(target.model_checkpoint.filename(), "target.ckpt");
  const ckpt::LoadedModel preserve = ckpt::load_model(joint.model_checkpoint);
  const ckpt::LoadedModel tgt = ckpt::load_model(target.model_checkpoint);
  EXPECT_EQ(tgt.meta.color_mode, ckpt::ColorMode::Target);
  EXPECT_EQ(preserve.meta.color_mode, ckpt::ColorMode::Preserve);
  // Only the color decoder (and its discriminator) moved.
  EXPECT_EQ(tgt.model->params().hash(nn::kEncoder), preserve.model->params().hash(nn::kEncoder));
  EXPECT_EQ(tgt.model->params().hash(nn::kTextureDecoder), preserve.model->params().hash(nn::kTextureDecoder));
  EXPECT_NE(tgt.model->params().hash(nn::kColorDecoder), preserve.model->params().hash(nn::kColorDecoder));
}

}  // namespace
