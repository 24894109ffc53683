#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cartooner/autograd.hpp"
#include "cartooner/checkpoint.hpp"
#include "cartooner/network.hpp"

namespace cartooner::loss {

struct LossWeights {
  // texture objective
  double adversarial = 1.0;
  double content = 0.0025;
  double gram = 0.0045;
  double tv = 0.0015;
  // target-color fine-tune
  double color_recon = 1.0;
  double color_adversarial = 0.1;

  void validate() const;
};

// Fixed convolutional feature function with Caffe-style preprocessing
// (0-255 scale, BGR order, per-channel mean subtraction). Weights are
// constants: no gradient is ever accumulated into them.
class FeatureExtractor {
 public:
  enum class Pool { None, Max, Avg };
  struct Layer {
    std::string name;
    Pool pool_before = Pool::None;
    bool relu = true;
    nn::Var weight;
    nn::Var bias;
  };

  FeatureExtractor() = default;

  // Seeded random pyramid for hermetic tests: four 3x3 convs (8, 16, 16,
  // 16 channels) with average pooling after the first two.
  static FeatureExtractor test(std::uint64_t seed = 7);
  // VGG19 conv1_1 .. conv4_4 from an archive holding "<layer>.weight"
  // (out, in, 3, 3, BGR input) and "<layer>.bias" arrays.
  static FeatureExtractor vgg19(const ckpt::Archive& archive);
  static FeatureExtractor load(const std::filesystem::path& path);
  // Falls back to test() with a logged warning when `path` is empty or missing.
  static FeatureExtractor load_or_test(const std::filesystem::path& path, std::uint64_t seed = 7);

  [[nodiscard]] ckpt::Archive to_archive() const;

  // x already preprocessed: (N, 3, H, W) Caffe BGR.
  [[nodiscard]] nn::Var forward(const nn::Var& x) const;
  // Normalized L in [-1, 1] replicated to three channels.
  [[nodiscard]] nn::Var features_from_l(const nn::Var& l) const;
  // RGB in [0, 1].
  [[nodiscard]] nn::Var features_from_rgb(const nn::Var& rgb) const;

  [[nodiscard]] const std::string& kind() const { return kind_; }
  [[nodiscard]] int out_channels() const;
  [[nodiscard]] std::uint64_t hash() const;
  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::string kind_;
  std::vector<Layer> layers_;
};

inline constexpr double kCaffeMeanBgr[3] = {103.939, 116.779, 123.68};

// Sigmoid cross-entropy on logits, averaged over the patch map.
// D: softplus(-real) + softplus(fake); G (non-saturating): softplus(-fake).
nn::Var gan_d_loss(const nn::Var& real_logits, const nn::Var& fake_logits);
nn::Var gan_g_loss(const nn::Var& fake_logits);

// Routed through disc_texture head `level`. `fake` should be detached for
// the discriminator step.
nn::Var adv_texture_D(const nn::Cartooner& model, const nn::Var& real, const nn::Var& fake, int level);
nn::Var adv_texture_G(const nn::Cartooner& model, const nn::Var& fake, int level);

nn::Var content_loss(const FeatureExtractor& ext, const nn::Var& src_l, const nn::Var& out_l);
// Items are paired by batch index; spatial sizes may differ.
nn::Var gram_loss(const FeatureExtractor& ext, const nn::Var& tgt_l, const nn::Var& out_l);
nn::Var tv_loss(const nn::Var& img);

struct TextureTerms {
  nn::Var adversarial;
  nn::Var content;
  nn::Var gram;
  nn::Var tv;
};

nn::Var total_texture_loss(const TextureTerms& terms, const LossWeights& w);

nn::Var color_recon_loss(const nn::Var& target_ab, const nn::Var& pred_ab);
nn::Var adv_color_D(const nn::Cartooner& model, const nn::Var& real_ab, const nn::Var& fake_ab);
nn::Var adv_color_G(const nn::Cartooner& model, const nn::Var& fake_ab);
nn::Var color_finetune_loss(const nn::Var& recon, const nn::Var& adversarial, const LossWeights& w);

}  // namespace cartooner::loss
