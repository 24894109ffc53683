#include "cartooner/losses.hpp"

#include <array>
#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

#include "cartooner/error.hpp"

namespace cartooner::loss {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

struct LayerDef {
  const char* name;
  int in;
  int out;
  FeatureExtractor::Pool pool;
  bool relu;
};

constexpr std::array<LayerDef, 12> kVgg19{{
    {"conv1_1", 3, 64, FeatureExtractor::Pool::None, true},
    {"conv1_2", 64, 64, FeatureExtractor::Pool::None, true},
    {"conv2_1", 64, 128, FeatureExtractor::Pool::Max, true},
    {"conv2_2", 128, 128, FeatureExtractor::Pool::None, true},
    {"conv3_1", 128, 256, FeatureExtractor::Pool::Max, true},
    {"conv3_2", 256, 256, FeatureExtractor::Pool::None, true},
    {"conv3_3", 256, 256, FeatureExtractor::Pool::None, true},
    {"conv3_4", 256, 256, FeatureExtractor::Pool::None, true},
    {"conv4_1", 256, 512, FeatureExtractor::Pool::Max, true},
    {"conv4_2", 512, 512, FeatureExtractor::Pool::None, true},
    {"conv4_3", 512, 512, FeatureExtractor::Pool::None, true},
    {"conv4_4", 512, 512, FeatureExtractor::Pool::None, false},
}};

constexpr std::array<LayerDef, 4> kPyramid{{
    {"conv1", 3, 8, FeatureExtractor::Pool::None, true},
    {"conv2", 8, 16, FeatureExtractor::Pool::Avg, true},
    {"conv3", 16, 16, FeatureExtractor::Pool::Avg, true},
    {"conv4", 16, 16, FeatureExtractor::Pool::None, false},
}};

std::string_view pool_name(FeatureExtractor::Pool p) {
  switch (p) {
    case FeatureExtractor::Pool::Max: return "max";
    case FeatureExtractor::Pool::Avg: return "avg";
    default: return "none";
  }
}

FeatureExtractor::Pool pool_from(std::string_view s) {
  if (s == "max") return FeatureExtractor::Pool::Max;
  if (s == "avg") return FeatureExtractor::Pool::Avg;
  if (s == "none") return FeatureExtractor::Pool::None;
  throw FormatError("extractor: unknown pool kind '" + std::string(s) + "'");
}

Var weighted_sum(std::initializer_list<Var> terms, std::initializer_list<double> weights) {
  std::vector<Var> items(terms);
  std::vector<double> w(weights);
  for (const Var& v : items) {
    if (!v.defined() || v.value().size() != 1) throw ContractError("loss terms must be scalars");
  }
  return nn::blend(items, w);
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {adversarial, content, gram, tv, color_recon, color_adversarial}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("loss weights must be finite and non-negative");
  }
}

FeatureExtractor FeatureExtractor::test(std::uint64_t seed) {
  FeatureExtractor e;
  e.kind_ = "pyramid";
  std::mt19937_64 rng(seed);
  for (const LayerDef& d : kPyramid) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (d.in * 9.0)));
    Tensor w(Shape{d.out, d.in, 3, 3});
    for (double& v : w.values()) v = dist(rng);
    Tensor b(Shape{1, d.out, 1, 1});
    for (double& v : b.values()) v = 0.01 * dist(rng);
    e.layers_.push_back({d.name, d.pool, d.relu, Var::constant(std::move(w)), Var::constant(std::move(b))});
  }
  return e;
}

FeatureExtractor FeatureExtractor::vgg19(const ckpt::Archive& archive) {
  FeatureExtractor e;
  e.kind_ = "vgg19";
  for (const LayerDef& d : kVgg19) {
    const Tensor* w = archive.find(std::string(d.name) + ".weight");
    const Tensor* b = archive.find(std::string(d.name) + ".bias");
    if (w == nullptr || b == nullptr) {
      throw FormatError(std::string("vgg19 archive is missing layer ") + d.name);
    }
    if (w->shape() != Shape{d.out, d.in, 3, 3} || b->shape() != Shape{1, d.out, 1, 1}) {
      throw FormatError(std::string("vgg19 archive: wrong shape for ") + d.name);
    }
    e.layers_.push_back({d.name, d.pool, d.relu, Var::constant(*w), Var::constant(*b)});
  }
  return e;
}

FeatureExtractor FeatureExtractor::load(const std::filesystem::path& path) {
  const ckpt::Archive a = ckpt::read_archive(path);
  const std::string kind = a.manifest.value("extractor", std::string());
  if (kind == "vgg19") return vgg19(a);
  if (kind != "pyramid") throw FormatError("unknown extractor kind '" + kind + "' in " + path.string());
  FeatureExtractor e;
  e.kind_ = kind;
  try {
    for (const auto& l : a.manifest.at("layers")) {
      const std::string name = l.at("name").get<std::string>();
      const Tensor* w = a.find(name + ".weight");
      const Tensor* b = a.find(name + ".bias");
      if (w == nullptr || b == nullptr) throw FormatError("extractor archive is missing " + name);
      e.layers_.push_back({name, pool_from(l.at("pool").get<std::string>()), l.at("relu").get<bool>(),
                           Var::constant(*w), Var::constant(*b)});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("extractor manifest: ") + ex.what());
  }
  if (e.layers_.empty()) throw FormatError("extractor archive has no layers");
  return e;
}

FeatureExtractor FeatureExtractor::load_or_test(const std::filesystem::path& path, std::uint64_t seed) {
  if (!path.empty() && std::filesystem::exists(path)) return load(path);
  if (path.empty()) {
    spdlog::warn("no perceptual extractor configured; using the seeded test pyramid");
  } else {
    spdlog::warn("perceptual extractor {} not found; using the seeded test pyramid", path.string());
  }
  return test(seed);
}

ckpt::Archive FeatureExtractor::to_archive() const {
  ckpt::Archive a;
  a.manifest["extractor"] = kind_;
  a.manifest["layers"] = nlohmann::json::array();
  for (const Layer& l : layers_) {
    a.manifest["layers"].push_back({{"name", l.name}, {"pool", pool_name(l.pool_before)}, {"relu", l.relu}});
    a.arrays.emplace_back(l.name + ".weight", l.weight.value());
    a.arrays.emplace_back(l.name + ".bias", l.bias.value());
  }
  return a;
}

Var FeatureExtractor::forward(const Var& x) const {
  if (layers_.empty()) throw ContractError("feature extractor has no layers");
  Var y = x;
  for (const Layer& l : layers_) {
    if (l.pool_before == Pool::Max) y = nn::max_pool(y, 2);
    if (l.pool_before == Pool::Avg) y = nn::avg_pool(y, 2);
    y = nn::conv2d(y, l.weight, l.bias, {1, l.weight.shape().h / 2, 1});
    if (l.relu) y = nn::leaky_relu(y, 0.0);
  }
  return y;
}

Var FeatureExtractor::features_from_l(const Var& l) const {
  if (l.shape().c != 1) throw ContractError("features_from_l: expected one channel, got " + l.shape().str());
  const int src[3] = {0, 0, 0};
  const double scale[3] = {127.5, 127.5, 127.5};
  const double offset[3] = {127.5 - kCaffeMeanBgr[0], 127.5 - kCaffeMeanBgr[1], 127.5 - kCaffeMeanBgr[2]};
  return forward(nn::channel_affine(l, src, scale, offset));
}

Var FeatureExtractor::features_from_rgb(const Var& rgb) const {
  if (rgb.shape().c != 3) throw ContractError("features_from_rgb: expected three channels");
  const int src[3] = {2, 1, 0};
  const double scale[3] = {255.0, 255.0, 255.0};
  const double offset[3] = {-kCaffeMeanBgr[0], -kCaffeMeanBgr[1], -kCaffeMeanBgr[2]};
  return forward(nn::channel_affine(rgb, src, scale, offset));
}

int FeatureExtractor::out_channels() const {
  return layers_.empty() ? 0 : layers_.back().weight.shape().n;
}

std::uint64_t FeatureExtractor::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Layer& l : layers_) {
    h = nn::bit_hash(l.weight.value().values(), h);
    h = nn::bit_hash(l.bias.value().values(), h);
  }
  return h;
}

Var gan_d_loss(const Var& real_logits, const Var& fake_logits) {
  return nn::add(nn::mean(nn::softplus(nn::scale(real_logits, -1.0))), nn::mean(nn::softplus(fake_logits)));
}

Var gan_g_loss(const Var& fake_logits) { return nn::mean(nn::softplus(nn::scale(fake_logits, -1.0))); }

Var adv_texture_D(const nn::Cartooner& model, const Var& real, const Var& fake, int level) {
  return gan_d_loss(model.disc_texture(real, level), model.disc_texture(fake, level));
}

Var adv_texture_G(const nn::Cartooner& model, const Var& fake, int level) {
  return gan_g_loss(model.disc_texture(fake, level));
}

Var content_loss(const FeatureExtractor& ext, const Var& src_l, const Var& out_l) {
  if (src_l.shape() != out_l.shape()) {
    throw ContractError("content_loss: shapes differ " + src_l.shape().str() + " vs " + out_l.shape().str());
  }
  return nn::mean_abs_diff(ext.features_from_l(src_l), ext.features_from_l(out_l));
}

Var gram_loss(const FeatureExtractor& ext, const Var& tgt_l, const Var& out_l) {
  if (tgt_l.shape().n != out_l.shape().n) throw ContractError("gram_loss: batch sizes differ");
  return nn::mean_abs_diff(nn::gram(ext.features_from_l(tgt_l)), nn::gram(ext.features_from_l(out_l)));
}

Var tv_loss(const Var& img) { return nn::total_variation(img); }

Var total_texture_loss(const TextureTerms& t, const LossWeights& w) {
  return weighted_sum({t.adversarial, t.content, t.gram, t.tv}, {w.adversarial, w.content, w.gram, w.tv});
}

Var color_recon_loss(const Var& target_ab, const Var& pred_ab) {
  if (target_ab.shape() != pred_ab.shape()) throw ContractError("color_recon_loss: shapes differ");
  if (pred_ab.shape().c != 2) throw ContractError("color_recon_loss: expected ab channels");
  return nn::mse(pred_ab, target_ab);
}

Var adv_color_D(const nn::Cartooner& model, const Var& real_ab, const Var& fake_ab) {
  return gan_d_loss(model.disc_color(real_ab), model.disc_color(fake_ab));
}

Var adv_color_G(const nn::Cartooner& model, const Var& fake_ab) { return gan_g_loss(model.disc_color(fake_ab)); }

Var color_finetune_loss(const Var& recon, const Var& adversarial, const LossWeights& w) {
  return weighted_sum({recon, adversarial}, {w.color_recon, w.color_adversarial});
}

}  // namespace cartooner::loss
