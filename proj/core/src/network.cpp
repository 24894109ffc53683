#include "cartooner/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cartooner/error.hpp"

namespace cartooner::nn {
namespace {

std::uint64_t path_seed(std::uint64_t base, std::string_view path) {
  std::uint64_t h = 1469598103934665603ULL ^ base;
  for (char c : path) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor normal_init(Shape shape, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

double he_gain(double slope) { return std::sqrt(2.0 / (1.0 + slope * slope)); }

bool is_integer(double v) { return std::floor(v) == v; }

void fill_weights(double alpha, int n, std::span<double> w) {
  std::fill(w.begin(), w.end(), 0.0);
  if (is_integer(alpha) && alpha >= 1.0 && alpha <= n) {
    w[static_cast<int>(alpha) - 1] = 1.0;
    return;
  }
  int k = static_cast<int>(std::floor(alpha));
  k = std::clamp(k, 1, n - 1);
  const double t = alpha - k;
  w[k - 1] = 1.0 - t;
  w[k] = t;
}

}  // namespace

// ---- ModelConfig ---------------------------------------------------------

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.base_channels = 64;
  c.resnext_blocks = 4;
  c.cardinality = 32;
  c.image_size = 256;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.preset = "tiny";
  c.base_channels = 4;
  c.resnext_blocks = 1;
  c.cardinality = 2;
  c.image_size = 32;
  return c;
}

ModelConfig ModelConfig::from_preset(std::string_view name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  if (name == "tiny") return tiny();
  throw ContractError("unknown model preset '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (base_channels < 1 || resnext_blocks < 0 || cardinality < 1) {
    throw ContractError("model config: non-positive channel settings");
  }
  if (bottleneck_channels() % cardinality != 0) {
    throw ContractError("model config: bottleneck width " + std::to_string(bottleneck_channels()) +
                        " not divisible by cardinality " + std::to_string(cardinality));
  }
  if (num_levels < 2) throw ContractError("model config: need at least two texture levels");
  if (static_cast<int>(kernel_sizes.size()) != num_levels) {
    throw ContractError("model config: one abstraction kernel size per level required");
  }
  for (std::size_t i = 0; i < kernel_sizes.size(); ++i) {
    if (kernel_sizes[i] < 1 || kernel_sizes[i] % 2 == 0) {
      throw ContractError("model config: abstraction kernel sizes must be odd");
    }
    if (i > 0 && kernel_sizes[i] <= kernel_sizes[i - 1]) {
      throw ContractError("model config: abstraction kernel sizes must increase");
    }
  }
  if (image_size % Cartooner::kDownsample != 0) {
    throw ContractError("model config: image size must be divisible by 4");
  }
}

// ---- ParamTree -------------------------------------------------------------

bool ParamTree::under(std::string_view path, std::string_view subtree) {
  if (subtree.empty()) return true;
  if (path.size() < subtree.size() || path.substr(0, subtree.size()) != subtree) return false;
  return path.size() == subtree.size() || path[subtree.size()] == '.';
}

Var ParamTree::add(std::string path, Tensor init) {
  if (index_.contains(path)) throw ContractError("duplicate parameter path " + path);
  Var v = Var::leaf(std::move(init), true);
  index_.emplace(path, leaves_.size());
  leaves_.push_back(ParamLeaf{std::move(path), v, false});
  return v;
}

bool ParamTree::has_subtree(std::string_view subtree) const {
  return std::any_of(leaves_.begin(), leaves_.end(),
                     [&](const ParamLeaf& l) { return under(l.path, subtree); });
}

void ParamTree::set_frozen(std::string_view subtree, bool frozen) {
  if (subtree.empty() || !has_subtree(subtree)) {
    throw ContractError("unknown parameter subtree '" + std::string(subtree) + "'");
  }
  for (ParamLeaf& l : leaves_) {
    if (!under(l.path, subtree)) continue;
    l.frozen = frozen;
    l.var.set_requires_grad(!frozen);
    if (frozen) l.var.zero_grad();
  }
}

void ParamTree::freeze(std::string_view subtree) { set_frozen(subtree, true); }
void ParamTree::unfreeze(std::string_view subtree) { set_frozen(subtree, false); }

void ParamTree::freeze(std::span<const std::string> subtrees) {
  for (const auto& s : subtrees) {
    if (!has_subtree(s)) throw ContractError("unknown parameter subtree '" + s + "'");
  }
  for (const auto& s : subtrees) freeze(s);
}

void ParamTree::unfreeze(std::span<const std::string> subtrees) {
  for (const auto& s : subtrees) {
    if (!has_subtree(s)) throw ContractError("unknown parameter subtree '" + s + "'");
  }
  for (const auto& s : subtrees) unfreeze(s);
}

void ParamTree::freeze_all_except(std::span<const std::string> trainable) {
  for (const auto& s : trainable) {
    if (!has_subtree(s)) throw ContractError("unknown parameter subtree '" + s + "'");
  }
  for (ParamLeaf& l : leaves_) {
    const bool keep = std::any_of(trainable.begin(), trainable.end(),
                                  [&](const std::string& s) { return under(l.path, s); });
    l.frozen = !keep;
    l.var.set_requires_grad(keep);
    if (!keep) l.var.zero_grad();
  }
}

void ParamTree::unfreeze_all() {
  for (ParamLeaf& l : leaves_) {
    l.frozen = false;
    l.var.set_requires_grad(true);
  }
}

bool ParamTree::is_frozen(std::string_view path) const { return leaf(path).frozen; }

const ParamLeaf& ParamTree::leaf(std::string_view path) const {
  auto it = index_.find(std::string(path));
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(path) + "'");
  return leaves_[it->second];
}

ParamLeaf& ParamTree::leaf(std::string_view path) {
  return const_cast<ParamLeaf&>(std::as_const(*this).leaf(path));
}

std::size_t ParamTree::count(std::string_view subtree) const {
  std::size_t n = 0;
  for (const ParamLeaf& l : leaves_) {
    if (under(l.path, subtree)) n += l.var.value().size();
  }
  return n;
}

std::uint64_t ParamTree::hash(std::string_view subtree) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const ParamLeaf& l : leaves_) {
    if (under(l.path, subtree)) h = bit_hash(l.var.value().values(), h);
  }
  return h;
}

void ParamTree::zero_grad() {
  for (ParamLeaf& l : leaves_) l.var.zero_grad();
}

// ---- levels and branch mixing -----------------------------------------------

void validate_levels(const TextureLevels& levels, int num_levels, bool extrapolate) {
  for (double a : {levels.stroke, levels.abstraction}) {
    if (!std::isfinite(a)) throw RangeError("texture level must be finite");
    if (!extrapolate && (a < 1.0 || a > num_levels)) {
      throw RangeError("texture level " + std::to_string(a) + " outside [1, " +
                       std::to_string(num_levels) + "]");
    }
  }
}

std::vector<int> BranchMix::active() const {
  std::vector<int> out;
  if (!spatial()) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] != 0.0) out.push_back(static_cast<int>(i) + 1);
    }
    return out;
  }
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto v = maps[i].values();
    if (std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; })) {
      out.push_back(static_cast<int>(i) + 1);
    }
  }
  return out;
}

BranchMix branch_mix(double alpha, int num_levels, bool extrapolate) {
  if (!std::isfinite(alpha) || (!extrapolate && (alpha < 1.0 || alpha > num_levels))) {
    throw RangeError("texture level " + std::to_string(alpha) + " outside [1, " +
                     std::to_string(num_levels) + "]");
  }
  BranchMix mix;
  mix.weights.assign(num_levels, 0.0);
  fill_weights(alpha, num_levels, mix.weights);
  return mix;
}

BranchMix branch_mix(const Tensor& alpha_map, int num_levels, bool extrapolate) {
  const Shape& s = alpha_map.shape();
  if (s.n != 1 || s.c != 1) throw ContractError("branch_mix: alpha map must be (1, 1, h, w)");
  BranchMix mix;
  mix.maps.assign(num_levels, Tensor(s));
  std::vector<double> w(num_levels);
  for (std::size_t i = 0; i < s.plane(); ++i) {
    const double a = alpha_map.data()[i];
    if (!std::isfinite(a) || (!extrapolate && (a < 1.0 || a > num_levels))) {
      throw RangeError("texture level " + std::to_string(a) + " outside [1, " +
                       std::to_string(num_levels) + "]");
    }
    fill_weights(a, num_levels, w);
    for (int k = 0; k < num_levels; ++k) mix.maps[k].data()[i] = w[k];
  }
  return mix;
}

TextureMix TextureMix::global(const TextureLevels& levels, int num_levels, bool extrapolate) {
  return {branch_mix(levels.stroke, num_levels, extrapolate),
          branch_mix(levels.abstraction, num_levels, extrapolate)};
}

Var mix_branches(std::span<const Var> branch_features, const BranchMix& mix) {
  const std::vector<int> active = mix.active();
  if (active.empty()) throw ContractError("mix_branches: no active branch");
  std::vector<Var> items;
  for (int b : active) {
    if (b > static_cast<int>(branch_features.size()) || !branch_features[b - 1].defined()) {
      throw ContractError("mix_branches: missing features for branch " + std::to_string(b));
    }
    items.push_back(branch_features[b - 1]);
  }
  if (mix.spatial()) {
    std::vector<Tensor> maps;
    for (int b : active) maps.push_back(mix.maps[b - 1]);
    return blend_spatial(items, maps);
  }
  std::vector<double> w;
  for (int b : active) w.push_back(mix.weights[b - 1]);
  if (items.size() == 1 && w[0] == 1.0) return items[0];
  return blend(items, w);
}

// ---- layers ----------------------------------------------------------------

Conv2d::Conv2d(ParamTree& tree, const std::string& path, int in_ch, int out_ch, int kernel,
               ConvSpec s, std::uint64_t seed, double gain)
    : spec(s) {
  const int fan_in = (in_ch / s.groups) * kernel * kernel;
  weight = tree.add(path + ".weight",
                    normal_init(Shape{out_ch, in_ch / s.groups, kernel, kernel},
                                gain / std::sqrt(static_cast<double>(fan_in)),
                                path_seed(seed, path)));
  bias = tree.add(path + ".bias", Tensor(Shape{1, out_ch, 1, 1}));
}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, weight, bias, spec); }

ResNeXtBlock::ResNeXtBlock(ParamTree& tree, const std::string& path, const ModelConfig& cfg)
    : slope(cfg.leaky_slope) {
  const int c = cfg.feature_channels();
  const int w = cfg.bottleneck_channels();
  const double g = he_gain(cfg.leaky_slope);
  reduce = Conv2d(tree, path + ".reduce", c, w, 1, {}, cfg.init_seed, g);
  grouped = Conv2d(tree, path + ".grouped", w, w, 3, {1, 1, cfg.cardinality}, cfg.init_seed, g);
  // Residual branch starts small so stacked blocks begin near identity.
  expand = Conv2d(tree, path + ".expand", w, c, 1, {}, cfg.init_seed, 0.1 * g);
}

Var ResNeXtBlock::operator()(const Var& x) const {
  Var y = leaky_relu(reduce(x), slope);
  y = leaky_relu(grouped(y), slope);
  y = leaky_relu(expand(y), slope);
  return add(x, y);
}

// ---- Cartooner ---------------------------------------------------------------

Cartooner::Cartooner(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int b = config_.base_channels;
  const int cf = config_.feature_channels();
  const int n = config_.num_levels;
  const double g = he_gain(config_.leaky_slope);
  const std::uint64_t seed = config_.init_seed;
  ParamTree& t = params_;

  enc_in_ = Conv2d(t, "encoder.conv_in", 3, b, 7, {1, 3, 1}, seed, g);
  enc_down1_ = Conv2d(t, "encoder.down1", b, 2 * b, 3, {2, 1, 1}, seed, g);
  enc_down2_ = Conv2d(t, "encoder.down2", 2 * b, cf, 3, {2, 1, 1}, seed, g);
  for (int i = 0; i < config_.resnext_blocks; ++i) {
    enc_blocks_.emplace_back(t, "encoder.block" + std::to_string(i), config_);
  }

  for (int i = 1; i <= n; ++i) {
    const std::string p = "texture_decoder.stroke_unit.branch" + std::to_string(i);
    stroke_.push_back({Conv2d(t, p + ".conv1", cf, cf, 3, {1, 1, 1}, seed, g),
                       Conv2d(t, p + ".conv2", cf, cf, 3, {1, 1, 1}, seed, g)});
  }
  // One stored K_N x K_N kernel per layer; branch i uses its centered K_i crop.
  const int kmax = config_.kernel_sizes.back();
  for (int layer = 0; layer < 2; ++layer) {
    const std::string p = "texture_decoder.abstraction_unit.conv" + std::to_string(layer + 1);
    abs_weight_[layer] = t.add(p + ".weight",
                               normal_init(Shape{cf, cf, kmax, kmax},
                                           g / std::sqrt(static_cast<double>(cf * kmax * kmax)),
                                           path_seed(seed, p)));
    abs_bias_[layer] = t.add(p + ".bias", Tensor(Shape{1, cf, 1, 1}));
  }
  for (int i = 0; i < config_.resnext_blocks; ++i) {
    tex_blocks_.emplace_back(t, "texture_decoder.trunk.block" + std::to_string(i), config_);
  }
  tex_up1_ = Conv2d(t, "texture_decoder.trunk.up1", cf, 2 * b, 3, {1, 1, 1}, seed, g);
  tex_up2_ = Conv2d(t, "texture_decoder.trunk.up2", 2 * b, b, 3, {1, 1, 1}, seed, g);
  tex_out_ = Conv2d(t, "texture_decoder.trunk.conv_out", b, 1, 7, {1, 3, 1}, seed, 1.0);

  for (int i = 0; i < config_.resnext_blocks; ++i) {
    col_blocks_.emplace_back(t, "color_decoder.block" + std::to_string(i), config_);
  }
  col2_ = Conv2d(t, "color_decoder.col2", cf + 3, 2 * b, 3, {1, 1, 1}, seed, g);
  col3_ = Conv2d(t, "color_decoder.col3", 2 * b + 3, b, 3, {1, 1, 1}, seed, g);
  col_out_ = Conv2d(t, "color_decoder.conv_out", b, 2, 7, {1, 3, 1}, seed, 1.0);

  auto make_disc = [&](const std::string& p, int in_ch, int heads) {
    Discriminator d;
    d.c1 = Conv2d(t, p + ".trunk.conv1", in_ch, b, 3, {2, 1, 1}, seed, g);
    d.c2 = Conv2d(t, p + ".trunk.conv2", b, 2 * b, 3, {2, 1, 1}, seed, g);
    d.c3 = Conv2d(t, p + ".trunk.conv3", 2 * b, cf, 3, {2, 1, 1}, seed, g);
    for (int h = 1; h <= heads; ++h) {
      const std::string hp = heads == 1 ? p + ".head" : p + ".head" + std::to_string(h);
      d.heads.push_back(Conv2d(t, hp, cf, 1, 1, {}, seed, 1.0));
    }
    return d;
  };
  disc_tex_ = make_disc("disc_texture", 1, n);
  disc_col_ = make_disc("disc_color", 2, 1);
}

Var Cartooner::run_blocks(const std::vector<ResNeXtBlock>& blocks, Var x) const {
  for (const ResNeXtBlock& blk : blocks) x = blk(x);
  return x;
}

Var Cartooner::encode(const Var& lab) const {
  const Shape& s = lab.shape();
  if (s.c != 3) throw ContractError("encode: expected 3-channel Lab input, got " + s.str());
  if (s.h % kDownsample != 0 || s.w % kDownsample != 0 || s.h == 0 || s.w == 0) {
    throw ContractError("encode: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                        " not divisible by 4");
  }
  Var x = lrelu(enc_in_(lab));
  x = lrelu(enc_down1_(x));
  x = lrelu(enc_down2_(x));
  return run_blocks(enc_blocks_, x);
}

std::vector<Var> Cartooner::stroke_branches(const Var& f, std::span<const int> which) const {
  std::vector<Var> out(config_.num_levels);
  for (int b : which) {
    if (b < 1 || b > config_.num_levels) throw RangeError("stroke branch index out of range");
    const StrokeBranch& br = stroke_[b - 1];
    out[b - 1] = lrelu(br.second(lrelu(br.first(f))));
  }
  return out;
}

Var Cartooner::abstraction_kernel(int layer, int branch) const {
  if (layer < 0 || layer > 1) throw ContractError("abstraction layer must be 0 or 1");
  if (branch < 1 || branch > config_.num_levels) throw RangeError("abstraction branch out of range");
  const int k = config_.kernel_sizes[branch - 1];
  if (k == config_.kernel_sizes.back()) return abs_weight_[layer];
  return crop_kernel(abs_weight_[layer], k);
}

std::vector<Var> Cartooner::abstraction_branches(const Var& f, std::span<const int> which) const {
  std::vector<Var> out(config_.num_levels);
  for (int b : which) {
    if (b < 1 || b > config_.num_levels) throw RangeError("abstraction branch index out of range");
    const int k = config_.kernel_sizes[b - 1];
    const ConvSpec spec{1, k / 2, 1};
    Var y = lrelu(conv2d(f, abstraction_kernel(0, b), abs_bias_[0], spec));
    out[b - 1] = lrelu(conv2d(y, abstraction_kernel(1, b), abs_bias_[1], spec));
  }
  return out;
}

Var Cartooner::stroke_unit(const Var& f, const BranchMix& mix) const {
  const auto active = mix.active();
  return mix_branches(stroke_branches(f, active), mix);
}

Var Cartooner::stroke_unit(const Var& f, double alpha, bool extrapolate) const {
  return stroke_unit(f, branch_mix(alpha, config_.num_levels, extrapolate));
}

Var Cartooner::abstraction_unit(const Var& f, const BranchMix& mix) const {
  const auto active = mix.active();
  return mix_branches(abstraction_branches(f, active), mix);
}

Var Cartooner::abstraction_unit(const Var& f, double alpha, bool extrapolate) const {
  return abstraction_unit(f, branch_mix(alpha, config_.num_levels, extrapolate));
}

Var Cartooner::texture_controller(const Var& f, const TextureMix& mix) const {
  return add(stroke_unit(f, mix.stroke), abstraction_unit(f, mix.abstraction));
}

Var Cartooner::decode_texture(const Var& f, const TextureMix& mix) const {
  Var x = run_blocks(tex_blocks_, texture_controller(f, mix));
  const Shape& s = x.shape();
  x = lrelu(tex_up1_(resize_bilinear(x, 2 * s.h, 2 * s.w)));
  x = lrelu(tex_up2_(resize_bilinear(x, 4 * s.h, 4 * s.w)));
  return tanh(tex_out_(x));
}

Var Cartooner::decode_texture(const Var& f, const TextureLevels& levels, bool extrapolate) const {
  return decode_texture(f, TextureMix::global(levels, config_.num_levels, extrapolate));
}

Var Cartooner::decode_color(const Var& f, const Tensor& cue) const {
  const Shape& fs = f.shape();
  const Shape& cs = cue.shape();
  if (cs.c != 3 || cs.n != fs.n || cs.h != fs.h * kDownsample || cs.w != fs.w * kDownsample) {
    throw ContractError("decode_color: cue " + cs.str() + " does not match features " + fs.str());
  }
  Var x = run_blocks(col_blocks_, f);
  x = resize_bilinear(x, 2 * fs.h, 2 * fs.w);
  x = lrelu(col2_(concat_channels(x, Var::constant(downsample_area(cue, 2)))));
  x = resize_bilinear(x, 4 * fs.h, 4 * fs.w);
  x = lrelu(col3_(concat_channels(x, Var::constant(cue))));
  return tanh(col_out_(x));
}

Var Cartooner::run_disc(const Discriminator& d, const Var& x, int head) const {
  Var y = lrelu(d.c1(x));
  y = lrelu(d.c2(y));
  y = lrelu(d.c3(y));
  return d.heads[head](y);
}

Var Cartooner::disc_texture(const Var& l, int level) const {
  if (level < 1 || level > config_.num_levels) {
    throw RangeError("discriminator head " + std::to_string(level) + " outside [1, " +
                     std::to_string(config_.num_levels) + "]");
  }
  if (l.shape().c != 1) throw ContractError("disc_texture: expected an L-channel input");
  return run_disc(disc_tex_, l, level - 1);
}

Var Cartooner::disc_color(const Var& ab) const {
  if (ab.shape().c != 2) throw ContractError("disc_color: expected an ab input");
  return run_disc(disc_col_, ab, 0);
}

std::size_t Cartooner::abstraction_param_count(bool shared) const {
  const std::size_t cf = static_cast<std::size_t>(config_.feature_channels());
  if (shared) {
    const std::size_t k = static_cast<std::size_t>(config_.kernel_sizes.back());
    return 2 * (k * k * cf * cf + cf);
  }
  std::size_t total = 0;
  for (int k : config_.kernel_sizes) {
    total += 2 * (static_cast<std::size_t>(k) * k * cf * cf + cf);
  }
  return total;
}

std::pair<int, int> Cartooner::injection_in_channels() const {
  return {col2_.weight.shape().c, col3_.weight.shape().c};
}

Tensor downsample_area(const Tensor& t, int factor) {
  const Shape& s = t.shape();
  if (factor == 1) return t;
  if (factor < 1 || s.h % factor != 0 || s.w % factor != 0) {
    throw ContractError("downsample_area: size not divisible by factor");
  }
  const int oh = s.h / factor, ow = s.w / factor;
  Tensor out(Shape{s.n, s.c, oh, ow});
  const double count = static_cast<double>(factor) * factor;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = t.plane(n, c);
      double* q = out.plane(n, c);
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          // Mean relative to the first sample: a constant window stays exact.
          const double ref = p[(y * factor) * s.w + x * factor];
          double acc = 0.0;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) acc += p[(y * factor + dy) * s.w + x * factor + dx] - ref;
          q[y * ow + x] = ref + acc / count;
        }
    }
  return out;
}

}  // namespace cartooner::nn
