#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cartooner/autograd.hpp"

namespace cartooner::nn {

// Subtree names understood by ParamTree::freeze.
inline constexpr std::string_view kEncoder = "encoder";
inline constexpr std::string_view kTextureDecoder = "texture_decoder";
inline constexpr std::string_view kStrokeUnit = "texture_decoder.stroke_unit";
inline constexpr std::string_view kAbstractionUnit = "texture_decoder.abstraction_unit";
inline constexpr std::string_view kTextureTrunk = "texture_decoder.trunk";
inline constexpr std::string_view kColorDecoder = "color_decoder";
inline constexpr std::string_view kDiscTexture = "disc_texture";
inline constexpr std::string_view kDiscColor = "disc_color";

struct ModelConfig {
  std::string preset = "desk";
  int base_channels = 16;
  int resnext_blocks = 2;
  int cardinality = 4;
  int num_levels = 5;
  std::vector<int> kernel_sizes{3, 7, 11, 15, 19};
  double leaky_slope = 0.2;
  int image_size = 64;
  std::uint64_t init_seed = 0;

  static ModelConfig desk();
  static ModelConfig paper();
  // Small enough for finite-difference and many-step unit tests.
  static ModelConfig tiny();
  static ModelConfig from_preset(std::string_view name);

  [[nodiscard]] int feature_channels() const { return 4 * base_channels; }
  [[nodiscard]] int bottleneck_channels() const { return 2 * base_channels; }
  void validate() const;
};

struct ParamLeaf {
  std::string path;
  Var var;
  bool frozen = false;
};

// Named trainable parameters, addressable by dotted path. Freezing a subtree
// turns off gradient tracking for its leaves, and optimizers skip them.
class ParamTree {
 public:
  Var add(std::string path, Tensor init);

  // Throws ContractError for a name that matches no leaf. Idempotent.
  void freeze(std::string_view subtree);
  void unfreeze(std::string_view subtree);
  void freeze(std::span<const std::string> subtrees);
  void unfreeze(std::span<const std::string> subtrees);
  // Freezes every leaf that is not under one of `trainable`.
  void freeze_all_except(std::span<const std::string> trainable);
  void unfreeze_all();

  [[nodiscard]] bool is_frozen(std::string_view path) const;
  [[nodiscard]] bool has_subtree(std::string_view subtree) const;
  [[nodiscard]] const std::vector<ParamLeaf>& leaves() const { return leaves_; }
  [[nodiscard]] const ParamLeaf& leaf(std::string_view path) const;
  [[nodiscard]] ParamLeaf& leaf(std::string_view path);
  [[nodiscard]] std::size_t count(std::string_view subtree = {}) const;
  // Bitwise digest of every leaf under `subtree` (all leaves when empty).
  [[nodiscard]] std::uint64_t hash(std::string_view subtree = {}) const;

  void zero_grad();

  static bool under(std::string_view path, std::string_view subtree);

 private:
  void set_frozen(std::string_view subtree, bool frozen);

  std::vector<ParamLeaf> leaves_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct TextureLevels {
  double stroke = 1.0;       // alpha_s
  double abstraction = 1.0;  // alpha_a
};

// Throws RangeError when a level is outside [1, num_levels] (or not finite)
// and extrapolation is off.
void validate_levels(const TextureLevels& levels, int num_levels, bool extrapolate);

// Interpolation weights over the N branches: either one scalar per branch
// or one (1, 1, h, w) map per branch.
struct BranchMix {
  std::vector<double> weights;
  std::vector<Tensor> maps;

  [[nodiscard]] bool spatial() const { return !maps.empty(); }
  // Indices of branches with a nonzero weight somewhere, ascending.
  [[nodiscard]] std::vector<int> active() const;
};

// The two branches nearest to alpha, weighted by distance. At integer alpha
// a single branch gets weight exactly 1. With extrapolation, values outside
// [1, N] extend the outermost pair linearly.
BranchMix branch_mix(double alpha, int num_levels, bool extrapolate = false);
// Per-pixel version for an alpha map of shape (1, 1, h, w).
BranchMix branch_mix(const Tensor& alpha_map, int num_levels, bool extrapolate = false);

struct TextureMix {
  BranchMix stroke;
  BranchMix abstraction;

  static TextureMix global(const TextureLevels& levels, int num_levels, bool extrapolate = false);
};

// Weighted combination of branch features (the only gating between
// branches). Requires features for every active branch of `mix`, indexed by
// branch; inactive entries may be undefined.
Var mix_branches(std::span<const Var> branch_features, const BranchMix& mix);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamTree& tree, const std::string& path, int in_ch, int out_ch, int kernel, ConvSpec spec,
         std::uint64_t seed, double gain);

  Var operator()(const Var& x) const;

  Var weight;
  Var bias;
  ConvSpec spec;
};

class ResNeXtBlock {
 public:
  ResNeXtBlock() = default;
  ResNeXtBlock(ParamTree& tree, const std::string& path, const ModelConfig& cfg);
  Var operator()(const Var& x) const;

  Conv2d reduce;
  Conv2d grouped;
  Conv2d expand;
  double slope = 0.2;
};

// Encoder, texture decoder (texture controller + trunk), color decoder and
// both discriminators, all registered in one ParamTree.
class Cartooner {
 public:
  explicit Cartooner(ModelConfig config);

  Cartooner(const Cartooner&) = delete;
  Cartooner& operator=(const Cartooner&) = delete;

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] ParamTree& params() { return params_; }
  [[nodiscard]] const ParamTree& params() const { return params_; }
  [[nodiscard]] int num_levels() const { return config_.num_levels; }
  static constexpr int kDownsample = 4;

  // (N, 3, H, W) normalized Lab -> (N, C_f, H/4, W/4).
  [[nodiscard]] Var encode(const Var& lab) const;

  // g^i for the listed 1-based branch indices; other entries stay undefined.
  [[nodiscard]] std::vector<Var> stroke_branches(const Var& f, std::span<const int> which) const;
  [[nodiscard]] std::vector<Var> abstraction_branches(const Var& f, std::span<const int> which) const;

  [[nodiscard]] Var stroke_unit(const Var& f, const BranchMix& mix) const;
  [[nodiscard]] Var stroke_unit(const Var& f, double alpha, bool extrapolate = false) const;
  [[nodiscard]] Var abstraction_unit(const Var& f, const BranchMix& mix) const;
  [[nodiscard]] Var abstraction_unit(const Var& f, double alpha, bool extrapolate = false) const;
  [[nodiscard]] Var texture_controller(const Var& f, const TextureMix& mix) const;

  // -> (N, 1, H, W) normalized L in [-1, 1].
  [[nodiscard]] Var decode_texture(const Var& f, const TextureMix& mix) const;
  [[nodiscard]] Var decode_texture(const Var& f, const TextureLevels& levels,
                                   bool extrapolate = false) const;
  // cue: (N, 3, H, W) normalized Lab at input resolution -> (N, 2, H, W) ab.
  [[nodiscard]] Var decode_color(const Var& f, const Tensor& cue) const;

  // Patch logits (N, 1, ceil(H/8), ceil(W/8)) from the head for `level` (1-based).
  [[nodiscard]] Var disc_texture(const Var& l, int level) const;
  [[nodiscard]] Var disc_color(const Var& ab) const;

  // Kernel used by abstraction branch `branch` (1-based) in layer 0 or 1.
  [[nodiscard]] Var abstraction_kernel(int layer, int branch) const;
  [[nodiscard]] std::size_t abstraction_param_count(bool shared) const;
  // Input channel counts of the two cue-injection convs (col2, col3).
  [[nodiscard]] std::pair<int, int> injection_in_channels() const;

 private:
  struct StrokeBranch {
    Conv2d first;
    Conv2d second;
  };
  struct Discriminator {
    Conv2d c1, c2, c3;
    std::vector<Conv2d> heads;
  };

  Var lrelu(const Var& x) const { return leaky_relu(x, config_.leaky_slope); }
  Var run_disc(const Discriminator& d, const Var& x, int head) const;
  Var run_blocks(const std::vector<ResNeXtBlock>& blocks, Var x) const;

  ModelConfig config_;
  ParamTree params_;

  Conv2d enc_in_, enc_down1_, enc_down2_;
  std::vector<ResNeXtBlock> enc_blocks_;

  std::vector<StrokeBranch> stroke_;
  Var abs_weight_[2];
  Var abs_bias_[2];
  std::vector<ResNeXtBlock> tex_blocks_;
  Conv2d tex_up1_, tex_up2_, tex_out_;

  std::vector<ResNeXtBlock> col_blocks_;
  Conv2d col2_, col3_, col_out_;

  Discriminator disc_tex_;
  Discriminator disc_col_;
};

// Area-average a (N, C, H, W) tensor down by an integer factor.
Tensor downsample_area(const Tensor& t, int factor);

}  // namespace cartooner::nn
