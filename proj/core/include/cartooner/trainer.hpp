#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cartooner/checkpoint.hpp"
#include "cartooner/dataio.hpp"
#include "cartooner/losses.hpp"
#include "cartooner/network.hpp"

namespace cartooner::train {

enum class Stage { Joint, Abstraction, ColorTarget };

std::string_view to_string(Stage s);
// Accepts "joint", "abstraction", "color-target" and "color_target".
Stage stage_from_string(std::string_view s);
int default_steps(Stage s);

struct TrainConfig {
  Stage stage = Stage::Joint;
  int steps = 0;  // 0 selects default_steps(stage)
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::string preset = "desk";
  std::uint64_t init_seed = 0;
  loss::LossWeights weights;
  data::DatasetConfig data;
  std::filesystem::path out_dir = "runs";
  std::filesystem::path extractor;
  int checkpoint_every = 500;
  // Re-hash frozen leaves and the extractor every K steps (0 = never).
  int verify_every = 0;

  [[nodiscard]] int total_steps() const { return steps > 0 ? steps : default_steps(stage); }
  void validate() const;

  // Flat "key = value" text; '#' starts a comment. Relative paths are
  // resolved against `base_dir`. Unknown keys raise FormatError.
  static TrainConfig parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static TrainConfig load(const std::filesystem::path& path);
  [[nodiscard]] std::string to_text() const;
};

// Adam over an explicit list of leaves. Leaves that are frozen or received
// no gradient in a step are left untouched (state included).
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::string> paths, double lr, double beta1, double beta2, double eps);

  void step(nn::ParamTree& params);
  [[nodiscard]] std::int64_t steps() const { return t_; }
  [[nodiscard]] const std::vector<std::string>& paths() const { return paths_; }

  void save(ckpt::Archive& archive, const std::string& prefix) const;
  void load(const ckpt::Archive& archive, const std::string& prefix);

 private:
  struct Moments {
    nn::Tensor m;
    nn::Tensor v;
  };
  std::vector<std::string> paths_;
  std::map<std::string, Moments> state_;
  double lr_ = 2e-4, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

struct StepRecord {
  std::int64_t step = 0;  // 1-based index of the completed step
  Stage stage = Stage::Joint;
  int level = 1;
  double loss_d = 0.0;
  double adversarial = 0.0;
  double content = 0.0;
  double gram = 0.0;
  double tv = 0.0;
  double texture = 0.0;
  double color = 0.0;
  double total_g = 0.0;
  double wall_ms = 0.0;

  [[nodiscard]] nlohmann::json to_json() const;
};

// Leaf paths trained by the generator / discriminator optimizer in `stage`.
std::vector<std::string> generator_subtrees(Stage stage);
std::vector<std::string> discriminator_subtrees(Stage stage);

class Trainer {
 public:
  Trainer(TrainConfig cfg, nn::Cartooner& model, const data::Dataset& dataset,
          const loss::FeatureExtractor& extractor);

  // One D step (when the stage has one) followed by one G step on batch
  // `step_count()`. Throws TrainingError on a non-finite loss after dumping
  // the batch under out_dir.
  StepRecord step();
  // Runs until `total_steps()`; records go to `progress` (one JSON object
  // per line) and checkpoints to out_dir every checkpoint_every steps.
  std::vector<StepRecord> run(std::ostream* progress = nullptr);

  [[nodiscard]] std::int64_t step_count() const { return step_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }

  // Model, optimizer state and step counter.
  [[nodiscard]] ckpt::Archive snapshot() const;
  void restore(const ckpt::Archive& archive);
  void save(const std::filesystem::path& path) const;
  // Model-only archive for inference (preserve or target mode by stage).
  [[nodiscard]] ckpt::Archive export_model() const;

  void verify_frozen() const;

 private:
  void dump_batch(const data::Batch& batch, std::string_view what) const;
  void check_finite(double v, const data::Batch& batch, std::string_view what) const;

  TrainConfig cfg_;
  nn::Cartooner& model_;
  const data::Dataset& data_;
  const loss::FeatureExtractor& ext_;
  Adam opt_g_;
  Adam opt_d_;
  std::int64_t step_ = 0;
  std::uint64_t frozen_hash_ = 0;
  std::uint64_t extractor_hash_ = 0;
  std::vector<std::string> frozen_paths_;
};

struct TrainResult {
  std::filesystem::path checkpoint;       // training snapshot (resumable)
  std::filesystem::path model_checkpoint;  // preserve.ckpt or target.ckpt
  std::vector<StepRecord> records;
};

// End-to-end entry used by the CLI. `resume` may be a training snapshot of
// the same stage (continues exactly) or any model checkpoint (starts the
// stage from its weights).
TrainResult run_training(const TrainConfig& cfg, const std::filesystem::path& resume, std::ostream* progress);

}  // namespace cartooner::train
