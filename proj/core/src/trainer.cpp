#include "cartooner/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cartooner/colorspace.hpp"
#include "cartooner/error.hpp"
#include "cartooner/image_io.hpp"

namespace cartooner::train {

using nn::Tensor;
using nn::Var;
namespace fs = std::filesystem;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Joint: return "joint";
    case Stage::Abstraction: return "abstraction";
    default: return "color-target";
  }
}

Stage stage_from_string(std::string_view s) {
  if (s == "joint") return Stage::Joint;
  if (s == "abstraction") return Stage::Abstraction;
  if (s == "color-target" || s == "color_target") return Stage::ColorTarget;
  throw ContractError("unknown training stage '" + std::string(s) + "'");
}

int default_steps(Stage s) { return s == Stage::Joint ? 2000 : 500; }

// ---- config ------------------------------------------------------------------

void TrainConfig::validate() const {
  if (steps < 0) throw ContractError("steps must be positive");
  if (!(lr > 0.0)) throw ContractError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractError("Adam betas must lie in [0, 1)");
  }
  if (checkpoint_every < 0 || verify_every < 0) throw ContractError("cadences must be non-negative");
  weights.validate();
  data.validate();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw FormatError("config: " + key + " expects a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw FormatError("config: " + key + " expects an integer, got '" + v + "'");
  }
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(key, trim(item))));
  return out;
}

}  // namespace

TrainConfig TrainConfig::parse(std::string_view text, const fs::path& base_dir) {
  TrainConfig c;
  bool photo_size_set = false;
  bool levels_set = false;
  auto path_of = [&](const std::string& v) {
    fs::path p(v);
    return (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
  };

  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string v = trim(std::string_view(line).substr(eq + 1));

    if (key == "stage") c.stage = stage_from_string(v);
    else if (key == "steps") c.steps = static_cast<int>(to_int(key, v));
    else if (key == "lr") c.lr = to_double(key, v);
    else if (key == "beta1") c.beta1 = to_double(key, v);
    else if (key == "beta2") c.beta2 = to_double(key, v);
    else if (key == "eps") c.eps = to_double(key, v);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "preset") c.preset = v;
    else if (key == "init_seed") c.init_seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "batch_size") c.data.batch_size = static_cast<int>(to_int(key, v));
    else if (key == "workers") c.data.workers = static_cast<int>(to_int(key, v));
    else if (key == "superpixels") c.data.superpixels = static_cast<int>(to_int(key, v));
    else if (key == "photo_dir") c.data.photo_dir = path_of(v);
    else if (key == "cartoon_dir") c.data.cartoon_dir = path_of(v);
    else if (key == "photo_manifest") c.data.photo_manifest = path_of(v);
    else if (key == "cartoon_manifest") c.data.cartoon_manifest = path_of(v);
    else if (key == "photo_size") { c.data.photo_size = static_cast<int>(to_int(key, v)); photo_size_set = true; }
    else if (key == "level_resolutions") { c.data.level_resolutions = to_int_list(key, v); levels_set = true; }
    else if (key == "out_dir") c.out_dir = path_of(v);
    else if (key == "extractor") c.extractor = v.empty() ? fs::path() : path_of(v);
    else if (key == "checkpoint_every") c.checkpoint_every = static_cast<int>(to_int(key, v));
    else if (key == "verify_every") c.verify_every = static_cast<int>(to_int(key, v));
    else if (key == "w_adv") c.weights.adversarial = to_double(key, v);
    else if (key == "w_content") c.weights.content = to_double(key, v);
    else if (key == "w_gram") c.weights.gram = to_double(key, v);
    else if (key == "w_tv") c.weights.tv = to_double(key, v);
    else if (key == "w_color_recon") c.weights.color_recon = to_double(key, v);
    else if (key == "w_color_adv") c.weights.color_adversarial = to_double(key, v);
    else throw FormatError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }

  const nn::ModelConfig model = nn::ModelConfig::from_preset(c.preset);
  if (!photo_size_set) c.data.photo_size = model.image_size;
  if (!levels_set) c.data.level_resolutions = data::level_resolutions_for(c.preset);
  c.data.seed = c.seed;
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("config not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o.precision(17);
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  o << "stage = " << to_string(stage) << "\n"
    << "steps = " << steps << "\n"
    << "lr = " << lr << "\n"
    << "beta1 = " << beta1 << "\n"
    << "beta2 = " << beta2 << "\n"
    << "eps = " << eps << "\n"
    << "seed = " << seed << "\n"
    << "preset = " << preset << "\n"
    << "init_seed = " << init_seed << "\n"
    << "batch_size = " << data.batch_size << "\n"
    << "workers = " << data.workers << "\n"
    << "superpixels = " << data.superpixels << "\n"
    << "photo_size = " << data.photo_size << "\n"
    << "level_resolutions = " << list(data.level_resolutions) << "\n";
  if (!data.photo_dir.empty()) o << "photo_dir = " << data.photo_dir.string() << "\n";
  if (!data.cartoon_dir.empty()) o << "cartoon_dir = " << data.cartoon_dir.string() << "\n";
  if (!data.photo_manifest.empty()) o << "photo_manifest = " << data.photo_manifest.string() << "\n";
  if (!data.cartoon_manifest.empty()) o << "cartoon_manifest = " << data.cartoon_manifest.string() << "\n";
  o << "out_dir = " << out_dir.string() << "\n";
  if (!extractor.empty()) o << "extractor = " << extractor.string() << "\n";
  o << "checkpoint_every = " << checkpoint_every << "\n"
    << "verify_every = " << verify_every << "\n"
    << "w_adv = " << weights.adversarial << "\n"
    << "w_content = " << weights.content << "\n"
    << "w_gram = " << weights.gram << "\n"
    << "w_tv = " << weights.tv << "\n"
    << "w_color_recon = " << weights.color_recon << "\n"
    << "w_color_adv = " << weights.color_adversarial << "\n";
  return o.str();
}

// ---- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<std::string> paths, double lr, double beta1, double beta2, double eps)
    : paths_(std::move(paths)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(nn::ParamTree& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const std::string& path : paths_) {
    nn::ParamLeaf& leaf = params.leaf(path);
    if (leaf.frozen) continue;
    const Tensor& g = leaf.var.grad();
    if (g.empty()) continue;
    Moments& st = state_[path];
    if (st.m.empty()) {
      st.m = Tensor(g.shape());
      st.v = Tensor(g.shape());
    }
    Tensor& p = leaf.var.mutable_value();
    double* pm = st.m.data();
    double* pv = st.v.data();
    double* pp = p.data();
    const double* pg = g.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      pm[i] = beta1_ * pm[i] + (1.0 - beta1_) * pg[i];
      pv[i] = beta2_ * pv[i] + (1.0 - beta2_) * pg[i] * pg[i];
      pp[i] -= lr_ * (pm[i] / c1) / (std::sqrt(pv[i] / c2) + eps_);
    }
  }
}

void Adam::save(ckpt::Archive& archive, const std::string& prefix) const {
  archive.manifest["optimizers"][prefix] = {{"t", t_}, {"lr", lr_}, {"beta1", beta1_}, {"beta2", beta2_}};
  for (const auto& [path, st] : state_) {
    archive.arrays.emplace_back(prefix + ".m." + path, st.m);
    archive.arrays.emplace_back(prefix + ".v." + path, st.v);
  }
}

void Adam::load(const ckpt::Archive& archive, const std::string& prefix) {
  const auto& opts = archive.manifest.at("optimizers");
  if (!opts.contains(prefix)) throw FormatError("snapshot has no optimizer state for " + prefix);
  t_ = opts.at(prefix).at("t").get<std::int64_t>();
  state_.clear();
  for (const std::string& path : paths_) {
    const Tensor* m = archive.find(prefix + ".m." + path);
    const Tensor* v = archive.find(prefix + ".v." + path);
    if ((m == nullptr) != (v == nullptr)) throw FormatError("incomplete optimizer state for " + path);
    if (m != nullptr) state_[path] = Moments{*m, *v};
  }
}

// ---- records -------------------------------------------------------------------

nlohmann::json StepRecord::to_json() const {
  return {{"step", step},       {"stage", to_string(stage)}, {"level", level},   {"loss_d", loss_d},
          {"adv", adversarial}, {"content", content},        {"gram", gram},     {"tv", tv},
          {"texture", texture}, {"color", color},            {"total_g", total_g}, {"wall_ms", wall_ms}};
}

std::vector<std::string> generator_subtrees(Stage stage) {
  switch (stage) {
    case Stage::Joint:
      return {std::string(nn::kEncoder), std::string(nn::kStrokeUnit), std::string(nn::kTextureTrunk),
              std::string(nn::kColorDecoder)};
    case Stage::Abstraction: return {std::string(nn::kAbstractionUnit)};
    default: return {std::string(nn::kColorDecoder)};
  }
}

std::vector<std::string> discriminator_subtrees(Stage stage) {
  switch (stage) {
    case Stage::Joint: return {std::string(nn::kDiscTexture)};
    case Stage::Abstraction: return {};
    default: return {std::string(nn::kDiscColor)};
  }
}

// ---- Trainer -------------------------------------------------------------------

namespace {

std::vector<std::string> leaves_under(const nn::ParamTree& tree, const std::vector<std::string>& subtrees) {
  std::vector<std::string> out;
  for (const nn::ParamLeaf& l : tree.leaves()) {
    for (const std::string& s : subtrees) {
      if (nn::ParamTree::under(l.path, s)) {
        out.push_back(l.path);
        break;
      }
    }
  }
  return out;
}

std::uint64_t hash_leaves(const nn::ParamTree& tree, const std::vector<std::string>& paths) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const std::string& p : paths) h = nn::bit_hash(tree.leaf(p).var.value().values(), h);
  return h;
}

// Disables gradient tracking on a subtree's leaves for one scope without
// touching their frozen flags.
class GradScope {
 public:
  GradScope(nn::ParamTree& tree, const std::vector<std::string>& subtrees) {
    for (const nn::ParamLeaf& l : tree.leaves()) {
      for (const std::string& s : subtrees) {
        if (nn::ParamTree::under(l.path, s) && l.var.requires_grad()) {
          Var v = l.var;
          v.set_requires_grad(false);
          off_.push_back(v);
          break;
        }
      }
    }
  }
  ~GradScope() {
    for (Var& v : off_) v.set_requires_grad(true);
  }
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;

 private:
  std::vector<Var> off_;
};

double scalar(const Var& v) { return v.value().data()[0]; }

}  // namespace

Trainer::Trainer(TrainConfig cfg, nn::Cartooner& model, const data::Dataset& dataset,
                 const loss::FeatureExtractor& extractor)
    : cfg_(std::move(cfg)), model_(model), data_(dataset), ext_(extractor) {
  cfg_.validate();
  if (static_cast<int>(data_.config().level_resolutions.size()) != model_.num_levels()) {
    throw ContractError("dataset has " + std::to_string(data_.config().level_resolutions.size()) +
                        " level resolutions, model has " + std::to_string(model_.num_levels()) + " levels");
  }
  if (data_.config().photo_size % nn::Cartooner::kDownsample != 0) {
    throw ContractError("photo size must be divisible by 4");
  }
  nn::ParamTree& tree = model_.params();
  std::vector<std::string> trainable = generator_subtrees(cfg_.stage);
  const std::vector<std::string> disc = discriminator_subtrees(cfg_.stage);
  trainable.insert(trainable.end(), disc.begin(), disc.end());
  tree.freeze_all_except(trainable);

  opt_g_ = Adam(leaves_under(tree, generator_subtrees(cfg_.stage)), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps);
  opt_d_ = Adam(leaves_under(tree, disc), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps);

  for (const nn::ParamLeaf& l : tree.leaves()) {
    if (l.frozen) frozen_paths_.push_back(l.path);
  }
  frozen_hash_ = hash_leaves(tree, frozen_paths_);
  extractor_hash_ = ext_.hash();
}

void Trainer::verify_frozen() const {
  if (hash_leaves(model_.params(), frozen_paths_) != frozen_hash_) {
    throw TrainingError("a frozen parameter changed during training");
  }
  if (ext_.hash() != extractor_hash_) throw TrainingError("perceptual extractor weights changed");
}

void Trainer::dump_batch(const data::Batch& batch, std::string_view what) const {
  const fs::path dir = cfg_.out_dir / ("nan_dump_step" + std::to_string(step_ + 1));
  fs::create_directories(dir);
  ckpt::Archive a;
  a.manifest = {{"step", step_ + 1},
                {"stage", to_string(cfg_.stage)},
                {"level", batch.level},
                {"loss", what},
                {"photo_indices", batch.photo_indices},
                {"cartoon_indices", batch.cartoon_indices}};
  a.arrays = {{"photo_lab", batch.photo_lab},       {"cue", batch.cue},
              {"aug_photo_ab", batch.aug_photo_ab}, {"aug_cue", batch.aug_cue},
              {"cartoon_l", batch.cartoon_l},       {"cartoon_ab", batch.cartoon_ab}};
  ckpt::write_archive(a, dir / "batch.ckpt");
  for (int i = 0; i < batch.size(); ++i) {
    data::save_image(color::lab_to_rgb(color::from_net(batch.photo_lab, i)),
                     dir / ("photo_" + std::to_string(i) + ".png"));
  }
  ckpt::write_archive(ckpt::model_archive(model_, {}), dir / "model.ckpt");
}

void Trainer::check_finite(double v, const data::Batch& batch, std::string_view what) const {
  if (std::isfinite(v)) return;
  dump_batch(batch, what);
  throw TrainingError("non-finite " + std::string(what) + " loss at step " + std::to_string(step_ + 1) +
                      "; batch dumped to " +
                      (cfg_.out_dir / ("nan_dump_step" + std::to_string(step_ + 1))).string());
}

StepRecord Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  nn::ParamTree& tree = model_.params();
  const std::uint64_t index = static_cast<std::uint64_t>(step_);
  const data::Batch batch =
      cfg_.stage == Stage::ColorTarget ? data_.next_batch(index, 1) : data_.next_batch(index);

  StepRecord rec;
  rec.stage = cfg_.stage;
  rec.level = batch.level;
  const loss::LossWeights& w = cfg_.weights;
  tree.zero_grad();

  const Var photo = Var::constant(batch.photo_lab);
  const Var f = model_.encode(photo);

  if (cfg_.stage == Stage::Joint || cfg_.stage == Stage::Abstraction) {
    const int level = batch.level;
    const nn::TextureLevels levels = cfg_.stage == Stage::Joint
                                         ? nn::TextureLevels{static_cast<double>(level), 1.0}
                                         : nn::TextureLevels{static_cast<double>(level), static_cast<double>(level)};
    const Var out_l = model_.decode_texture(f, levels);
    const Var real_l = Var::constant(batch.cartoon_l);

    if (cfg_.stage == Stage::Joint) {
      const Var loss_d = loss::adv_texture_D(model_, real_l, out_l.detach(), level);
      rec.loss_d = scalar(loss_d);
      check_finite(rec.loss_d, batch, "discriminator");
      loss_d.backward();
      opt_d_.step(tree);
      tree.zero_grad();
    }

    // Discriminator leaves stay out of the generator backward pass.
    const GradScope no_disc(tree, {std::string(nn::kDiscTexture)});
    const Var adv = loss::adv_texture_G(model_, out_l, level);
    loss::TextureTerms terms{adv, loss::content_loss(ext_, Var::constant(batch.photo_l), out_l),
                             loss::gram_loss(ext_, real_l, out_l), loss::tv_loss(out_l)};
    Var total = loss::total_texture_loss(terms, w);
    rec.adversarial = scalar(terms.adversarial);
    rec.content = scalar(terms.content);
    rec.gram = scalar(terms.gram);
    rec.tv = scalar(terms.tv);
    rec.texture = scalar(total);
    if (cfg_.stage == Stage::Joint) {
      const Var color = loss::color_recon_loss(Var::constant(batch.aug_photo_ab),
                                               model_.decode_color(f, batch.aug_cue));
      rec.color = scalar(color);
      total = nn::add(total, color);
    }
    rec.total_g = scalar(total);
    check_finite(rec.total_g, batch, "generator");
    total.backward();
    opt_g_.step(tree);
  } else {
    const Var out_ab = model_.decode_color(f, batch.cue);
    const Var loss_d = loss::adv_color_D(model_, Var::constant(batch.cartoon_ab), out_ab.detach());
    rec.loss_d = scalar(loss_d);
    check_finite(rec.loss_d, batch, "discriminator");
    loss_d.backward();
    opt_d_.step(tree);
    tree.zero_grad();

    const GradScope no_disc(tree, {std::string(nn::kDiscColor)});
    const Var adv = loss::adv_color_G(model_, out_ab);
    const Var recon = loss::color_recon_loss(Var::constant(batch.photo_ab), out_ab);
    const Var total = loss::color_finetune_loss(recon, adv, w);
    rec.adversarial = scalar(adv);
    rec.color = scalar(recon);
    rec.total_g = scalar(total);
    check_finite(rec.total_g, batch, "generator");
    total.backward();
    opt_g_.step(tree);
  }
  tree.zero_grad();

  ++step_;
  rec.step = step_;
  if (cfg_.verify_every > 0 && step_ % cfg_.verify_every == 0) verify_frozen();
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

std::vector<StepRecord> Trainer::run(std::ostream* progress) {
  std::vector<StepRecord> out;
  const int total = cfg_.total_steps();
  while (step_ < total) {
    StepRecord r = step();
    if (progress != nullptr) *progress << r.to_json().dump() << "\n" << std::flush;
    out.push_back(r);
    if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 && step_ < total) {
      save(cfg_.out_dir / (std::string(to_string(cfg_.stage)) + "_step" + std::to_string(step_) + ".ckpt"));
    }
  }
  return out;
}

ckpt::Archive Trainer::snapshot() const {
  ckpt::ModelMeta meta;
  meta.color_mode = cfg_.stage == Stage::ColorTarget ? ckpt::ColorMode::Target : ckpt::ColorMode::Preserve;
  meta.stage = std::string(to_string(cfg_.stage));
  meta.step = step_;
  ckpt::Archive a = ckpt::model_archive(model_, meta);
  a.manifest["train"] = {{"stage", to_string(cfg_.stage)}, {"step", step_}, {"seed", cfg_.seed}};
  opt_g_.save(a, "optim.g");
  opt_d_.save(a, "optim.d");
  return a;
}

void Trainer::restore(const ckpt::Archive& archive) {
  try {
    const auto& t = archive.manifest.at("train");
    if (stage_from_string(t.at("stage").get<std::string>()) != cfg_.stage) {
      throw ContractError("snapshot belongs to a different training stage");
    }
    ckpt::load_params(model_, archive);
    opt_g_.load(archive, "optim.g");
    opt_d_.load(archive, "optim.d");
    step_ = t.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("training snapshot: ") + e.what());
  }
  frozen_hash_ = hash_leaves(model_.params(), frozen_paths_);
}

void Trainer::save(const fs::path& path) const { ckpt::write_archive(snapshot(), path); }

ckpt::Archive Trainer::export_model() const {
  ckpt::ModelMeta meta;
  meta.color_mode = cfg_.stage == Stage::ColorTarget ? ckpt::ColorMode::Target : ckpt::ColorMode::Preserve;
  meta.stage = std::string(to_string(cfg_.stage));
  meta.step = step_;
  return ckpt::model_archive(model_, meta);
}

TrainResult run_training(const TrainConfig& cfg, const fs::path& resume, std::ostream* progress) {
  cfg.validate();
  std::unique_ptr<nn::Cartooner> model;
  std::optional<ckpt::Archive> snapshot;
  if (!resume.empty()) {
    ckpt::Archive a = ckpt::read_archive(resume);
    ckpt::LoadedModel loaded = ckpt::model_from_archive(a);
    model = std::move(loaded.model);
    if (a.manifest.contains("train") && a.manifest["train"].value("stage", "") == to_string(cfg.stage)) {
      snapshot = std::move(a);
    }
    spdlog::info("{} from {} ({} stage, step {})", snapshot ? "resuming" : "initializing", resume.string(),
                 loaded.meta.stage, loaded.meta.step);
  } else {
    nn::ModelConfig mc = nn::ModelConfig::from_preset(cfg.preset);
    mc.init_seed = cfg.init_seed;
    model = std::make_unique<nn::Cartooner>(mc);
  }

  const data::Dataset dataset(cfg.data);
  const loss::FeatureExtractor ext = loss::FeatureExtractor::load_or_test(cfg.extractor);
  Trainer trainer(cfg, *model, dataset, ext);
  if (snapshot) trainer.restore(*snapshot);

  fs::create_directories(cfg.out_dir);
  std::ofstream log(cfg.out_dir / "progress.jsonl", std::ios::app);
  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    int overflow(int c) override {
      if (c == EOF) return !EOF;
      if (a) a->sputc(static_cast<char>(c));
      if (b) b->sputc(static_cast<char>(c));
      return c;
    }
    int sync() override {
      if (a) a->pubsync();
      if (b) b->pubsync();
      return 0;
    }
  } tee;
  tee.a = log.rdbuf();
  tee.b = progress != nullptr ? progress->rdbuf() : nullptr;
  std::ostream out(&tee);

  TrainResult result;
  result.records = trainer.run(&out);
  const std::string stage(to_string(cfg.stage));
  result.checkpoint = cfg.out_dir / (stage + "_last.ckpt");
  trainer.save(result.checkpoint);
  result.model_checkpoint = cfg.out_dir / (cfg.stage == Stage::ColorTarget ? "target.ckpt" : "preserve.ckpt");
  ckpt::write_archive(trainer.export_model(), result.model_checkpoint);
  spdlog::info("wrote {} and {}", result.checkpoint.string(), result.model_checkpoint.string());
  return result;
}

}  // namespace cartooner::train
