// cartooner: command line front end for training, stylization, color-cue
// tooling, feature distances and the HTTP service.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cartooner/checkpoint.hpp"
#include "cartooner/colorcue.hpp"
#include "cartooner/error.hpp"
#include "cartooner/image_io.hpp"
#include "cartooner/inference.hpp"
#include "cartooner/losses.hpp"
#include "cartooner/metrics.hpp"
#include "cartooner/server.hpp"
#include "cartooner/trainer.hpp"

namespace fs = std::filesystem;
using namespace cartooner;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kMissing = 3, kCorrupt = 4, kOutOfRange = 5 };

// "mask.png#RRGGBB"
infer::ColorEdit parse_rgb_edit(const std::string& spec) {
  const auto hash = spec.rfind('#');
  if (hash == std::string::npos || hash == 0) throw ContractError("--edit expects mask.png#RRGGBB, got " + spec);
  return {data::load_mask(spec.substr(0, hash)), server::parse_hex_color(spec.substr(hash))};
}

// "mask.png:h,s,v"
infer::ColorEdit parse_hsv_edit(const std::string& spec) {
  const auto colon = spec.rfind(':');
  if (colon == std::string::npos) throw ContractError("--hsv-edit expects mask.png:h,s,v, got " + spec);
  cue::HsvAugParams p;
  if (std::sscanf(spec.c_str() + colon + 1, "%lf,%lf,%lf", &p.hue_shift, &p.sat_scale, &p.val_scale) != 3) {
    throw ContractError("--hsv-edit expects three comma-separated numbers, got " + spec.substr(colon + 1));
  }
  return {data::load_mask(spec.substr(0, colon)), p};
}

// "mask.png@alpha_s,alpha_a"
infer::TextureRegion parse_region(const std::string& spec) {
  const auto at = spec.rfind('@');
  if (at == std::string::npos) throw ContractError("--region expects mask.png@alpha_s,alpha_a, got " + spec);
  nn::TextureLevels levels;
  if (std::sscanf(spec.c_str() + at + 1, "%lf,%lf", &levels.stroke, &levels.abstraction) != 2) {
    throw ContractError("--region expects two comma-separated levels, got " + spec.substr(at + 1));
  }
  return {data::load_mask(spec.substr(0, at)), levels};
}

struct ColormapArgs {
  std::string photo, out;
  int segments = 0;
};

struct PaletteArgs {
  std::string image, mask;
  int k = cue::kDefaultPaletteSize;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string stage = "joint", config, resume;
  int steps = 0;
};

struct StylizeArgs {
  std::string photo, out, model, checkpoint, mode = "preserve";
  double alpha_s = 1.0, alpha_a = 1.0;
  std::vector<std::string> edits, hsv_edits, regions;
  bool allow_extrapolation = false;
  int superpixels = 0;
};

struct FidArgs {
  std::string set_a, set_b, extractor;
};

struct InitArgs {
  std::string preset = "desk", out, mode = "preserve";
  std::uint64_t seed = 0;
};

int cmd_colormap(const ColormapArgs& a) {
  const Image photo = data::load_image(a.photo);
  data::save_image(infer::build_cue(photo, a.segments), a.out);
  spdlog::info("wrote {}", a.out);
  return kOk;
}

int cmd_palette(const PaletteArgs& a) {
  const Image img = data::load_image(a.image);
  std::optional<RegionMask> mask;
  if (!a.mask.empty()) mask = data::load_mask(a.mask);
  const cue::Palette p = infer::reference_palette(img, mask ? &*mask : nullptr, a.k, a.seed);
  nlohmann::json colors = nlohmann::json::array();
  for (const Rgb& c : p.colors) colors.push_back(server::to_hex_color(c));
  std::cout << nlohmann::json{{"colors", colors}, {"weights", p.weights}, {"padded", p.padded}}.dump(2) << "\n";
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  train::TrainConfig cfg = train::TrainConfig::load(a.config);
  cfg.stage = train::stage_from_string(a.stage);
  if (a.steps > 0) cfg.steps = a.steps;
  const train::TrainResult r = train::run_training(cfg, a.resume, &std::cout);
  spdlog::info("{} steps done; model checkpoint {}", r.records.size(), r.model_checkpoint.string());
  return kOk;
}

int cmd_stylize(const StylizeArgs& a) {
  const ckpt::ColorMode mode = ckpt::color_mode_from_string(a.mode);
  fs::path ckpt_path = a.checkpoint;
  if (ckpt_path.empty()) {
    if (a.model.empty()) throw ContractError("stylize needs --model <style dir> or --checkpoint <file>");
    ckpt_path = fs::path(a.model) / (std::string(ckpt::to_string(mode)) + ".ckpt");
  }
  const ckpt::LoadedModel loaded = ckpt::load_model(ckpt_path);

  infer::ControlRequest req;
  req.photo = data::load_image(a.photo);
  req.levels = {a.alpha_s, a.alpha_a};
  req.mode = mode;
  req.allow_extrapolation = a.allow_extrapolation;
  req.superpixels = a.superpixels;
  for (const auto& r : a.regions) req.regions.push_back(parse_region(r));
  for (const auto& e : a.edits) req.color_edits.push_back(parse_rgb_edit(e));
  for (const auto& e : a.hsv_edits) req.color_edits.push_back(parse_hsv_edit(e));
  data::save_image(infer::cartoonize(*loaded.model, req), a.out);
  spdlog::info("wrote {}", a.out);
  return kOk;
}

int cmd_fid(const FidArgs& a) {
  const loss::FeatureExtractor ext = (a.extractor.empty() || a.extractor == "test")
                                         ? loss::FeatureExtractor::load_or_test({})
                                         : loss::FeatureExtractor::load(a.extractor);
  const metrics::FeatureStats sa = metrics::accumulate_dir(a.set_a, ext);
  const metrics::FeatureStats sb = metrics::accumulate_dir(a.set_b, ext);
  std::printf("%.6f\n", metrics::frechet_distance(sa, sb));
  return kOk;
}

int cmd_init(const InitArgs& a) {
  nn::ModelConfig cfg = nn::ModelConfig::from_preset(a.preset);
  cfg.init_seed = a.seed;
  const nn::Cartooner model(cfg);
  ckpt::ModelMeta meta;
  meta.color_mode = ckpt::color_mode_from_string(a.mode);
  ckpt::save_model(model, meta, a.out);
  spdlog::info("wrote untrained {} model to {}", a.preset, a.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("cartooner"));

  CLI::App app{"Controllable photo cartoonization"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  ColormapArgs cm;
  auto* colormap = app.add_subcommand("colormap", "Superpixel color map of a photo");
  colormap->add_option("photo,--photo", cm.photo, "Input photo")->required()->check(CLI::ExistingFile);
  colormap->add_option("-o,--out", cm.out, "Output PNG")->required();
  colormap->add_option("--segments", cm.segments, "Segment count (default scales with area)")->check(CLI::NonNegativeNumber);

  PaletteArgs pa;
  auto* palette = app.add_subcommand("palette", "k-means color palette as JSON");
  palette->add_option("image,--image", pa.image, "Input image")->required()->check(CLI::ExistingFile);
  palette->add_option("-k,--k", pa.k, "Palette size")->check(CLI::Range(1, 64));
  palette->add_option("--mask", pa.mask, "Restrict to a grayscale mask PNG")->check(CLI::ExistingFile);
  palette->add_option("--seed", pa.seed, "k-means seed");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Run one training stage");
  trainc->add_option("--stage", ta.stage, "joint | abstraction | color-target")
      ->check(CLI::IsMember({"joint", "abstraction", "color-target"}));
  trainc->add_option("--config", ta.config, "key = value config file")->required()->check(CLI::ExistingFile);
  trainc->add_option("--resume", ta.resume, "Training snapshot or model checkpoint")->check(CLI::ExistingFile);
  trainc->add_option("--steps", ta.steps, "Override the configured step count")->check(CLI::PositiveNumber);

  StylizeArgs sa;
  auto* stylize = app.add_subcommand("stylize", "Cartoonize a photo");
  stylize->add_option("--photo", sa.photo, "Input photo")->required()->check(CLI::ExistingFile);
  stylize->add_option("--model", sa.model, "Style directory holding preserve.ckpt / target.ckpt");
  stylize->add_option("--checkpoint", sa.checkpoint, "Explicit model checkpoint")->check(CLI::ExistingFile);
  stylize->add_option("--alpha-s", sa.alpha_s, "Stroke level");
  stylize->add_option("--alpha-a", sa.alpha_a, "Abstraction level");
  stylize->add_option("--mode", sa.mode, "preserve | target")->check(CLI::IsMember({"preserve", "target"}));
  stylize->add_option("--edit", sa.edits, "Palette transfer: mask.png#RRGGBB (repeatable)");
  stylize->add_option("--hsv-edit", sa.hsv_edits, "HSV adjustment: mask.png:h,s,v (repeatable)");
  stylize->add_option("--region", sa.regions, "Local levels: mask.png@alpha_s,alpha_a (repeatable)");
  stylize->add_option("--superpixels", sa.superpixels, "Cue segment count")->check(CLI::NonNegativeNumber);
  stylize->add_flag("--allow-extrapolation", sa.allow_extrapolation, "Accept levels outside [1, N]");
  stylize->add_option("-o,--out", sa.out, "Output PNG")->required();

  FidArgs fa;
  auto* fid = app.add_subcommand("fid", "Frechet feature distance between two image directories");
  fid->add_option("--set-a", fa.set_a, "First image directory")->required()->check(CLI::ExistingDirectory);
  fid->add_option("--set-b", fa.set_b, "Second image directory")->required()->check(CLI::ExistingDirectory);
  fid->add_option("--extractor", fa.extractor, "Extractor checkpoint, or 'test' for the seeded pyramid");

  server::ServerConfig sc;
  auto* serve = app.add_subcommand("serve", "HTTP inference service");
  serve->add_option("--host", sc.host, "Bind address")->envname("CARTOONER_HOST");
  serve->add_option("--port", sc.port, "Port (0 picks a free one)")->envname("CARTOONER_PORT")->check(CLI::Range(0, 65535));
  serve->add_option("--model-dir", sc.model_dir, "Directory of style subdirectories")->envname("CARTOONER_MODEL_DIR");
  serve->add_flag("--allow-extrapolation", sc.allow_extrapolation, "Accept levels outside [1, N]")
      ->envname("CARTOONER_ALLOW_EXTRAPOLATION");

  InitArgs ia;
  auto* init = app.add_subcommand("init", "Write a randomly initialized model checkpoint");
  init->add_option("--preset", ia.preset, "desk | paper | tiny")->check(CLI::IsMember({"desk", "paper", "tiny"}));
  init->add_option("--seed", ia.seed, "Initialization seed");
  init->add_option("--mode", ia.mode, "preserve | target")->check(CLI::IsMember({"preserve", "target"}));
  init->add_option("-o,--out", ia.out, "Output checkpoint")->required();

  CLI11_PARSE(app, argc, argv);
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    if (*colormap) return cmd_colormap(cm);
    if (*palette) return cmd_palette(pa);
    if (*trainc) return cmd_train(ta);
    if (*stylize) return cmd_stylize(sa);
    if (*fid) return cmd_fid(fa);
    if (*serve) return server::run_server(sc);
    if (*init) return cmd_init(ia);
  } catch (const RangeError& e) {
    spdlog::error("{}", e.what());
    return kOutOfRange;
  } catch (const ContractError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const NotFoundError& e) {
    spdlog::error("{}", e.what());
    return kMissing;
  } catch (const FormatError& e) {
    spdlog::error("{}", e.what());
    return kCorrupt;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}
