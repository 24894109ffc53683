#include "cartooner/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "cartooner/colorcue.hpp"
#include "cartooner/colorspace.hpp"
#include "cartooner/error.hpp"
#include "cartooner/image_io.hpp"

namespace cartooner::data {

using nn::Tensor;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word.
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void DatasetConfig::validate() const {
  if (photo_size < 4 || photo_size % 4 != 0) throw ContractError("photo_size must be a positive multiple of 4");
  if (level_resolutions.empty()) throw ContractError("level_resolutions must not be empty");
  for (std::size_t i = 0; i < level_resolutions.size(); ++i) {
    if (level_resolutions[i] < 8) throw ContractError("level resolutions must be at least 8");
    if (i > 0 && level_resolutions[i] <= level_resolutions[i - 1]) {
      throw ContractError("level_resolutions must be strictly increasing");
    }
  }
  if (batch_size < 1) throw ContractError("batch_size must be positive");
  if (workers < 1) throw ContractError("workers must be positive");
  if (superpixels < 0) throw ContractError("superpixels must be non-negative");
}

std::vector<int> level_resolutions_for(std::string_view preset) {
  const std::vector<int> paper{256, 320, 416, 544, 800};
  if (preset == "paper") return paper;
  int divisor = 0;
  if (preset == "desk") divisor = 4;
  if (preset == "tiny") divisor = 8;
  if (divisor == 0) throw ContractError("unknown preset '" + std::string(preset) + "'");
  std::vector<int> out;
  for (int r : paper) {
    const double scaled = static_cast<double>(r) / divisor;
    const int step = divisor == 4 ? 8 : 4;
    out.push_back(std::max(step, static_cast<int>(std::lround(scaled / step)) * step));
  }
  return out;
}

int resolution_for_level(int level, const DatasetConfig& cfg) {
  const int n = static_cast<int>(cfg.level_resolutions.size());
  if (level < 1 || level > n) {
    throw RangeError("level " + std::to_string(level) + " outside [1, " + std::to_string(n) + "]");
  }
  return cfg.level_resolutions[level - 1];
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir,
                                               const std::filesystem::path& manifest) {
  std::vector<std::filesystem::path> out;
  if (!manifest.empty()) {
    std::ifstream in(manifest);
    if (!in) throw NotFoundError("manifest not found: " + manifest.string());
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      std::filesystem::path p(line);
      out.push_back(p.is_absolute() ? p : manifest.parent_path() / p);
    }
    return out;
  }
  if (!std::filesystem::is_directory(dir)) throw NotFoundError("image directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Image fit_square(const Image& rgb, int size) {
  const double s = static_cast<double>(size) / std::min(rgb.height, rgb.width);
  const int h = std::max(size, static_cast<int>(std::lround(rgb.height * s)));
  const int w = std::max(size, static_cast<int>(std::lround(rgb.width * s)));
  const Image scaled = (h == rgb.height && w == rgb.width) ? rgb : resize_bicubic(rgb, h, w);
  const int y0 = (h - size) / 2;
  const int x0 = (w - size) / 2;
  Image out(size, size, rgb.space);
  const int c = rgb.channels();
  for (int y = 0; y < size; ++y) {
    std::copy_n(&scaled.data[(static_cast<std::size_t>(y + y0) * w + x0) * c], static_cast<std::size_t>(size) * c,
                &out.data[static_cast<std::size_t>(y) * size * c]);
  }
  return out;
}

Image random_square_crop(const Image& rgb, int size, std::uint64_t seed) {
  Image src = rgb;
  if (std::min(rgb.height, rgb.width) < size) {
    const double s = static_cast<double>(size) / std::min(rgb.height, rgb.width);
    src = resize_bicubic(rgb, std::max(size, static_cast<int>(std::ceil(rgb.height * s))),
                         std::max(size, static_cast<int>(std::ceil(rgb.width * s))));
  }
  std::mt19937_64 rng(seed);
  const int y0 = std::uniform_int_distribution<int>(0, src.height - size)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, src.width - size)(rng);
  Image out(size, size, src.space);
  const int c = src.channels();
  for (int y = 0; y < size; ++y) {
    std::copy_n(&src.data[(static_cast<std::size_t>(y + y0) * src.width + x0) * c],
                static_cast<std::size_t>(size) * c, &out.data[static_cast<std::size_t>(y) * size * c]);
  }
  return out;
}

namespace {

std::vector<Image> load_pool(const std::filesystem::path& dir, const std::filesystem::path& manifest,
                             const char* what) {
  std::vector<Image> out;
  for (const auto& p : list_images(dir, manifest)) {
    try {
      Image img = load_image(p);
      if (img.height < 4 || img.width < 4) {
        spdlog::warn("skipping undersized {} image {} ({}x{})", what, p.string(), img.width, img.height);
        continue;
      }
      out.push_back(std::move(img));
    } catch (const std::exception& e) {
      spdlog::warn("skipping unreadable {} image {}: {}", what, p.string(), e.what());
    }
  }
  return out;
}

Tensor stack_field(const std::vector<TrainSample>& samples, Tensor TrainSample::*field) {
  std::vector<Tensor> items;
  items.reserve(samples.size());
  for (const TrainSample& s : samples) items.push_back(s.*field);
  return nn::stack_batch(items);
}

}  // namespace

Dataset::Dataset(DatasetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  photos_ = load_pool(cfg_.photo_dir, cfg_.photo_manifest, "photo");
  cartoons_ = load_pool(cfg_.cartoon_dir, cfg_.cartoon_manifest, "cartoon");
  prepare();
}

Dataset::Dataset(DatasetConfig cfg, std::vector<Image> photos, std::vector<Image> cartoons)
    : cfg_(std::move(cfg)), photos_(std::move(photos)), cartoons_(std::move(cartoons)) {
  cfg_.validate();
  prepare();
}

void Dataset::prepare() {
  if (photos_.empty()) throw ContractError("dataset contains no readable photos");
  if (cartoons_.empty()) throw ContractError("dataset contains no readable cartoons");
  const int segments = cfg_.superpixels > 0 ? cfg_.superpixels
                                            : cue::default_segment_count(cfg_.photo_size, cfg_.photo_size);
  cues_.clear();
  for (Image& p : photos_) {
    require_space(p, ColorSpace::RGB, "Dataset");
    p = fit_square(p, cfg_.photo_size);
    cues_.push_back(cue::superpixel_colormap(p, segments));
  }
  for (const Image& c : cartoons_) require_space(c, ColorSpace::RGB, "Dataset");
  spdlog::debug("dataset: {} photos, {} cartoons, {} segments per cue", photos_.size(), cartoons_.size(), segments);
}

int Dataset::level_for_batch(std::uint64_t batch_index) const {
  std::mt19937_64 rng(mix_seed(mix_seed(cfg_.seed, 0x6C6576656CULL), batch_index));
  const int n = static_cast<int>(cfg_.level_resolutions.size());
  return std::uniform_int_distribution<int>(1, n)(rng);
}

TrainSample Dataset::make_sample(std::uint64_t batch_index, int slot, int level) const {
  const std::uint64_t seed = mix_seed(mix_seed(cfg_.seed, batch_index), static_cast<std::uint64_t>(slot));
  std::mt19937_64 rng(seed);
  TrainSample s;
  s.level = level;
  s.photo_index = std::uniform_int_distribution<int>(0, static_cast<int>(photos_.size()) - 1)(rng);
  s.cartoon_index = std::uniform_int_distribution<int>(0, static_cast<int>(cartoons_.size()) - 1)(rng);
  const std::uint64_t crop_seed = rng();
  const std::uint64_t aug_seed = rng();

  const Image& photo = photos_[s.photo_index];
  const Image& cue_rgb = cues_[s.photo_index];
  s.photo_lab = color::to_net(color::rgb_to_lab(photo));
  s.photo_l = s.photo_lab.channel_slice(0, 1);
  s.photo_ab = s.photo_lab.channel_slice(1, 2);
  s.cue = color::to_net(color::rgb_to_lab(cue_rgb));

  const auto [aug_photo, aug_cue] = cue::hsv_augment(photo, cue_rgb, cue::sample_hsv_params(aug_seed));
  s.aug_photo_ab = color::to_net(color::rgb_to_lab(aug_photo)).channel_slice(1, 2);
  s.aug_cue = color::to_net(color::rgb_to_lab(aug_cue));

  const int res = resolution_for_level(level, cfg_);
  const Tensor cartoon = color::to_net(color::rgb_to_lab(random_square_crop(cartoons_[s.cartoon_index], res, crop_seed)));
  s.cartoon_l = cartoon.channel_slice(0, 1);
  s.cartoon_ab = cartoon.channel_slice(1, 2);
  return s;
}

Batch Dataset::next_batch(std::uint64_t batch_index) const {
  return next_batch(batch_index, level_for_batch(batch_index));
}

Batch Dataset::next_batch(std::uint64_t batch_index, int level) const {
  resolution_for_level(level, cfg_);
  const int b = cfg_.batch_size;
  std::vector<TrainSample> samples(b);
  const int workers = std::min(cfg_.workers, b);
  if (workers <= 1) {
    for (int i = 0; i < b; ++i) samples[i] = make_sample(batch_index, i, level);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int i = w; i < b; i += workers) samples[i] = make_sample(batch_index, i, level);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return collate(samples);
}

Batch collate(const std::vector<TrainSample>& samples) {
  if (samples.empty()) throw ContractError("collate: empty sample list");
  Batch b;
  b.level = samples.front().level;
  for (const TrainSample& s : samples) {
    if (s.level != b.level) throw ContractError("collate: samples from different levels");
    b.photo_indices.push_back(s.photo_index);
    b.cartoon_indices.push_back(s.cartoon_index);
  }
  b.photo_lab = stack_field(samples, &TrainSample::photo_lab);
  b.photo_l = stack_field(samples, &TrainSample::photo_l);
  b.photo_ab = stack_field(samples, &TrainSample::photo_ab);
  b.cue = stack_field(samples, &TrainSample::cue);
  b.aug_photo_ab = stack_field(samples, &TrainSample::aug_photo_ab);
  b.aug_cue = stack_field(samples, &TrainSample::aug_cue);
  b.cartoon_l = stack_field(samples, &TrainSample::cartoon_l);
  b.cartoon_ab = stack_field(samples, &TrainSample::cartoon_ab);
  return b;
}

}  // namespace cartooner::data
