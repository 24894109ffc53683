#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cartooner/image.hpp"
#include "cartooner/tensor.hpp"

namespace cartooner::data {

struct DatasetConfig {
  std::filesystem::path photo_dir;
  std::filesystem::path cartoon_dir;
  // Optional: one path per line, relative to the manifest's directory.
  std::filesystem::path photo_manifest;
  std::filesystem::path cartoon_manifest;
  int photo_size = 64;
  std::vector<int> level_resolutions{64, 80, 104, 136, 200};
  std::uint64_t seed = 0;
  int batch_size = 8;
  int workers = 1;
  // 0 selects default_segment_count for the photo size.
  int superpixels = 0;

  void validate() const;
};

// {256, 320, 416, 544, 800} for "paper", a quarter of that rounded to
// multiples of 8 for "desk" and "tiny".
std::vector<int> level_resolutions_for(std::string_view preset);

int resolution_for_level(int level, const DatasetConfig& cfg);

struct TrainSample {
  nn::Tensor photo_lab;     // (1, 3, S, S)
  nn::Tensor photo_l;       // (1, 1, S, S)
  nn::Tensor photo_ab;      // (1, 2, S, S)
  nn::Tensor cue;           // (1, 3, S, S) un-augmented superpixel cue, Lab
  nn::Tensor aug_photo_ab;  // (1, 2, S, S) from the augmented photo
  nn::Tensor aug_cue;       // (1, 3, S, S) augmented with the same params
  nn::Tensor cartoon_l;     // (1, 1, R, R), R = resolution of `level`
  nn::Tensor cartoon_ab;    // (1, 2, R, R)
  int level = 1;
  int photo_index = 0;
  int cartoon_index = 0;
};

struct Batch {
  int level = 1;
  std::vector<int> photo_indices;
  std::vector<int> cartoon_indices;
  nn::Tensor photo_lab;
  nn::Tensor photo_l;
  nn::Tensor photo_ab;
  nn::Tensor cue;
  nn::Tensor aug_photo_ab;
  nn::Tensor aug_cue;
  nn::Tensor cartoon_l;
  nn::Tensor cartoon_ab;

  [[nodiscard]] int size() const { return static_cast<int>(photo_indices.size()); }
};

Batch collate(const std::vector<TrainSample>& samples);

// Sorted .png/.jpg/.jpeg files in `dir`, or the manifest's entries when given.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir,
                                               const std::filesystem::path& manifest = {});

// Photo and cartoon pools held in memory. Photos are resized (short side)
// and center-cropped to photo_size at load time and their superpixel cues
// are cached. Batches are a pure function of (seed, batch index).
class Dataset {
 public:
  explicit Dataset(DatasetConfig cfg);
  Dataset(DatasetConfig cfg, std::vector<Image> photos, std::vector<Image> cartoons);

  [[nodiscard]] const DatasetConfig& config() const { return cfg_; }
  [[nodiscard]] std::size_t photo_count() const { return photos_.size(); }
  [[nodiscard]] std::size_t cartoon_count() const { return cartoons_.size(); }

  // Level drawn uniformly from {1..N} per batch.
  [[nodiscard]] int level_for_batch(std::uint64_t batch_index) const;
  [[nodiscard]] Batch next_batch(std::uint64_t batch_index) const;
  [[nodiscard]] Batch next_batch(std::uint64_t batch_index, int level) const;
  [[nodiscard]] TrainSample make_sample(std::uint64_t batch_index, int slot, int level) const;

 private:
  void prepare();

  DatasetConfig cfg_;
  std::vector<Image> photos_;
  std::vector<Image> cues_;
  std::vector<Image> cartoons_;
};

// Short-side resize to `size` (bicubic) followed by a centered square crop.
Image fit_square(const Image& rgb, int size);
// Square crop of side `size` at a seeded random offset; sources smaller than
// `size` are first upscaled (bicubic) so their short side equals it.
Image random_square_crop(const Image& rgb, int size, std::uint64_t seed);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace cartooner::data
