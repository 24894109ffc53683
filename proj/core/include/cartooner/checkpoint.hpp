#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cartooner/network.hpp"

// Single-file archives of named float64 arrays plus a JSON manifest.
//
// Layout (little endian):
//   "CRTNCKPT" | u32 format version | u64 manifest bytes | manifest JSON
//   u64 array count | per array: u32 path bytes, path, i32 n c h w, doubles
//   u64 FNV-1a digest of everything before it
namespace cartooner::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr int kSchemaVersion = 1;

struct Archive {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<std::pair<std::string, nn::Tensor>> arrays;

  [[nodiscard]] const nn::Tensor* find(std::string_view path) const;
};

void write_archive(const Archive& archive, const std::filesystem::path& path);
// Throws NotFoundError for a missing file, FormatError for anything corrupt.
Archive read_archive(const std::filesystem::path& path);
// Reads the header only; no digest check over the arrays.
nlohmann::json read_manifest(const std::filesystem::path& path);

std::string serialize(const Archive& archive);
Archive deserialize(std::string_view bytes);

enum class ColorMode { Preserve, Target };

std::string_view to_string(ColorMode mode);
ColorMode color_mode_from_string(std::string_view s);

struct ModelMeta {
  ColorMode color_mode = ColorMode::Preserve;
  std::string stage = "init";
  std::int64_t step = 0;
  std::string model_version;
};

nlohmann::json config_to_json(const nn::ModelConfig& cfg);
nn::ModelConfig config_from_json(const nlohmann::json& j);

// Manifest plus every parameter leaf of the model.
Archive model_archive(const nn::Cartooner& model, const ModelMeta& meta);
ModelMeta meta_from_manifest(const nlohmann::json& manifest);

// Copies archive arrays into matching leaves. Every model leaf must be
// present with the same shape; extra arrays (optimizer state) are ignored.
void load_params(nn::Cartooner& model, const Archive& archive);

struct LoadedModel {
  std::unique_ptr<nn::Cartooner> model;
  ModelMeta meta;
};

void save_model(const nn::Cartooner& model, const ModelMeta& meta, const std::filesystem::path& path);
LoadedModel load_model(const std::filesystem::path& path);
LoadedModel model_from_archive(const Archive& archive);

}  // namespace cartooner::ckpt
