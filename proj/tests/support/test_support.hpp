#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cartooner/autograd.hpp"
#include "cartooner/image.hpp"
#include "cartooner/network.hpp"
#include "cartooner/server.hpp"

namespace cartooner::testing {

std::filesystem::path fixture_dir();

// Removed (recursively) on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "cartooner");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

Image random_rgb(int h, int w, std::uint64_t seed);
Image constant_rgb(int h, int w, const Rgb& c);
// Left half `left`, right half `right`.
Image two_tone(int h, int w, const Rgb& left, const Rgb& right);
// Smooth gradients plus colored discs plus noise: a stand-in for a photo.
Image synthetic_photo(int size, std::uint64_t seed);
// Flat colored discs with dark outlines: a stand-in for a cartoon frame.
Image synthetic_cartoon(int size, std::uint64_t seed);

RegionMask full_mask(int h, int w);
// 1 on columns [0, split), 0 elsewhere.
RegionMask left_mask(int h, int w, int split);

nn::Tensor random_tensor(nn::Shape s, std::uint64_t seed, double scale = 1.0);

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
};

// Central differences of a scalar function of one tensor against the
// analytic gradient from backward(), over `samples` seeded coordinates (all
// coordinates when samples <= 0). Error per coordinate is
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheck check_gradient(const std::function<nn::Var(const nn::Var&)>& f, const nn::Tensor& x, int samples,
                         std::uint64_t seed, double eps = 1e-5, double floor = 1e-7);

// Same, with respect to an existing parameter leaf of a model (the leaf is
// perturbed in place and restored).
GradCheck check_param_gradient(const std::function<nn::Var()>& f, nn::Var leaf, int samples, std::uint64_t seed,
                               double eps = 1e-5, double floor = 1e-7);

// Untrained tiny-preset model written to <dir>/<id>/{preserve,target}.ckpt
// with a style.json, as the server expects.
void write_style(const std::filesystem::path& model_dir, const std::string& id, const std::string& name,
                 const nn::ModelConfig& cfg, bool with_target);

// Server conformance cases from a fixture file. Each case carries a method,
// a path, a request (JSON, where strings "@png:<file>" are replaced by the
// base64 PNG of fixture <file>, or a raw "request_text"), and an expected
// status and body subset. Expected strings "<png WxH>" match a base64 PNG of
// those dimensions.
struct GoldenCase {
  std::string name;
  std::string method;
  std::string path;
  std::string body;
  int status = 200;
  nlohmann::json expect;
};

// Model directory the golden cases are written against.
void build_golden_model_dir(const std::filesystem::path& model_dir);

// Routes a case through Service directly (no HTTP).
server::Response dispatch(const server::Service& service, const GoldenCase& c);

std::vector<GoldenCase> load_golden_cases(const std::filesystem::path& file);

// Empty when `actual` matches the expected subset; otherwise a description
// of the first mismatch.
std::string match_subset(const nlohmann::json& expected, const nlohmann::json& actual, const std::string& where = "$");

}  // namespace cartooner::testing
