#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "cartooner/checkpoint.hpp"
#include "cartooner/image_io.hpp"
#include "cartooner/server.hpp"

namespace fs = std::filesystem;

namespace cartooner::testing {

fs::path fixture_dir() { return CARTOONER_FIXTURE_DIR; }

TempDir::TempDir(const std::string& tag) {
  static std::uint64_t counter = 0;
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Image random_rgb(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, ColorSpace::RGB);
  for (double& v : img.data) v = u(rng);
  return img;
}

Image constant_rgb(int h, int w, const Rgb& c) {
  Image img(h, w, ColorSpace::RGB);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) std::copy(c.begin(), c.end(), img.pixel(i));
  return img;
}

Image two_tone(int h, int w, const Rgb& left, const Rgb& right) {
  Image img(h, w, ColorSpace::RGB);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Rgb& c = x < w / 2 ? left : right;
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
    }
  }
  return img;
}

namespace {

struct Disc {
  double cy, cx, r;
  Rgb color;
};

std::vector<Disc> random_discs(int size, int count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Disc> discs;
  for (int i = 0; i < count; ++i) {
    discs.push_back({u(rng) * size, u(rng) * size, (0.1 + 0.25 * u(rng)) * size, {u(rng), u(rng), u(rng)}});
  }
  return discs;
}

}  // namespace

Image synthetic_photo(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.04);
  const auto discs = random_discs(size, 5, rng);
  Image img(size, size, ColorSpace::RGB);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Rgb c{0.3 + 0.4 * x / size, 0.5 + 0.3 * y / size, 0.6 - 0.2 * x / size};
      for (const Disc& d : discs) {
        const double dist = std::hypot(y - d.cy, x - d.cx);
        const double t = std::clamp(d.r - dist, 0.0, 1.5) / 1.5;
        for (int k = 0; k < 3; ++k) c[k] = (1 - t) * c[k] + t * d.color[k] * (1.0 - 0.3 * dist / d.r);
      }
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = std::clamp(c[k] + noise(rng), 0.0, 1.0);
    }
  }
  return img;
}

Image synthetic_cartoon(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto discs = random_discs(size, 6, rng);
  Image img = constant_rgb(size, size, {0.95, 0.92, 0.85});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (const Disc& d : discs) {
        const double dist = std::hypot(y - d.cy, x - d.cx);
        if (dist > d.r) continue;
        const Rgb c = d.r - dist < 1.5 ? Rgb{0.08, 0.08, 0.1} : d.color;
        for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
      }
    }
  }
  return img;
}

RegionMask full_mask(int h, int w) { return RegionMask(h, w, 1.0); }

RegionMask left_mask(int h, int w, int split) {
  RegionMask m(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < std::min(split, w); ++x) m.at(y, x) = 1.0;
  }
  return m;
}

nn::Tensor random_tensor(nn::Shape s, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  nn::Tensor t(s);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

namespace {

std::vector<std::size_t> pick_coordinates(std::size_t n, int samples, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (samples > 0 && static_cast<std::size_t>(samples) < n) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(samples);
  }
  return idx;
}

double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

GradCheck check_gradient(const std::function<nn::Var(const nn::Var&)>& f, const nn::Tensor& x, int samples,
                         std::uint64_t seed, double eps, double floor) {
  const nn::Var leaf = nn::Var::leaf(x, true);
  f(leaf).backward();
  const nn::Tensor analytic = leaf.grad().empty() ? nn::Tensor(x.shape()) : leaf.grad();

  GradCheck out;
  nn::Tensor probe = x;
  for (std::size_t i : pick_coordinates(x.size(), samples, seed)) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + eps;
    const double up = f(nn::Var::constant(probe)).value().values()[0];
    probe.values()[i] = orig - eps;
    const double down = f(nn::Var::constant(probe)).value().values()[0];
    probe.values()[i] = orig;
    const double numeric = (up - down) / (2 * eps);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic.values()[i], numeric, floor));
    ++out.checked;
  }
  return out;
}

GradCheck check_param_gradient(const std::function<nn::Var()>& f, nn::Var leaf, int samples, std::uint64_t seed,
                               double eps, double floor) {
  leaf.zero_grad();
  f().backward();
  const nn::Tensor analytic = leaf.grad().empty() ? nn::Tensor(leaf.shape()) : leaf.grad();

  GradCheck out;
  nn::Tensor& value = leaf.mutable_value();
  for (std::size_t i : pick_coordinates(value.size(), samples, seed)) {
    const double orig = value.values()[i];
    value.values()[i] = orig + eps;
    const double up = f().value().values()[0];
    value.values()[i] = orig - eps;
    const double down = f().value().values()[0];
    value.values()[i] = orig;
    const double numeric = (up - down) / (2 * eps);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic.values()[i], numeric, floor));
    ++out.checked;
  }
  leaf.zero_grad();
  return out;
}

void write_style(const fs::path& model_dir, const std::string& id, const std::string& name,
                 const nn::ModelConfig& cfg, bool with_target) {
  const fs::path dir = model_dir / id;
  fs::create_directories(dir);
  const nn::Cartooner model(cfg);
  ckpt::ModelMeta meta;
  meta.color_mode = ckpt::ColorMode::Preserve;
  ckpt::save_model(model, meta, dir / "preserve.ckpt");
  if (with_target) {
    meta.color_mode = ckpt::ColorMode::Target;
    ckpt::save_model(model, meta, dir / "target.ckpt");
  }
  std::ofstream(dir / "style.json") << nlohmann::json{{"name", name}}.dump();
}

void build_golden_model_dir(const fs::path& model_dir) {
  write_style(model_dir, "ink", "Ink", nn::ModelConfig::tiny(), true);
  const fs::path broken = model_dir / "broken";
  fs::create_directories(broken);
  nn::ModelConfig cfg = nn::ModelConfig::tiny();
  cfg.init_seed = 3;
  ckpt::ModelMeta meta;
  meta.color_mode = ckpt::ColorMode::Target;
  const fs::path full = broken / "full.tmp";
  ckpt::save_model(nn::Cartooner(cfg), meta, full);
  fs::resize_file(full, fs::file_size(full) / 2);
  fs::rename(full, broken / "target.ckpt");
}

server::Response dispatch(const server::Service& service, const GoldenCase& c) {
  if (c.method == "GET" && c.path == "/api/styles") return service.styles();
  if (c.method == "POST" && c.path == "/api/stylize") return service.stylize(c.body);
  if (c.method == "POST" && c.path == "/api/palette") return service.palette(c.body);
  throw std::runtime_error("no route for " + c.method + " " + c.path);
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read fixture " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void substitute_pngs(nlohmann::json& j, const fs::path& base) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s.rfind("@png:", 0) == 0) j = server::base64_encode(read_file(base / s.substr(5)));
  } else if (j.is_structured()) {
    for (auto& item : j) substitute_pngs(item, base);
  }
}

}  // namespace

std::vector<GoldenCase> load_golden_cases(const fs::path& file) {
  const nlohmann::json doc = nlohmann::json::parse(read_file(file));
  std::vector<GoldenCase> cases;
  for (const auto& c : doc.at("cases")) {
    GoldenCase g;
    g.name = c.at("name");
    g.method = c.value("method", "POST");
    g.path = c.at("path");
    if (c.contains("request_text")) {
      g.body = c.at("request_text").get<std::string>();
    } else if (c.contains("request")) {
      nlohmann::json req = c.at("request");
      substitute_pngs(req, file.parent_path());
      g.body = req.dump();
    }
    g.status = c.at("status");
    g.expect = c.value("expect", nlohmann::json::object());
    cases.push_back(std::move(g));
  }
  return cases;
}

namespace {

std::string match_png(const std::string& pattern, const nlohmann::json& actual, const std::string& where) {
  int w = 0, h = 0;
  if (std::sscanf(pattern.c_str(), "<png %dx%d>", &w, &h) != 2) return where + ": bad pattern " + pattern;
  if (!actual.is_string()) return where + ": expected a base64 PNG";
  try {
    const Image img = data::decode_image(server::base64_decode(actual.get<std::string>()));
    if (img.width != w || img.height != h) {
      return where + ": PNG is " + std::to_string(img.width) + "x" + std::to_string(img.height);
    }
  } catch (const std::exception& e) {
    return where + ": " + e.what();
  }
  return {};
}

}  // namespace

std::string match_subset(const nlohmann::json& expected, const nlohmann::json& actual, const std::string& where) {
  if (expected.is_string() && expected.get<std::string>().rfind("<png ", 0) == 0) {
    return match_png(expected.get<std::string>(), actual, where);
  }
  if (expected.is_object()) {
    if (!actual.is_object()) return where + ": expected an object";
    for (const auto& [key, value] : expected.items()) {
      if (!actual.contains(key)) return where + "." + key + ": missing";
      if (auto err = match_subset(value, actual.at(key), where + "." + key); !err.empty()) return err;
    }
    return {};
  }
  if (expected.is_array()) {
    if (!actual.is_array() || actual.size() != expected.size()) {
      return where + ": expected an array of " + std::to_string(expected.size());
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (auto err = match_subset(expected[i], actual[i], where + "[" + std::to_string(i) + "]"); !err.empty()) {
        return err;
      }
    }
    return {};
  }
  if (expected.is_number() && actual.is_number()) {
    const double e = expected.get<double>(), a = actual.get<double>();
    if (std::abs(e - a) <= 1e-9 * std::max(1.0, std::abs(e))) return {};
    return where + ": " + actual.dump() + " != " + expected.dump();
  }
  if (expected != actual) return where + ": " + actual.dump() + " != " + expected.dump();
  return {};
}

}  // namespace cartooner::testing
