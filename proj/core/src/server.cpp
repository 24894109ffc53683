#include "cartooner/server.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <boost/beast/core/detail/base64.hpp>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "cartooner/colorcue.hpp"
#include "cartooner/error.hpp"
#include "cartooner/image_io.hpp"
#include "cartooner/inference.hpp"

namespace cartooner::server {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- encoding helpers -------------------------------------------------------------

std::string base64_encode(std::string_view bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::string base64_decode(std::string_view text) {
  namespace b64 = boost::beast::detail::base64;
  if (text.starts_with("data:")) {
    const auto comma = text.find(',');
    if (comma == std::string_view::npos || text.substr(0, comma).find(";base64") == std::string_view::npos) {
      throw ContractError("malformed data URL");
    }
    text.remove_prefix(comma + 1);
  }
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (c == '\n' || c == '\r' || c == ' ') continue;
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/' || c == '=';
    if (!ok) throw ContractError("invalid base64 payload");
    clean.push_back(c);
  }
  if (clean.size() % 4 != 0) throw ContractError("invalid base64 payload length");
  std::size_t body = clean.size();
  for (int i = 0; i < 2 && body > 0 && clean[body - 1] == '='; ++i) --body;
  if (clean.find('=') < body) throw ContractError("invalid base64 payload");
  std::string out(b64::decoded_size(clean.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), clean.data(), body);
  if (read != body) throw ContractError("invalid base64 payload");
  out.resize(written);
  return out;
}

Rgb parse_hex_color(std::string_view hex) {
  if (hex.starts_with('#')) hex.remove_prefix(1);
  if (hex.size() != 6) throw ContractError("color must be #RRGGBB");
  Rgb out{};
  for (int c = 0; c < 3; ++c) {
    int v = 0;
    for (int k = 0; k < 2; ++k) {
      const char ch = static_cast<char>(std::tolower(static_cast<unsigned char>(hex[2 * c + k])));
      int d;
      if (ch >= '0' && ch <= '9') d = ch - '0';
      else if (ch >= 'a' && ch <= 'f') d = ch - 'a' + 10;
      else throw ContractError("color must be #RRGGBB");
      v = v * 16 + d;
    }
    out[c] = v / 255.0;
  }
  return out;
}

std::string to_hex_color(const Rgb& rgb) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string out = "#";
  for (double v : rgb) {
    const int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out += kDigits[q / 16];
    out += kDigits[q % 16];
  }
  return out;
}

Response error_response(int status, std::string_view code, std::string_view message) {
  return {status, json{{"code", code}, {"message", message}}};
}

// ---- registry -----------------------------------------------------------------------

ModelSlot::ModelSlot(fs::path path, json manifest) : path_(std::move(path)), manifest_(std::move(manifest)) {}

const nn::Cartooner& ModelSlot::model() const {
  std::call_once(once_, [this] {
    try {
      model_ = ckpt::load_model(path_).model;
      spdlog::info("loaded {}", path_.string());
    } catch (const std::exception& e) {
      error_ = e.what();
      spdlog::error("cannot load {}: {}", path_.string(), error_);
    }
  });
  if (!model_) throw FormatError("checkpoint " + path_.filename().string() + " could not be loaded: " + error_);
  return *model_;
}

ModelRegistry::ModelRegistry(const fs::path& model_dir) {
  if (!fs::is_directory(model_dir)) {
    spdlog::warn("model directory {} does not exist; serving no styles", model_dir.string());
    return;
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(model_dir)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& dir : dirs) {
    auto entry = std::make_unique<StyleEntry>();
    entry->id = dir.filename().string();
    entry->name = entry->id;
    if (fs::exists(dir / "style.json")) {
      try {
        std::ifstream in(dir / "style.json");
        entry->name = json::parse(in).value("name", entry->id);
      } catch (const std::exception& e) {
        spdlog::warn("ignoring unreadable {}: {}", (dir / "style.json").string(), e.what());
      }
    }
    for (ckpt::ColorMode mode : {ckpt::ColorMode::Preserve, ckpt::ColorMode::Target}) {
      const fs::path p = dir / (std::string(ckpt::to_string(mode)) + ".ckpt");
      if (!fs::exists(p)) continue;
      try {
        json manifest = ckpt::read_manifest(p);
        const nn::ModelConfig cfg = ckpt::config_from_json(manifest.at("model"));
        if (entry->num_levels != 0 && entry->num_levels != cfg.num_levels) {
          spdlog::warn("{}: level count differs from the other mode; skipped", p.string());
          continue;
        }
        entry->num_levels = cfg.num_levels;
        if (entry->model_version.empty()) entry->model_version = manifest.value("model_version", "");
        entry->modes.emplace(mode, std::make_unique<ModelSlot>(p, std::move(manifest)));
      } catch (const std::exception& e) {
        spdlog::warn("skipping {}: {}", p.string(), e.what());
      }
    }
    if (!entry->modes.empty()) styles_.push_back(std::move(entry));
  }
  spdlog::info("model registry: {} style(s) under {}", styles_.size(), model_dir.string());
}

const ModelSlot& ModelRegistry::slot(std::string_view style, ckpt::ColorMode mode) const {
  for (const auto& s : styles_) {
    if (s->id != style) continue;
    auto it = s->modes.find(mode);
    if (it == s->modes.end()) {
      throw NotFoundError("style '" + std::string(style) + "' has no " + std::string(ckpt::to_string(mode)) +
                          " checkpoint");
    }
    return *it->second;
  }
  throw NotFoundError("unknown style '" + std::string(style) + "'");
}

// ---- request handling -------------------------------------------------------------

namespace {

// Failures attributable to the request payload.
struct BadRequest : ContractError {
  using ContractError::ContractError;
};

json parse_body(std::string_view body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw BadRequest("request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw BadRequest(std::string("malformed JSON: ") + e.what());
  }
}

const json& field(const json& j, const char* key) {
  if (!j.contains(key)) throw BadRequest(std::string("missing field '") + key + "'");
  return j.at(key);
}

std::string string_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_string()) throw BadRequest(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

double number_field(const json& j, const char* key, double fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) throw BadRequest(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

Image decode_image_field(const json& j, const char* key) {
  try {
    return data::decode_image(base64_decode(string_field(j, key)));
  } catch (const FormatError& e) {
    throw BadRequest(std::string("field '") + key + "': " + e.what());
  } catch (const ContractError& e) {
    throw BadRequest(std::string("field '") + key + "': " + e.what());
  }
}

RegionMask decode_mask_field(const json& j, const Image& photo, const char* what) {
  if (!j.contains("mask") || j.at("mask").is_null()) return RegionMask(photo.height, photo.width, 1.0);
  RegionMask m;
  try {
    m = data::decode_mask(base64_decode(string_field(j, "mask")));
  } catch (const FormatError& e) {
    throw BadRequest(std::string(what) + " mask: " + e.what());
  } catch (const ContractError& e) {
    throw BadRequest(std::string(what) + " mask: " + e.what());
  }
  if (!m.matches(photo)) {
    throw BadRequest(std::string(what) + " mask is " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                     ", image is " + std::to_string(photo.width) + "x" + std::to_string(photo.height));
  }
  return m;
}

template <typename F>
Response guarded(F&& f) {
  try {
    return f();
  } catch (const BadRequest& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const RangeError& e) {
    return error_response(422, "out_of_range", e.what());
  } catch (const ContractError& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const NotFoundError& e) {
    return error_response(404, "not_found", e.what());
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    return error_response(500, "internal", e.what());
  }
}

}  // namespace

Service::Service(ServerConfig cfg) : cfg_(std::move(cfg)), registry_(cfg_.model_dir) {}

Response Service::styles() const {
  json out = json::array();
  for (const auto& s : registry_.styles()) {
    json modes = json::array();
    for (const auto& [mode, slot] : s->modes) modes.push_back(ckpt::to_string(mode));
    out.push_back({{"id", s->id},
                   {"name", s->name},
                   {"modes", modes},
                   {"N", s->num_levels},
                   {"alpha_range", {1, s->num_levels}},
                   {"extrapolation", cfg_.allow_extrapolation},
                   {"model_version", s->model_version}});
  }
  return {200, out};
}

Response Service::stylize(std::string_view body) const {
  return guarded([&]() -> Response {
    const auto t0 = std::chrono::steady_clock::now();
    const json j = parse_body(body);
    const std::string style = string_field(j, "style");
    ckpt::ColorMode mode = ckpt::ColorMode::Preserve;
    if (j.contains("mode")) {
      try {
        mode = ckpt::color_mode_from_string(string_field(j, "mode"));
      } catch (const BadRequest&) {
        throw;
      } catch (const ContractError& e) {
        throw BadRequest(e.what());
      }
    }

    infer::ControlRequest req;
    req.photo = decode_image_field(j, "image");
    req.mode = mode;
    req.allow_extrapolation = cfg_.allow_extrapolation;
    req.levels = {number_field(j, "alpha_s", 1.0), number_field(j, "alpha_a", 1.0)};
    if (j.contains("superpixels")) {
      const double sp = number_field(j, "superpixels", 0.0);
      if (sp < 0 || sp != std::floor(sp)) throw BadRequest("superpixels must be a non-negative integer");
      req.superpixels = static_cast<int>(sp);
    }
    if (j.contains("regions")) {
      if (!j.at("regions").is_array()) throw BadRequest("'regions' must be an array");
      for (const json& r : j.at("regions")) {
        if (!r.is_object()) throw BadRequest("each region must be an object");
        req.regions.push_back({decode_mask_field(r, req.photo, "region"),
                               {number_field(r, "alpha_s", req.levels.stroke),
                                number_field(r, "alpha_a", req.levels.abstraction)}});
      }
    }
    if (j.contains("color_edits")) {
      if (!j.at("color_edits").is_array()) throw BadRequest("'color_edits' must be an array");
      for (const json& e : j.at("color_edits")) {
        if (!e.is_object()) throw BadRequest("each color edit must be an object");
        infer::ColorEdit edit;
        edit.mask = decode_mask_field(e, req.photo, "color edit");
        if (e.contains("target_rgb")) {
          try {
            edit.edit = parse_hex_color(string_field(e, "target_rgb"));
          } catch (const BadRequest&) {
            throw;
          } catch (const ContractError& ex) {
            throw BadRequest(ex.what());
          }
        } else if (e.contains("hsv")) {
          const json& h = e.at("hsv");
          if (!h.is_object()) throw BadRequest("'hsv' must be an object");
          cue::HsvAugParams p{number_field(h, "h", 0.0), number_field(h, "s", 1.0), number_field(h, "v", 1.0)};
          if (!(p.sat_scale > 0.0) || !(p.val_scale > 0.0)) throw BadRequest("hsv s and v must be positive");
          edit.edit = p;
        } else {
          throw BadRequest("color edit needs 'target_rgb' or 'hsv'");
        }
        req.color_edits.push_back(std::move(edit));
      }
    }

    const ModelSlot& slot = registry_.slot(style, mode);
    const int n = slot.manifest().at("model").at("num_levels").get<int>();
    nn::validate_levels(req.levels, n, req.allow_extrapolation);
    for (const auto& r : req.regions) nn::validate_levels(r.levels, n, req.allow_extrapolation);

    const nn::Cartooner& model = slot.model();
    const Image out = infer::cartoonize(model, req);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return {200, json{{"image", base64_encode(data::encode_png(out))},
                      {"width", out.width},
                      {"height", out.height},
                      {"timing_ms", ms},
                      {"style", style},
                      {"mode", ckpt::to_string(mode)},
                      {"model_version", slot.manifest().value("model_version", "")}}};
  });
}

Response Service::palette(std::string_view body) const {
  return guarded([&]() -> Response {
    const json j = parse_body(body);
    const Image img = decode_image_field(j, "image");
    const double kd = number_field(j, "k", cue::kDefaultPaletteSize);
    if (kd < 1 || kd > 64 || kd != std::floor(kd)) throw BadRequest("k must be an integer in [1, 64]");
    std::optional<RegionMask> mask;
    if (j.contains("mask") && !j.at("mask").is_null()) {
      mask = decode_mask_field(j, img, "palette");
      if (mask->sum() <= 0.0) throw BadRequest("palette mask selects no pixels");
    }
    const cue::Palette p = cue::extract_palette(img, static_cast<int>(kd), 0, mask ? &*mask : nullptr);
    json colors = json::array();
    for (const Rgb& c : p.colors) colors.push_back(to_hex_color(c));
    return {200, json{{"colors", colors}, {"weights", p.weights}, {"padded", p.padded}}};
  });
}

// ---- HTTP --------------------------------------------------------------------------

struct HttpServer::Impl {
  explicit Impl(const Service& s) : service(s) {}
  const Service& service;
  httplib::Server http;
  int port = 0;
};

namespace {

void reply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>(service)) {
  httplib::Server& http = impl_->http;
  const Service* svc = &service;
  http.set_payload_max_length(service.config().max_payload);
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Headers", "Content-Type"},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  http.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  http.Get("/api/styles", [svc](const httplib::Request&, httplib::Response& res) { reply(res, svc->styles()); });
  http.Post("/api/stylize",
            [svc](const httplib::Request& req, httplib::Response& res) { reply(res, svc->stylize(req.body)); });
  http.Post("/api/palette",
            [svc](const httplib::Request& req, httplib::Response& res) { reply(res, svc->palette(req.body)); });
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    reply(res, error_response(500, "internal", msg));
  });
  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const char* code = res.status == 404 ? "not_found" : res.status == 413 ? "payload_too_large" : "bad_request";
    reply(res, error_response(res.status, code, httplib::status_message(res.status)));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  const ServerConfig& cfg = impl_->service.config();
  if (cfg.port == 0) {
    impl_->port = impl_->http.bind_to_any_port(cfg.host);
  } else {
    impl_->port = impl_->http.bind_to_port(cfg.host, cfg.port) ? cfg.port : -1;
  }
  if (impl_->port < 0) throw std::runtime_error("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  return impl_->port;
}

bool HttpServer::listen() { return impl_->http.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

void HttpServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

int run_server(const ServerConfig& cfg) {
  const Service service(cfg);
  HttpServer http(service);
  const int port = http.bind();
  spdlog::info("listening on http://{}:{}", cfg.host, port);
  return http.listen() ? 0 : 1;
}

}  // namespace cartooner::server
