#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cartooner/checkpoint.hpp"
#include "cartooner/image.hpp"
#include "cartooner/network.hpp"

namespace cartooner::server {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path model_dir = "models";
  bool allow_extrapolation = false;
  std::size_t max_payload = 16u << 20;
};

// One checkpoint of a style. Weights load on first use.
class ModelSlot {
 public:
  ModelSlot(std::filesystem::path path, nlohmann::json manifest);

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] const nlohmann::json& manifest() const { return manifest_; }
  // Throws FormatError / NotFoundError when the archive cannot be loaded;
  // the failure is remembered and rethrown on later calls.
  [[nodiscard]] const nn::Cartooner& model() const;

 private:
  std::filesystem::path path_;
  nlohmann::json manifest_;
  mutable std::once_flag once_;
  mutable std::unique_ptr<nn::Cartooner> model_;
  mutable std::string error_;
};

struct StyleEntry {
  std::string id;
  std::string name;
  int num_levels = 0;
  std::string model_version;
  std::map<ckpt::ColorMode, std::unique_ptr<ModelSlot>> modes;
};

// Styles under <model_dir>/<id>/{preserve,target}.ckpt with an optional
// style.json ({"name": ...}). Manifests are read once at construction.
class ModelRegistry {
 public:
  explicit ModelRegistry(const std::filesystem::path& model_dir);

  [[nodiscard]] const std::vector<std::unique_ptr<StyleEntry>>& styles() const { return styles_; }
  // NotFoundError for an unknown style or a mode the style lacks.
  [[nodiscard]] const ModelSlot& slot(std::string_view style, ckpt::ColorMode mode) const;

 private:
  std::vector<std::unique_ptr<StyleEntry>> styles_;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

// Transport-independent request handling. Stateless apart from the lazily
// filled model cache; safe to call concurrently.
class Service {
 public:
  explicit Service(ServerConfig cfg);

  [[nodiscard]] Response styles() const;
  [[nodiscard]] Response stylize(std::string_view body) const;
  [[nodiscard]] Response palette(std::string_view body) const;

  [[nodiscard]] const ServerConfig& config() const { return cfg_; }
  [[nodiscard]] const ModelRegistry& registry() const { return registry_; }

 private:
  ServerConfig cfg_;
  ModelRegistry registry_;
};

Response error_response(int status, std::string_view code, std::string_view message);

std::string base64_encode(std::string_view bytes);
// Accepts an optional "data:<mime>;base64," prefix. Throws ContractError.
std::string base64_decode(std::string_view text);

// "#RRGGBB" (case-insensitive, '#' optional) <-> RGB in [0, 1].
Rgb parse_hex_color(std::string_view hex);
std::string to_hex_color(const Rgb& rgb);

// HTTP binding of a Service.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds the configured host; port 0 picks a free port. Returns the port.
  int bind();
  // Blocks until stop().
  bool listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Builds the service, binds and serves until the process is stopped.
int run_server(const ServerConfig& cfg);

}  // namespace cartooner::server
