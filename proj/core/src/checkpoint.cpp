#include "cartooner/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cartooner/error.hpp"

namespace cartooner::ckpt {
namespace {

static_assert(std::endian::native == std::endian::little, "archive format assumes little endian");

constexpr char kMagic[8] = {'C', 'R', 'T', 'N', 'C', 'K', 'P', 'T'};

std::uint64_t fnv(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  [[nodiscard]] std::size_t pos() const { return pos_; }
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json parse_manifest(Reader& r) {
  if (r.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw FormatError("not a checkpoint archive (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw FormatError("unsupported checkpoint format version " + std::to_string(version));
  }
  const auto len = r.get<std::uint64_t>();
  if (len > r.remaining()) throw FormatError("checkpoint manifest length exceeds file size");
  try {
    return nlohmann::json::parse(r.take(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace

const nn::Tensor* Archive::find(std::string_view path) const {
  for (const auto& [p, t] : arrays) {
    if (p == path) return &t;
  }
  return nullptr;
}

std::string serialize(const Archive& archive) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kFormatVersion);
  const std::string manifest = archive.manifest.dump();
  put<std::uint64_t>(out, manifest.size());
  out += manifest;
  put<std::uint64_t>(out, archive.arrays.size());
  for (const auto& [path, t] : archive.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(path.size()));
    out += path;
    const nn::Shape& s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  put<std::uint64_t>(out, fnv(out));
  return out;
}

Archive deserialize(std::string_view bytes) {
  if (bytes.size() < sizeof(std::uint64_t)) throw FormatError("checkpoint truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), sizeof(stored));
  if (stored != fnv(body)) throw FormatError("checkpoint digest mismatch (corrupt file)");

  Reader r(body);
  Archive a;
  a.manifest = parse_manifest(r);
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto plen = r.get<std::uint32_t>();
    std::string path(r.take(plen));
    nn::Shape s;
    s.n = r.get<std::int32_t>();
    s.c = r.get<std::int32_t>();
    s.h = r.get<std::int32_t>();
    s.w = r.get<std::int32_t>();
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw FormatError("negative extent in " + path);
    const std::size_t nbytes = s.size() * sizeof(double);
    if (nbytes > r.remaining()) throw FormatError("array " + path + " exceeds file size");
    std::vector<double> values(s.size());
    std::memcpy(values.data(), r.take(nbytes).data(), nbytes);
    a.arrays.emplace_back(std::move(path), nn::Tensor(s, std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint arrays");
  return a;
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so readers never observe a half-written file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    const std::string bytes = serialize(archive);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) { return deserialize(read_file(path)); }

nlohmann::json read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint not found: " + path.string());
  std::string head(sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  if (in.gcount() != static_cast<std::streamsize>(head.size())) throw FormatError("checkpoint truncated");
  std::uint64_t len;
  std::memcpy(&len, head.data() + sizeof(kMagic) + sizeof(std::uint32_t), sizeof(len));
  if (len > (1ULL << 30)) throw FormatError("implausible checkpoint manifest length");
  std::string rest(len, '\0');
  in.read(rest.data(), static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len)) throw FormatError("checkpoint truncated");
  const std::string bytes = head + rest;
  Reader r(bytes);
  return parse_manifest(r);
}

std::string_view to_string(ColorMode mode) {
  return mode == ColorMode::Preserve ? "preserve" : "target";
}

ColorMode color_mode_from_string(std::string_view s) {
  if (s == "preserve") return ColorMode::Preserve;
  if (s == "target") return ColorMode::Target;
  throw ContractError("unknown color mode '" + std::string(s) + "' (expected preserve or target)");
}

nlohmann::json config_to_json(const nn::ModelConfig& cfg) {
  return {{"preset", cfg.preset},
          {"base_channels", cfg.base_channels},
          {"resnext_blocks", cfg.resnext_blocks},
          {"cardinality", cfg.cardinality},
          {"num_levels", cfg.num_levels},
          {"kernel_sizes", cfg.kernel_sizes},
          {"leaky_slope", cfg.leaky_slope},
          {"image_size", cfg.image_size},
          {"feature_channels", cfg.feature_channels()},
          {"init_seed", cfg.init_seed}};
}

nn::ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    nn::ModelConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.base_channels = j.at("base_channels").get<int>();
    c.resnext_blocks = j.at("resnext_blocks").get<int>();
    c.cardinality = j.at("cardinality").get<int>();
    c.num_levels = j.at("num_levels").get<int>();
    c.kernel_sizes = j.at("kernel_sizes").get<std::vector<int>>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.image_size = j.at("image_size").get<int>();
    c.init_seed = j.value("init_seed", std::uint64_t{0});
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: bad model config: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

Archive model_archive(const nn::Cartooner& model, const ModelMeta& meta) {
  Archive a;
  const std::string version =
      meta.model_version.empty()
          ? model.config().preset + "-" + std::string(to_string(meta.color_mode)) + "-" +
                std::to_string(model.params().hash())
          : meta.model_version;
  a.manifest = {{"schema_version", kSchemaVersion},
                {"model", config_to_json(model.config())},
                {"color_mode", to_string(meta.color_mode)},
                {"stage", meta.stage},
                {"step", meta.step},
                {"model_version", version}};
  for (const nn::ParamLeaf& leaf : model.params().leaves()) {
    a.arrays.emplace_back(leaf.path, leaf.var.value());
  }
  return a;
}

ModelMeta meta_from_manifest(const nlohmann::json& manifest) {
  try {
    const int schema = manifest.at("schema_version").get<int>();
    if (schema != kSchemaVersion) {
      throw FormatError("unsupported checkpoint schema version " + std::to_string(schema));
    }
    ModelMeta m;
    m.color_mode = color_mode_from_string(manifest.at("color_mode").get<std::string>());
    m.stage = manifest.value("stage", std::string("init"));
    m.step = manifest.value("step", std::int64_t{0});
    m.model_version = manifest.value("model_version", std::string());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

void load_params(nn::Cartooner& model, const Archive& archive) {
  for (const nn::ParamLeaf& leaf : model.params().leaves()) {
    const nn::Tensor* t = archive.find(leaf.path);
    if (t == nullptr) throw FormatError("checkpoint is missing parameter " + leaf.path);
    if (t->shape() != leaf.var.value().shape()) {
      throw FormatError("checkpoint parameter " + leaf.path + " has shape " + t->shape().str() +
                        ", model expects " + leaf.var.value().shape().str());
    }
  }
  for (const nn::ParamLeaf& leaf : model.params().leaves()) {
    nn::Var v = leaf.var;
    v.mutable_value() = *archive.find(leaf.path);
  }
}

void save_model(const nn::Cartooner& model, const ModelMeta& meta, const std::filesystem::path& path) {
  write_archive(model_archive(model, meta), path);
}

LoadedModel model_from_archive(const Archive& archive) {
  LoadedModel out;
  out.meta = meta_from_manifest(archive.manifest);
  if (!archive.manifest.contains("model")) throw FormatError("checkpoint manifest has no model section");
  out.model = std::make_unique<nn::Cartooner>(config_from_json(archive.manifest.at("model")));
  load_params(*out.model, archive);
  return out;
}

LoadedModel load_model(const std::filesystem::path& path) {
  return model_from_archive(read_archive(path));
}

}  // namespace cartooner::ckpt
