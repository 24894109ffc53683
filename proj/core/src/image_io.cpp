#include "cartooner/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cartooner/error.hpp"

namespace cartooner::data {
namespace {

Image from_mat(const cv::Mat& raw, const std::string& what) {
  if (raw.empty()) throw FormatError("cannot decode image: " + what);
  double scale = 0.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw FormatError("unsupported sample depth in " + what);
  }
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw FormatError("unsupported channel count in " + what);
  }
  cv::Mat f;
  rgb.convertTo(f, CV_64FC3, scale);
  Image img(f.rows, f.cols, ColorSpace::RGB);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<double>(y);
    std::copy(row, row + 3 * f.cols, img.data.begin() + static_cast<std::ptrdiff_t>(3) * y * f.cols);
  }
  return img;
}

cv::Mat to_bgr8(const Image& rgb) {
  require_space(rgb, ColorSpace::RGB, "encode");
  cv::Mat out(rgb.height, rgb.width, CV_8UC3);
  for (int y = 0; y < rgb.height; ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < rgb.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(rgb.at(y, x, c), 0.0, 1.0);
        row[3 * x + (2 - c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return out;
}

RegionMask mask_from_mat(const cv::Mat& raw, const std::string& what) {
  if (raw.empty()) throw FormatError("cannot decode mask: " + what);
  cv::Mat gray = raw;
  if (raw.channels() == 3) cv::cvtColor(raw, gray, cv::COLOR_BGR2GRAY);
  if (raw.channels() == 4) cv::cvtColor(raw, gray, cv::COLOR_BGRA2GRAY);
  const double scale = gray.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  if (gray.depth() != CV_8U && gray.depth() != CV_16U) throw FormatError("unsupported mask depth");
  cv::Mat f;
  gray.convertTo(f, CV_64F, scale);
  RegionMask m(f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<double>(y);
    std::copy(row, row + f.cols, m.data.begin() + static_cast<std::ptrdiff_t>(y) * f.cols);
  }
  return m;
}

cv::Mat mask_to_gray8(const RegionMask& mask) {
  cv::Mat out(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width; ++x) {
      row[x] = static_cast<std::uint8_t>(std::lround(std::clamp(mask.at(y, x), 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

cv::Mat decode_bytes(std::string_view bytes, int flags) {
  std::vector<std::uint8_t> buf(bytes.begin(), bytes.end());
  if (buf.empty()) return {};
  return cv::imdecode(buf, flags);
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& m) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw FormatError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw FormatError("cannot write " + path.string());
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("no such image: " + path.string());
  return from_mat(cv::imread(path.string(), cv::IMREAD_UNCHANGED), path.string());
}

void save_image(const Image& rgb, const std::filesystem::path& path) {
  write_or_throw(path, to_bgr8(rgb));
}

Image decode_image(std::string_view bytes) {
  return from_mat(decode_bytes(bytes, cv::IMREAD_UNCHANGED), "in-memory buffer");
}

std::string encode_png(const Image& rgb) {
  std::vector<std::uint8_t> buf;
  cv::imencode(".png", to_bgr8(rgb), buf);
  return {buf.begin(), buf.end()};
}

RegionMask load_mask(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("no such mask: " + path.string());
  return mask_from_mat(cv::imread(path.string(), cv::IMREAD_UNCHANGED), path.string());
}

RegionMask decode_mask(std::string_view bytes) {
  return mask_from_mat(decode_bytes(bytes, cv::IMREAD_UNCHANGED), "in-memory buffer");
}

std::string encode_mask_png(const RegionMask& mask) {
  std::vector<std::uint8_t> buf;
  cv::imencode(".png", mask_to_gray8(mask), buf);
  return {buf.begin(), buf.end()};
}

void save_mask(const RegionMask& mask, const std::filesystem::path& path) {
  write_or_throw(path, mask_to_gray8(mask));
}

Image resize_bicubic(const Image& img, int height, int width) {
  if (height < 1 || width < 1) throw ContractError("resize_bicubic: empty target size");
  if (img.height == height && img.width == width) return img;
  const int c = img.channels();
  cv::Mat src(img.height, img.width, CV_64FC(c), const_cast<double*>(img.data.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_CUBIC);
  Image out(height, width, img.space);
  for (int y = 0; y < height; ++y) {
    const auto* row = dst.ptr<double>(y);
    std::copy(row, row + c * width, out.data.begin() + static_cast<std::ptrdiff_t>(c) * y * width);
  }
  if (img.space == ColorSpace::RGB) {
    for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

}  // namespace cartooner::data
