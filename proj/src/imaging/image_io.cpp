#include "cyclestain/imaging/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <string>

#include "cyclestain/core/error.hpp"

namespace cyclestain {
namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

cv::Mat to_bgr_mat(const Image& img) {
  const Image unit = normalize(img, ValueRange::Unit);
  const int ch = unit.channels();
  if (ch != 1 && ch != 3) throw ContractError("image IO supports 1 or 3 channels");
  cv::Mat m(unit.height(), unit.width(), ch == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < unit.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < unit.width(); ++x)
      for (int c = 0; c < ch; ++c) {
        const int dst = ch == 3 ? 2 - c : 0;  // OpenCV stores BGR
        row[x * ch + dst] =
            static_cast<std::uint8_t>(std::lround(std::clamp(unit.at(c, y, x), 0.0F, 1.0F) * 255.0F));
      }
  }
  return m;
}

Image from_mat(const cv::Mat& m, const std::string& what) {
  if (m.empty()) throw DataError("cannot decode image: " + what);
  if (m.depth() != CV_8U) throw DataError("only 8-bit images are supported: " + what);
  const int ch = m.channels();
  Image out(3, m.rows, m.cols, ValueRange::Unit);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = ch >= 3 ? 2 - c : 0;
        out.at(c, y, x) = static_cast<float>(row[x * ch + src]) / 255.0F;
      }
    }
  }
  return out;
}

}  // namespace

bool is_supported_image(const std::filesystem::path& path) {
  const std::string e = lower_ext(path);
  return e == ".png" || e == ".tif" || e == ".tiff";
}

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("image not found: " + path.string());
  if (!is_supported_image(path)) throw DataError("unsupported image format: " + path.string());
  return from_mat(cv::imread(path.string(), cv::IMREAD_UNCHANGED), path.string());
}

void write_image(const std::filesystem::path& path, const Image& img) {
  if (!is_supported_image(path)) throw DataError("unsupported image format: " + path.string());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<int> params;
  const std::string e = lower_ext(path);
  if (e == ".tif" || e == ".tiff") params = {cv::IMWRITE_TIFF_COMPRESSION, 1};
  if (!cv::imwrite(path.string(), to_bgr_mat(img), params))
    throw DataError("failed to write image: " + path.string());
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", to_bgr_mat(img), buf)) throw DataError("PNG encoding failed");
  return buf;
}

Image decode_image(const std::vector<std::uint8_t>& bytes) {
  return from_mat(cv::imdecode(bytes, cv::IMREAD_UNCHANGED), "in-memory buffer");
}

std::vector<std::uint8_t> to_interleaved_u8(const Image& img) {
  const Image unit = normalize(img, ValueRange::Unit);
  std::vector<std::uint8_t> out(unit.size());
  const int ch = unit.channels();
  for (int y = 0; y < unit.height(); ++y)
    for (int x = 0; x < unit.width(); ++x)
      for (int c = 0; c < ch; ++c)
        out[(static_cast<std::size_t>(y) * unit.width() + x) * ch + c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(unit.at(c, y, x), 0.0F, 1.0F) * 255.0F));
  return out;
}

Image from_interleaved_u8(const std::uint8_t* data, int height, int width, int channels) {
  Image out(channels, height, width, ValueRange::Unit);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        out.at(c, y, x) =
            static_cast<float>(data[(static_cast<std::size_t>(y) * width + x) * channels + c]) / 255.0F;
  return out;
}

}  // namespace cyclestain
