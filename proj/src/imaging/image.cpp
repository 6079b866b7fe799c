#include "cyclestain/imaging/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cyclestain/core/error.hpp"

namespace cyclestain {
namespace {

constexpr float kRangeSlack = 1e-6F;

std::pair<float, float> bounds(ValueRange r) {
  switch (r) {
    case ValueRange::Unit:
      return {0.0F, 1.0F};
    case ValueRange::Symmetric:
      return {-1.0F, 1.0F};
    case ValueRange::Undeclared:
      break;
  }
  throw ContractError("image value range is undeclared");
}

}  // namespace

std::string_view to_string(ValueRange r) {
  switch (r) {
    case ValueRange::Unit:
      return "unit";
    case ValueRange::Symmetric:
      return "symmetric";
    case ValueRange::Undeclared:
      return "undeclared";
  }
  return "undeclared";
}

Image::Image(int channels, int height, int width, ValueRange range, float fill)
    : channels_(channels), height_(height), width_(width), range_(range) {
  if (channels < 1 || height < 1 || width < 1)
    throw ContractError("Image: extent must be at least 1x1x1, got " + std::to_string(channels) +
                        "x" + std::to_string(height) + "x" + std::to_string(width));
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Image::Image(int channels, int height, int width, ValueRange range, std::vector<float> data)
    : channels_(channels), height_(height), width_(width), range_(range), data_(std::move(data)) {
  if (channels < 1 || height < 1 || width < 1)
    throw ContractError("Image: extent must be at least 1x1x1");
  if (data_.size() != static_cast<std::size_t>(channels) * height * width)
    throw ContractError("Image: data length " + std::to_string(data_.size()) +
                        " != channels*height*width");
}

void Image::validate() const {
  if (channels_ < 1 || height_ < 1 || width_ < 1) throw ContractError("Image: empty extent");
  if (data_.size() != static_cast<std::size_t>(channels_) * height_ * width_)
    throw ContractError("Image: data length mismatch");
  const auto [lo, hi] = bounds(range_);
  for (float v : data_) {
    if (!(v >= lo - kRangeSlack && v <= hi + kRangeSlack))
      throw ContractError("Image: value " + std::to_string(v) + " outside declared " +
                          std::string(to_string(range_)) + " range");
  }
}

Image Image::crop(int y, int x, int h, int w) const {
  if (y < 0 || x < 0 || h < 1 || w < 1 || y + h > height_ || x + w > width_)
    throw ContractError("Image::crop: rectangle outside image");
  Image out(channels_, h, w, range_);
  for (int c = 0; c < channels_; ++c)
    for (int r = 0; r < h; ++r)
      std::copy_n(data_.begin() + c * pixels() + static_cast<std::size_t>(y + r) * width_ + x, w,
                  &out.at(c, r, 0));
  return out;
}

Image normalize(const Image& img, ValueRange target) {
  if (img.range() == ValueRange::Undeclared)
    throw ContractError("normalize: source value range is undeclared");
  if (target == ValueRange::Undeclared)
    throw ContractError("normalize: target value range is undeclared");
  const auto [slo, shi] = bounds(img.range());
  const auto [tlo, thi] = bounds(target);
  std::vector<float> out(img.data().begin(), img.data().end());
  if (img.range() != target) {
    const float gain = (thi - tlo) / (shi - slo);
    for (float& v : out) v = std::clamp(tlo + (v - slo) * gain, tlo, thi);
  }
  return Image(img.channels(), img.height(), img.width(), target, std::move(out));
}

Image downsample2x(const Image& img) {
  if (img.height() < 2 || img.width() < 2)
    throw ContractError("downsample2x: needs at least 2x2 pixels, got " +
                        std::to_string(img.height()) + "x" + std::to_string(img.width()));
  const int h = img.height() / 2;
  const int w = img.width() / 2;
  Image out(img.channels(), h, w, img.range());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = 0.25F * (img.at(c, 2 * y, 2 * x) + img.at(c, 2 * y, 2 * x + 1) +
                                   img.at(c, 2 * y + 1, 2 * x) + img.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

std::vector<float> luminance(const Image& img) {
  std::vector<float> out(img.pixels());
  if (img.channels() < 3) {
    auto p = img.plane(0);
    std::copy(p.begin(), p.end(), out.begin());
    return out;
  }
  auto r = img.plane(0);
  auto g = img.plane(1);
  auto b = img.plane(2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.299F * r[i] + 0.587F * g[i] + 0.114F * b[i];
  return out;
}

double speckle_energy(const Image& img) {
  if (img.height() < 3 || img.width() < 3) throw ContractError("speckle_energy: image smaller than 3x3");
  const Image unit = img.range() == ValueRange::Unit ? img : normalize(img, ValueRange::Unit);
  const std::vector<float> lum = luminance(unit);
  const int h = img.height();
  const int w = img.width();
  double acc = 0.0;
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      double box = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) box += lum[(y + dy) * w + (x + dx)];
      const double d = lum[y * w + x] - box / 9.0;
      acc += d * d;
    }
  }
  return acc / (static_cast<double>(h - 2) * (w - 2));
}

Tensor to_tensor(const Image& img) { return to_tensor(std::span<const Image>(&img, 1)); }

Tensor to_tensor(std::span<const Image> batch) {
  if (batch.empty()) throw ContractError("to_tensor: empty batch");
  const Image& first = batch.front();
  Tensor t(Shape{static_cast<int>(batch.size()), first.channels(), first.height(), first.width()});
  std::size_t offset = 0;
  for (const Image& img : batch) {
    if (img.channels() != first.channels() || img.height() != first.height() ||
        img.width() != first.width())
      throw ContractError("to_tensor: batch images differ in extent");
    for (float v : img.data()) t[offset++] = v;
  }
  return t;
}

Image from_tensor(const Tensor& t, ValueRange range, int index) {
  const Shape s = t.shape();
  if (index < 0 || index >= s.n) throw ContractError("from_tensor: batch index out of range");
  std::vector<float> data(static_cast<std::size_t>(s.c) * s.plane());
  const double* src = t.raw() + static_cast<std::size_t>(index) * data.size();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(src[i]);
  return Image(s.c, s.h, s.w, range, std::move(data));
}

}  // namespace cyclestain
