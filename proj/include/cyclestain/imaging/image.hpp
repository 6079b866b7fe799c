#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "cyclestain/core/tensor.hpp"

namespace cyclestain {

enum class ValueRange {
  Undeclared,
  Unit,       // [0, 1]
  Symmetric,  // [-1, 1]
};

std::string_view to_string(ValueRange r);

/// Planar (channel-major) float raster with a declared value range.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, ValueRange range, float fill = 0.0F);
  Image(int channels, int height, int width, ValueRange range, std::vector<float> data);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  ValueRange range() const { return range_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<float> plane(int c) { return std::span<float>(data_).subspan(c * pixels(), pixels()); }
  std::span<const float> plane(int c) const {
    return std::span<const float>(data_).subspan(c * pixels(), pixels());
  }

  float& at(int c, int y, int x) { return data_[(c * pixels()) + y * width_ + x]; }
  float at(int c, int y, int x) const { return data_[(c * pixels()) + y * width_ + x]; }

  /// Throws ContractError when dimensions, data length or values break the invariants.
  void validate() const;

  /// Copy of the rectangle [y, y+h) x [x, x+w).
  Image crop(int y, int x, int h, int w) const;

  bool operator==(const Image&) const = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  ValueRange range_ = ValueRange::Undeclared;
  std::vector<float> data_;
};

/// Affine map between declared ranges: [0,1] -> [-1,1] is v -> 2v - 1.
Image normalize(const Image& img, ValueRange target);

/// 2x2 box average then decimation; output extent is floor(input / 2).
Image downsample2x(const Image& img);

/// Rec. 601 luma of an RGB image in its own value range.
std::vector<float> luminance(const Image& img);

/// High-pass power of the luma on the unit scale: mean over interior pixels of
/// (L - box3x3(L))^2. Symmetric images are mapped to [0,1] first.
double speckle_energy(const Image& img);

/// Single-sample NCHW tensor holding the image values.
Tensor to_tensor(const Image& img);
/// Stack images of identical extent into one batch tensor.
Tensor to_tensor(std::span<const Image> batch);
/// Sample `index` of a batch tensor as an image with the given range tag.
Image from_tensor(const Tensor& t, ValueRange range, int index = 0);

}  // namespace cyclestain
