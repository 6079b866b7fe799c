#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cyclestain/imaging/image.hpp"

namespace cyclestain {

/// Reads an 8-bit PNG or TIFF into a 3-channel [0,1] image. Grey inputs are
/// replicated across channels and alpha is dropped.
Image read_image(const std::filesystem::path& path);

/// Writes a PNG or 8-bit TIFF (chosen by extension). Symmetric-range images are
/// mapped to [0,1] first; values are rounded to the nearest 8-bit level.
void write_image(const std::filesystem::path& path, const Image& img);

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_image(const std::vector<std::uint8_t>& bytes);

/// Interleaved 8-bit RGB(A) conversion helpers shared by the codecs.
std::vector<std::uint8_t> to_interleaved_u8(const Image& img);
Image from_interleaved_u8(const std::uint8_t* data, int height, int width, int channels);

bool is_supported_image(const std::filesystem::path& path);

}  // namespace cyclestain
