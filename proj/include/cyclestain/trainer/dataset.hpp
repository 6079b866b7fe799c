#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cyclestain/imaging/image.hpp"

namespace cyclestain {

/// In-memory pool of 8-bit RGB images for one domain. Images are returned in
/// the symmetric [-1,1] compute range.
class ImageSet {
 public:
  void add(const Image& img);
  void add_file(const std::filesystem::path& path);

  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  Image get(std::size_t index) const;

 private:
  struct Stored {
    int height;
    int width;
    std::vector<std::uint8_t> planar;  // 3 * height * width
  };
  std::vector<Stored> images_;
};

/// Index of draw number `draw` for a domain of `n` items: reshuffled
/// permutation per epoch, a pure function of (seed, tag, draw).
std::size_t unpaired_index(std::uint64_t seed, std::string_view domain_tag, std::size_t n,
                           std::uint64_t draw);

}  // namespace cyclestain
