#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "cyclestain/core/rng.hpp"
#include "cyclestain/imaging/image.hpp"

namespace cyclestain::testing {

inline Image random_image(std::uint64_t seed, int h, int w, ValueRange range = ValueRange::Symmetric,
                          int channels = 3) {
  Rng rng(seed);
  Image img(channels, h, w, range);
  const double lo = range == ValueRange::Unit ? 0.0 : -1.0;
  for (float& v : img.data()) v = static_cast<float>(rng.uniform(lo, 1.0));
  return img;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("cyclestain_" + tag + "_" + std::to_string(static_cast<unsigned long>(::getpid())));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace cyclestain::testing
