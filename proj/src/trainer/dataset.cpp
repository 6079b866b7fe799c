#include "cyclestain/trainer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cyclestain/core/error.hpp"
#include "cyclestain/core/rng.hpp"
#include "cyclestain/imaging/image_io.hpp"

namespace cyclestain {

void ImageSet::add(const Image& img) {
  if (img.channels() != 3) throw ContractError("ImageSet: images must have 3 channels");
  const Image unit = normalize(img, ValueRange::Unit);
  Stored s{unit.height(), unit.width(), std::vector<std::uint8_t>(unit.size())};
  for (std::size_t i = 0; i < unit.size(); ++i)
    s.planar[i] = static_cast<std::uint8_t>(std::lround(std::clamp(unit.data()[i], 0.0F, 1.0F) * 255.0F));
  images_.push_back(std::move(s));
}

void ImageSet::add_file(const std::filesystem::path& path) { add(read_image(path)); }

Image ImageSet::get(std::size_t index) const {
  if (index >= images_.size()) throw ContractError("ImageSet::get: index out of range");
  const Stored& s = images_[index];
  std::vector<float> data(s.planar.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = s.planar[i] / 255.0F * 2.0F - 1.0F;
  return Image(3, s.height, s.width, ValueRange::Symmetric, std::move(data));
}

std::size_t unpaired_index(std::uint64_t seed, std::string_view domain_tag, std::size_t n,
                           std::uint64_t draw) {
  if (n == 0) throw ContractError("unpaired_index: empty dataset");
  const std::uint64_t epoch = draw / n;
  const std::size_t pos = draw % n;
  thread_local std::vector<std::size_t> perm;
  thread_local std::uint64_t cached_key = 0;
  thread_local std::size_t cached_n = 0;
  const std::uint64_t key = derive_seed(seed, domain_tag, {epoch});
  if (perm.size() != n || cached_key != key || cached_n != n) {
    perm.resize(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(key);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    cached_key = key;
    cached_n = n;
  }
  return perm[pos];
}

}  // namespace cyclestain
