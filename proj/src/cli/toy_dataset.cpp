#include "cyclestain/cli/toy_dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "cyclestain/core/error.hpp"
#include "cyclestain/core/rng.hpp"
#include "cyclestain/imaging/image_io.hpp"

namespace cyclestain {
namespace {

using Rgb = std::array<float, 3>;

struct Palette {
  Rgb background;
  Rgb stroma;
  Rgb nucleus;
  Rgb lumen;
};

constexpr Palette kFrozen{{0.97F, 0.96F, 0.97F}, {0.94F, 0.80F, 0.88F}, {0.62F, 0.52F, 0.76F},
                          {0.96F, 0.94F, 0.96F}};
constexpr Palette kParaffin{{0.98F, 0.96F, 0.97F}, {0.88F, 0.42F, 0.62F}, {0.28F, 0.12F, 0.48F},
                            {0.98F, 0.95F, 0.97F}};

// Per-pixel luma noise of the frozen-like rendering, on the [0,1] scale.
constexpr double kSpeckleSigma = 0.05;

struct Ellipse {
  double cy, cx, ry, rx, angle;
};

void blend(Image& img, int y, int x, const Rgb& c, float alpha) {
  for (int ch = 0; ch < 3; ++ch) {
    float& v = img.at(ch, y, x);
    v = v + alpha * (c[ch] - v);
  }
}

// Anti-aliased fill: coverage ramps over about one pixel at the boundary.
void fill_ellipse(Image& img, const Ellipse& e, const Rgb& c, float opacity) {
  const double r = std::max(e.ry, e.rx) + 2.0;
  const int y0 = std::max(0, static_cast<int>(e.cy - r));
  const int y1 = std::min(img.height() - 1, static_cast<int>(e.cy + r));
  const int x0 = std::max(0, static_cast<int>(e.cx - r));
  const int x1 = std::min(img.width() - 1, static_cast<int>(e.cx + r));
  const double ca = std::cos(e.angle);
  const double sa = std::sin(e.angle);
  const double scale = std::min(e.ry, e.rx);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - e.cy;
      const double dx = x - e.cx;
      const double u = (ca * dx + sa * dy) / e.rx;
      const double v = (-sa * dx + ca * dy) / e.ry;
      const double dist = (std::sqrt(u * u + v * v) - 1.0) * scale;
      const double cover = std::clamp(0.5 - dist, 0.0, 1.0);
      if (cover > 0.0) blend(img, y, x, c, static_cast<float>(cover * opacity));
    }
  }
}

void draw_crack(Image& img, Rng& rng) {
  double y = rng.uniform(0.0, img.height());
  double x = rng.uniform(0.0, img.width());
  double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const int steps = 20 + static_cast<int>(rng.below(40));
  const Rgb white{0.99F, 0.99F, 0.99F};
  for (int s = 0; s < steps; ++s) {
    heading += rng.uniform(-0.5, 0.5);
    for (int k = 0; k < 6; ++k) {
      y += std::sin(heading);
      x += std::cos(heading);
      const int iy = static_cast<int>(std::lround(y));
      const int ix = static_cast<int>(std::lround(x));
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
          const int py = iy + dy;
          const int px = ix + dx;
          if (py >= 0 && py < img.height() && px >= 0 && px < img.width())
            blend(img, py, px, white, dy == 0 && dx == 0 ? 0.85F : 0.45F);
        }
    }
  }
}

}  // namespace

Image render_toy_image(ToyDomain domain, std::uint64_t seed, int index, int size) {
  if (size < 16) throw ContractError("render_toy_image: size must be >= 16");
  const auto d = static_cast<std::uint64_t>(domain);
  const auto i = static_cast<std::uint64_t>(index);
  const Palette& pal = domain == ToyDomain::FrozenLike ? kFrozen : kParaffin;
  Rng shapes(derive_seed(seed, "toy-shapes", {d, i}));

  Image img(3, size, size, ValueRange::Unit);
  for (int c = 0; c < 3; ++c) std::fill(img.plane(c).begin(), img.plane(c).end(), pal.background[c]);

  // Stroma density: a few low-frequency waves.
  struct Wave {
    double ky, kx, phase, amp;
  };
  std::array<Wave, 4> waves{};
  for (auto& w : waves) {
    const double freq = shapes.uniform(1.0, 3.0) * 2.0 * std::numbers::pi / size;
    const double dir = shapes.uniform(0.0, 2.0 * std::numbers::pi);
    w = {freq * std::sin(dir), freq * std::cos(dir), shapes.uniform(0.0, 2.0 * std::numbers::pi),
         shapes.uniform(0.1, 0.25)};
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double f = 0.65;
      for (const auto& w : waves) f += w.amp * std::sin(w.ky * y + w.kx * x + w.phase);
      blend(img, y, x, pal.stroma, static_cast<float>(std::clamp(f, 0.2, 1.0)));
    }

  const int lumens = 2 + static_cast<int>(shapes.below(3));
  for (int k = 0; k < lumens; ++k) {
    const double r = shapes.uniform(0.05, 0.12) * size;
    fill_ellipse(img,
                 {shapes.uniform(0.0, size), shapes.uniform(0.0, size), r * shapes.uniform(0.6, 1.0), r,
                  shapes.uniform(0.0, std::numbers::pi)},
                 pal.lumen, 1.0F);
  }

  const int nuclei = (120 + static_cast<int>(shapes.below(80))) * size * size / (512 * 512);
  for (int k = 0; k < nuclei; ++k) {
    const double r = shapes.uniform(3.0, 8.0) * size / 512.0 + 1.5;
    fill_ellipse(img,
                 {shapes.uniform(0.0, size), shapes.uniform(0.0, size), r * shapes.uniform(0.55, 1.0), r,
                  shapes.uniform(0.0, std::numbers::pi)},
                 pal.nucleus, static_cast<float>(shapes.uniform(0.75, 1.0)));
  }

  if (domain == ToyDomain::FrozenLike) {
    Rng texture(derive_seed(seed, "toy-texture", {d, i}));
    const int cracks = 4 + static_cast<int>(texture.below(5));
    for (int k = 0; k < cracks; ++k) draw_crack(img, texture);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const auto n = static_cast<float>(kSpeckleSigma * texture.normal());
        for (int c = 0; c < 3; ++c) img.at(c, y, x) += n;
      }
  }

  for (float& v : img.data()) v = std::round(std::clamp(v, 0.0F, 1.0F) * 255.0F) / 255.0F;
  return img;
}

ToyDataset toy_dataset(const std::filesystem::path& out_dir, std::uint64_t seed, int n_per_domain,
                       int size) {
  if (n_per_domain < 1) throw ContractError("toy_dataset: n_per_domain must be >= 1");
  ToyDataset out;
  const std::pair<ToyDomain, const char*> domains[] = {{ToyDomain::FrozenLike, "A"},
                                                       {ToyDomain::ParaffinLike, "B"}};
  for (const auto& [domain, tag] : domains) {
    const auto dir = out_dir / tag;
    std::filesystem::create_directories(dir);
    auto& paths = domain == ToyDomain::FrozenLike ? out.domain_a : out.domain_b;
    for (int i = 0; i < n_per_domain; ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "toy_%s_%03d.png", tag, i);
      write_image(dir / name, render_toy_image(domain, seed, i, size));
      paths.push_back(dir / name);
    }
  }
  return out;
}

}  // namespace cyclestain
