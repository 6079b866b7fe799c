#include "cyclestain/trainer/augment.hpp"

#include <cmath>
#include <numbers>

#include "cyclestain/core/error.hpp"

namespace cyclestain {
namespace {

constexpr double kEdgeSlack = 1e-9;

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

void AffineRanges::validate() const {
  if (rotation_deg < 0 || shear_deg < 0 || translate_frac < 0)
    throw ConfigError("affine ranges must be non-negative");
  if (scale_min <= 0 || scale_max <= 0) throw ConfigError("affine scale range must be positive");
  if (scale_min > scale_max) throw ConfigError("affine scale_min exceeds scale_max");
  if (shear_deg >= 89.0) throw ConfigError("affine shear range is degenerate");
}

void to_json(nlohmann::json& j, const AffineRanges& r) {
  j = nlohmann::json{{"rotation_deg", r.rotation_deg},
                     {"scale_min", r.scale_min},
                     {"scale_max", r.scale_max},
                     {"shear_deg", r.shear_deg},
                     {"translate_frac", r.translate_frac}};
}

void from_json(const nlohmann::json& j, AffineRanges& r) {
  r.rotation_deg = j.at("rotation_deg").get<double>();
  r.scale_min = j.at("scale_min").get<double>();
  r.scale_max = j.at("scale_max").get<double>();
  r.shear_deg = j.at("shear_deg").get<double>();
  r.translate_frac = j.at("translate_frac").get<double>();
}

Image apply_affine(const Image& img, const AffineParams& p, float fill) {
  if (p.scale <= 0.0) throw ConfigError("apply_affine: scale must be positive");
  const int H = img.height();
  const int W = img.width();
  const double cx = (W - 1) * 0.5;
  const double cy = (H - 1) * 0.5;
  // forward: out = R * Sh * S * (src - c) + c + t
  const double th = radians(p.rotation_deg);
  const double k = std::tan(radians(p.shear_deg));
  const double c = std::cos(th), s = std::sin(th);
  const double a00 = p.scale * c, a01 = p.scale * (c * k - s);
  const double a10 = p.scale * s, a11 = p.scale * (s * k + c);
  const double det = a00 * a11 - a01 * a10;
  if (std::abs(det) < 1e-12) throw ConfigError("apply_affine: degenerate transform");
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;

  Image out(img.channels(), H, W, img.range(), fill);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double dx = x - cx - p.tx;
      const double dy = y - cy - p.ty;
      double sx = i00 * dx + i01 * dy + cx;
      double sy = i10 * dx + i11 * dy + cy;
      if (sx < -kEdgeSlack || sy < -kEdgeSlack || sx > W - 1 + kEdgeSlack || sy > H - 1 + kEdgeSlack)
        continue;
      sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
      const int x0 = std::min(static_cast<int>(sx), W - 1);
      const int y0 = std::min(static_cast<int>(sy), H - 1);
      const int x1 = std::min(x0 + 1, W - 1);
      const int y1 = std::min(y0 + 1, H - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int ch = 0; ch < img.channels(); ++ch) {
        const double v = (1 - fy) * ((1 - fx) * img.at(ch, y0, x0) + fx * img.at(ch, y0, x1)) +
                         fy * ((1 - fx) * img.at(ch, y1, x0) + fx * img.at(ch, y1, x1));
        out.at(ch, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

AffineParams sample_affine(const AffineRanges& ranges, Rng& rng, int height, int width) {
  ranges.validate();
  AffineParams p;
  p.rotation_deg = rng.uniform(-ranges.rotation_deg, ranges.rotation_deg);
  p.scale = rng.uniform(ranges.scale_min, ranges.scale_max);
  p.shear_deg = rng.uniform(-ranges.shear_deg, ranges.shear_deg);
  p.tx = rng.uniform(-ranges.translate_frac, ranges.translate_frac) * width;
  p.ty = rng.uniform(-ranges.translate_frac, ranges.translate_frac) * height;
  return p;
}

Image random_affine(const Image& img, const AffineRanges& ranges, Rng& rng, float fill) {
  return apply_affine(img, sample_affine(ranges, rng, img.height(), img.width()), fill);
}

}  // namespace cyclestain
