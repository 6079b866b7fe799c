#pragma once

#include "cyclestain/core/rng.hpp"
#include "cyclestain/imaging/image.hpp"
#include "json.hpp"

namespace cyclestain {

/// Sampling ranges for the per-iteration affine augmentation.
struct AffineRanges {
  double rotation_deg = 15.0;   // uniform in [-r, r]
  double scale_min = 0.9;
  double scale_max = 1.1;
  double shear_deg = 5.0;       // uniform in [-s, s]
  double translate_frac = 0.05; // fraction of width/height, uniform in [-t, t]

  void validate() const;
  static AffineRanges none() { return {0.0, 1.0, 1.0, 0.0, 0.0}; }
};

void to_json(nlohmann::json& j, const AffineRanges& r);
void from_json(const nlohmann::json& j, AffineRanges& r);

struct AffineParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double shear_deg = 0.0;
  double tx = 0.0;  // pixels
  double ty = 0.0;
};

/// Transform about the image centre, bilinear resampling; samples that fall
/// outside the source are set to `fill`.
Image apply_affine(const Image& img, const AffineParams& p, float fill);
AffineParams sample_affine(const AffineRanges& ranges, Rng& rng, int height, int width);
Image random_affine(const Image& img, const AffineRanges& ranges, Rng& rng, float fill);

}  // namespace cyclestain
