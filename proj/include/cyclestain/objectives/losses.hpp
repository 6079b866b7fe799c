#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cyclestain/core/autodiff.hpp"
#include "cyclestain/imaging/image.hpp"

namespace cyclestain {

inline constexpr double kDefaultGamma1 = 10.0;

/// Component losses before weighting.
struct LossParts {
  double adv_G_FFPE = 0.0;
  double adv_G_FF = 0.0;
  double adv_D_FFPE = 0.0;
  double adv_D_FF = 0.0;
  double cycle = 0.0;
};

struct LossBundle {
  double adv_G_FFPE = 0.0;
  double adv_G_FF = 0.0;
  double adv_D_FFPE = 0.0;
  double adv_D_FF = 0.0;
  double cycle = 0.0;
  double total_G = 0.0;
  double total_D = 0.0;
  double gamma1 = kDefaultGamma1;

  bool operator==(const LossBundle&) const = default;
};

// Cycle term: mean|recon_ff - ff| + mean|recon_ffpe - ffpe|.
ad::Var cycle_loss(const ad::Var& ff, const ad::Var& ffpe, const ad::Var& recon_ff,
                   const ad::Var& recon_ffpe);
double cycle_loss(const Image& ff, const Image& ffpe, const Image& recon_ff,
                  const Image& recon_ffpe);

// Least-squares generator term: mean of (1 - s)^2 pooled over every element of
// every scale map.
ad::Var adv_loss_generator(std::span<const ad::Var> fake_scores);
double adv_loss_generator(std::span<const Tensor> fake_scores);

// Least-squares discriminator term: pooled mean (1 - real)^2 + pooled mean fake^2.
ad::Var adv_loss_discriminator(std::span<const ad::Var> real_scores,
                               std::span<const ad::Var> fake_scores);
double adv_loss_discriminator(std::span<const Tensor> real_scores,
                              std::span<const Tensor> fake_scores);

/// adv_G_FFPE + adv_G_FF + gamma1 * cycle, as a differentiable scalar.
ad::Var total_generator_loss(const ad::Var& adv_ffpe, const ad::Var& adv_ff, const ad::Var& cycle,
                             double gamma1);

/// Weighted totals. Throws NumericError naming the first non-finite component.
LossBundle total_loss(const LossParts& parts, double gamma1 = kDefaultGamma1);

/// Throws NumericError naming the first non-finite field.
void check_finite(const LossBundle& b);

std::string loss_csv_header();
std::string loss_csv_row(long iteration, const LossBundle& b, double lr);

struct LossRow {
  long iteration = 0;
  LossBundle bundle;
  double lr = 0.0;
};

/// Parses a file written with loss_csv_header / loss_csv_row. Throws DataError
/// on a bad header or malformed row.
std::vector<LossRow> read_loss_csv(const std::filesystem::path& path);

}  // namespace cyclestain
