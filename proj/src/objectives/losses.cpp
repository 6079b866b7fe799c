#include "cyclestain/objectives/losses.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

#include "cyclestain/core/error.hpp"

namespace cyclestain {
namespace {

std::vector<ad::Var> as_constants(std::span<const Tensor> maps) {
  std::vector<ad::Var> out;
  out.reserve(maps.size());
  for (const Tensor& t : maps) out.push_back(ad::constant(t));
  return out;
}

std::size_t element_count(std::span<const ad::Var> maps, const char* op) {
  if (maps.empty()) throw ContractError(std::string(op) + ": no score maps");
  std::size_t n = 0;
  for (const ad::Var& m : maps) n += m.value().size();
  if (n == 0) throw ContractError(std::string(op) + ": empty score maps");
  return n;
}

ad::Var pooled_sq_dev(std::span<const ad::Var> maps, double target, const char* op) {
  const std::size_t n = element_count(maps, op);
  ad::Var acc = ad::sum_sq_dev(maps[0], target);
  for (std::size_t i = 1; i < maps.size(); ++i) acc = ad::add(acc, ad::sum_sq_dev(maps[i], target));
  return ad::scale(acc, 1.0 / static_cast<double>(n));
}

ad::Var image_var(const Image& img) { return ad::constant(to_tensor(img)); }

}  // namespace

ad::Var cycle_loss(const ad::Var& ff, const ad::Var& ffpe, const ad::Var& recon_ff,
                   const ad::Var& recon_ffpe) {
  if (ff.shape() != recon_ff.shape() || ffpe.shape() != recon_ffpe.shape())
    throw ContractError("cycle_loss: reconstruction shape does not match original");
  return ad::add(ad::mean_abs_diff(recon_ff, ff), ad::mean_abs_diff(recon_ffpe, ffpe));
}

double cycle_loss(const Image& ff, const Image& ffpe, const Image& recon_ff,
                  const Image& recon_ffpe) {
  ad::NoGradGuard guard;
  return cycle_loss(image_var(ff), image_var(ffpe), image_var(recon_ff), image_var(recon_ffpe))
      .item();
}

ad::Var adv_loss_generator(std::span<const ad::Var> fake_scores) {
  return pooled_sq_dev(fake_scores, 1.0, "adv_loss_generator");
}

double adv_loss_generator(std::span<const Tensor> fake_scores) {
  ad::NoGradGuard guard;
  const auto vars = as_constants(fake_scores);
  return adv_loss_generator(vars).item();
}

ad::Var adv_loss_discriminator(std::span<const ad::Var> real_scores,
                               std::span<const ad::Var> fake_scores) {
  if (real_scores.size() != fake_scores.size())
    throw ContractError("adv_loss_discriminator: real and fake scale counts differ");
  for (std::size_t i = 0; i < real_scores.size(); ++i)
    if (real_scores[i].shape() != fake_scores[i].shape())
      throw ContractError("adv_loss_discriminator: map shape mismatch at scale " + std::to_string(i));
  return ad::add(pooled_sq_dev(real_scores, 1.0, "adv_loss_discriminator"),
                 pooled_sq_dev(fake_scores, 0.0, "adv_loss_discriminator"));
}

double adv_loss_discriminator(std::span<const Tensor> real_scores,
                              std::span<const Tensor> fake_scores) {
  ad::NoGradGuard guard;
  const auto r = as_constants(real_scores);
  const auto f = as_constants(fake_scores);
  return adv_loss_discriminator(r, f).item();
}

ad::Var total_generator_loss(const ad::Var& adv_ffpe, const ad::Var& adv_ff, const ad::Var& cycle,
                             double gamma1) {
  return ad::add(ad::add(adv_ffpe, adv_ff), ad::scale(cycle, gamma1));
}

void check_finite(const LossBundle& b) {
  const std::pair<const char*, double> fields[] = {
      {"adv_G_FFPE", b.adv_G_FFPE}, {"adv_G_FF", b.adv_G_FF}, {"adv_D_FFPE", b.adv_D_FFPE},
      {"adv_D_FF", b.adv_D_FF},     {"cycle", b.cycle},       {"total_G", b.total_G},
      {"total_D", b.total_D},       {"gamma1", b.gamma1}};
  for (const auto& [name, v] : fields)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss component: ") + name);
}

LossBundle total_loss(const LossParts& parts, double gamma1) {
  LossBundle b;
  b.adv_G_FFPE = parts.adv_G_FFPE;
  b.adv_G_FF = parts.adv_G_FF;
  b.adv_D_FFPE = parts.adv_D_FFPE;
  b.adv_D_FF = parts.adv_D_FF;
  b.cycle = parts.cycle;
  b.gamma1 = gamma1;
  b.total_G = 0.0;
  b.total_D = 0.0;
  check_finite(b);
  b.total_G = parts.adv_G_FFPE + parts.adv_G_FF + gamma1 * parts.cycle;
  b.total_D = parts.adv_D_FFPE + parts.adv_D_FF;
  check_finite(b);
  return b;
}

std::string loss_csv_header() {
  return "iteration,adv_G_FFPE,adv_G_FF,adv_D_FFPE,adv_D_FF,cycle,total_G,total_D,gamma1,lr";
}

std::string loss_csv_row(long iteration, const LossBundle& b, double lr) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                iteration, b.adv_G_FFPE, b.adv_G_FF, b.adv_D_FFPE, b.adv_D_FF, b.cycle, b.total_G,
                b.total_D, b.gamma1, lr);
  return buf;
}

std::vector<LossRow> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != loss_csv_header())
    throw DataError(path.string() + ": unexpected loss CSV header");
  std::vector<LossRow> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    LossRow r;
    LossBundle& b = r.bundle;
    const int n = std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &r.iteration,
                              &b.adv_G_FFPE, &b.adv_G_FF, &b.adv_D_FFPE, &b.adv_D_FF, &b.cycle,
                              &b.total_G, &b.total_D, &b.gamma1, &r.lr);
    if (n != 10) throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    rows.push_back(r);
  }
  return rows;
}

}  // namespace cyclestain
