#include "cyclestain/trainer/adam.hpp"

#include <cmath>

#include "cyclestain/core/error.hpp"

namespace cyclestain {

void Adam::step(ParamStore& params, const ParamStore& grads, double lr, long t) {
  if (t < 1) throw ContractError("Adam::step: step count must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  for (const auto& [name, g] : grads.entries()) {
    Tensor& p = params.get_mutable(name);
    if (p.shape() != g.shape()) throw ContractError("Adam::step: gradient shape mismatch for " + name);
    if (!m_.contains(name)) {
      m_.set(name, Tensor(p.shape(), 0.0));
      v_.set(name, Tensor(p.shape(), 0.0));
    }
    Tensor& m = m_.get_mutable(name);
    Tensor& v = v_.get_mutable(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    if (cfg_.float32_state) {
      round_to_float32(p);
      round_to_float32(m);
      round_to_float32(v);
    }
  }
}

void Adam::restore(ParamStore m, ParamStore v) {
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace cyclestain
