#pragma once

#include "cyclestain/networks/param_store.hpp"

namespace cyclestain {

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Keep parameters and moments on the float32 grid after every update so that
  /// checkpoints (stored as float32) resume bit-exactly.
  bool float32_state = true;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  /// One update with 1-based step count `t`. Only parameters present in `grads` move.
  void step(ParamStore& params, const ParamStore& grads, double lr, long t);

  const AdamConfig& config() const { return cfg_; }
  const ParamStore& first_moment() const { return m_; }
  const ParamStore& second_moment() const { return v_; }
  void restore(ParamStore m, ParamStore v);

 private:
  AdamConfig cfg_;
  ParamStore m_;
  ParamStore v_;
};

}  // namespace cyclestain
