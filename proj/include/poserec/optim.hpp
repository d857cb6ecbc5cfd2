#pragma once

#include <cmath>
#include <cstdint>

#include "poserec/autodiff.hpp"

namespace poserec {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l2 = 0.0;  // applied as an added gradient term l2 * value
};

// Tracks the shared step counter; one optimizer per model.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }

  // Standard bias-corrected update over every parameter in the store.
  // Each parameter is updated independently, so registration order cannot
  // change the result. Gradients are zeroed afterwards.
  void step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Parameter& p = params.at(pi);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i] + cfg_.l2 * p.value[i];
        p.adam_m[i] = cfg_.beta1 * p.adam_m[i] + (1.0 - cfg_.beta1) * g;
        p.adam_v[i] = cfg_.beta2 * p.adam_v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = p.adam_m[i] / bc1;
        const double vhat = p.adam_v[i] / bc2;
        p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
    params.zero_grads();
  }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
};

}  // namespace poserec
