#pragma once

#include "das2/autodiff.hpp"

#include <cstdint>

namespace das2 {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ad::Vector m;
  ad::Vector v;
  std::int64_t t = 0;

  explicit AdamState(ad::Index n = 0) : m(ad::Vector::Zero(n)), v(ad::Vector::Zero(n)) {}
};

/// One bias-corrected Adam update (Kingma & Ba). Advances state.t.
void adam_step(ad::Vector& params, const ad::Vector& grads, AdamState& state, const AdamHyper& hyper);

}  // namespace das2
