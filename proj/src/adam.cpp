#include "das2/adam.hpp"

#include "das2/error.hpp"

#include <cmath>

namespace das2 {

void adam_step(ad::Vector& params, const ad::Vector& grads, AdamState& state, const AdamHyper& hyper) {
  const auto n = static_cast<std::size_t>(params.size());
  if (static_cast<std::size_t>(grads.size()) != n) throw DimensionError("adam_step: gradient length", n, grads.size());
  if (static_cast<std::size_t>(state.m.size()) != n || static_cast<std::size_t>(state.v.size()) != n) {
    throw DimensionError("adam_step: state length", n, state.m.size());
  }
  ++state.t;
  state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grads;
  state.v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  params.array() -= hyper.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + hyper.eps);
}

}  // namespace das2
