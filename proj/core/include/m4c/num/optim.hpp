#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "m4c/num/tensor.hpp"

namespace m4c::num {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Parameters without a grad are treated as having a zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, double lr);

/// Rescales all grads so their joint L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
double clip_global_grad_norm(std::span<Tensor> params, double max_norm);

double global_grad_norm(std::span<const Tensor> params);

}  // namespace m4c::num
