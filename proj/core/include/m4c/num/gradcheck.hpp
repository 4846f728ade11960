#pragma once

#include <functional>
#include <span>

#include "m4c/num/tensor.hpp"

namespace m4c::num {

/// Compares the analytic gradient of scalar `f` w.r.t. every element of
/// `inputs` to central differences (f(x+h) - f(x-h)) / 2h.
///
/// Returns the largest |a - n| / max(|a|, |n|, floor). The floor keeps
/// entries whose true gradient is ~0 from turning difference roundoff into a
/// huge ratio. The inputs must be leaves; their requires_grad flag is
/// switched on and their grads are cleared on return.
double check_gradients(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                       double step = 1e-5, double floor = 1e-6);

}  // namespace m4c::num
