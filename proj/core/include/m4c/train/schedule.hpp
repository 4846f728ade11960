#pragma once

#include <cstddef>
#include <vector>

namespace m4c::train {

/// Linear warmup from warmup_factor·base_lr, then staircase decay.
struct LrSchedule {
  double base_lr = 1e-4;
  double warmup_factor = 0.2;
  std::size_t warmup_iters = 2000;
  double decay_factor = 0.1;
  std::vector<std::size_t> decay_steps = {14000, 19000};
  std::size_t max_iters = 24000;

  void validate() const;

  /// Same shape with warmup and decay points rescaled to `max_iters`.
  LrSchedule scaled_to(std::size_t max_iters) const;
};

double lr_at_iter(std::size_t iter, const LrSchedule& schedule);

}  // namespace m4c::train
