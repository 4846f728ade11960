#include "m4c/train/schedule.hpp"

#include <cmath>
#include <string>

#include "m4c/errors.hpp"

namespace m4c::train {

void LrSchedule::validate() const {
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ValidationError("schedule: base_lr must be > 0");
  if (!(warmup_factor >= 0)) throw ValidationError("schedule: warmup_factor must be >= 0");
  if (!(decay_factor > 0)) throw ValidationError("schedule: decay_factor must be > 0");
  for (std::size_t i = 0; i < decay_steps.size(); ++i) {
    if (i > 0 && decay_steps[i] <= decay_steps[i - 1]) {
      throw ValidationError("schedule: decay_steps must be strictly increasing");
    }
    if (decay_steps[i] >= max_iters) {
      throw ValidationError("schedule: decay step " + std::to_string(decay_steps[i]) +
                            " not below max_iters " + std::to_string(max_iters));
    }
  }
}

LrSchedule LrSchedule::scaled_to(std::size_t iters) const {
  LrSchedule s = *this;
  s.max_iters = iters;
  if (max_iters == 0) return s;
  const auto rescale = [&](std::size_t v) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(v) * iters / max_iters));
  };
  s.warmup_iters = rescale(warmup_iters);
  s.decay_steps.clear();
  for (auto step : decay_steps) {
    const auto v = rescale(step);
    if (v >= iters || (!s.decay_steps.empty() && v <= s.decay_steps.back())) continue;
    s.decay_steps.push_back(v);
  }
  return s;
}

double lr_at_iter(std::size_t iter, const LrSchedule& s) {
  if (iter >= s.max_iters) {
    throw ValidationError("lr_at_iter: iteration " + std::to_string(iter) + " beyond max_iters " +
                          std::to_string(s.max_iters));
  }
  if (iter < s.warmup_iters) {
    const double alpha = static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
    return s.base_lr * (s.warmup_factor * (1.0 - alpha) + alpha);
  }
  double lr = s.base_lr;
  for (auto step : s.decay_steps)
    if (iter >= step) lr *= s.decay_factor;
  return lr;
}

}  // namespace m4c::train
