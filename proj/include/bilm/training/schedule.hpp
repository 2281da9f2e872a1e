#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

namespace bilm {

// Validation-driven learning rate. The objective is lower-is-better. Once an
// epoch improves on the best value by less than `threshold` (relative), the
// rate is multiplied by `decay` before every following epoch; the next
// sub-threshold epoch stops training.
struct ScheduleState {
  double lr = 1.0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epoch = 0;
  bool decaying = false;
  std::size_t decays = 0;
  bool stop = false;
};

struct ScheduleStep {
  bool improved = false;  // new best value: checkpoint it
  bool stop = false;      // restore the best checkpoint and finish
  double relative_improvement = 0;
};

// Records the initial (pre-training) validation value.
inline void schedule_start(ScheduleState& s, double lr, double initial_valid) {
  s = ScheduleState{};
  s.lr = lr;
  s.best = initial_valid;
}

inline ScheduleStep lr_schedule(ScheduleState& s, double valid, double threshold, double decay) {
  ScheduleStep out;
  ++s.epoch;
  out.relative_improvement = std::isfinite(s.best) ? (s.best - valid) / std::max(std::abs(s.best), 1e-300) : 1.0;
  if (valid < s.best) {
    s.best = valid;
    s.best_epoch = s.epoch;
    out.improved = true;
  }
  if (out.relative_improvement < threshold) {
    if (s.decaying) {
      s.stop = out.stop = true;
      return out;
    }
    s.decaying = true;
  }
  if (s.decaying) {
    s.lr *= decay;
    ++s.decays;
  }
  return out;
}

}  // namespace bilm
