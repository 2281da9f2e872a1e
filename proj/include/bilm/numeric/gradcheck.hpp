#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "bilm/numeric/tensor.hpp"
#include "bilm/rng.hpp"

namespace bilm {

struct NamedTensor {
  std::string name;
  Tensor* tensor = nullptr;
};

// Computes a scalar loss from the current parameter values. When
// accumulate_grad is true it must also add d(loss)/d(param) into every
// parameter's grad slot. Must be deterministic (dropout masks frozen).
using LossFn = std::function<double(bool accumulate_grad)>;

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> tensors;
  double max_rel_error = 0;
  std::string worst_tensor;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  std::size_t max_entries_per_tensor = 200;  // larger tensors are subsampled
  std::uint64_t seed = 1;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Central-difference check of every entry (or a random subsample of
// max_entries_per_tensor entries) of each parameter tensor.
inline GradCheckReport check_gradients(const LossFn& loss_fn, const std::vector<NamedTensor>& params,
                                       const GradCheckOptions& opts = {}) {
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) p.tensor->enable_grad();
    p.tensor->zero_grad();
  }
  const double base = loss_fn(true);
  const double again = loss_fn(false);
  if (base != again) {
    throw NumericError("check_gradients: loss is not deterministic (" + std::to_string(base) + " vs " +
                       std::to_string(again) + ")");
  }

  Rng rng(opts.seed);
  GradCheckReport report;
  for (const auto& p : params) {
    Tensor& t = *p.tensor;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opts.max_entries_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_entries_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    GradCheckEntry entry{p.name};
    for (std::size_t i : idx) {
      const double saved = t[i];
      t[i] = saved + opts.step;
      const double plus = loss_fn(false);
      t[i] = saved - opts.step;
      const double minus = loss_fn(false);
      t[i] = saved;
      const double numeric = (plus - minus) / (2 * opts.step);
      const double err = relative_error(analytic[i], numeric);
      ++entry.checked;
      if (err >= entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numeric = numeric;
      }
    }
    if (entry.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      report.worst_tensor = entry.name;
    }
    report.tensors.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < opts.tolerance;
  return report;
}

}  // namespace bilm
