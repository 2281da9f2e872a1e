#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bilm/errors.hpp"
#include "bilm/numeric/gradcheck.hpp"

namespace bilm {

// One SGD step on parameters whose grad slots hold dL/dparam:
//   g = grad + l2 * param, rescaled to norm `clip` if its global norm is
//   larger, then param -= lr * g. Returns the norm of the applied g.
inline double sgd_update(const std::vector<NamedTensor>& params, double lr, double l2, double clip) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) throw UsageError("sgd_update: '" + p.name + "' has no gradient slot");
    auto g = p.tensor->grad();
    auto v = p.tensor->values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("sgd_update: non-finite gradient in '" + p.name + "'");
      g[i] += l2 * v[i];
      sq += g[i] * g[i];
    }
  }
  const double norm = std::sqrt(sq);
  const double scale = clip > 0 && norm > clip ? clip / norm : 1.0;
  for (const auto& p : params) {
    auto g = p.tensor->grad();
    auto v = p.tensor->values();
    for (std::size_t i = 0; i < g.size(); ++i) v[i] -= lr * scale * g[i];
  }
  return norm * scale;
}

inline void zero_grads(const std::vector<NamedTensor>& params) {
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) p.tensor->enable_grad();
    p.tensor->zero_grad();
  }
}

}  // namespace bilm
