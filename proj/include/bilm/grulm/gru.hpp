#pragma once

#include <string>
#include <vector>

#include "bilm/numeric/gradcheck.hpp"
#include "bilm/numeric/graph.hpp"

namespace bilm {

// Binds a model tensor into a graph: mutable tensors become trainable
// parameter leaves, const tensors are copied in as constants.
inline Var bind(Graph& g, Tensor& t) { return g.parameter(t); }
inline Var bind(Graph& g, const Tensor& t) { return g.constant(t); }

// Weights of one gated recurrent unit with hidden size H and input size E.
// Activations are row vectors, so a product W x is computed as x W^T.
struct GruCellParams {
  Tensor w_hz, w_xz, b_z;  // update gate
  Tensor w_hr, w_xr, b_r;  // reset gate
  Tensor w_h1, w_h2, b_h;  // candidate state

  GruCellParams() = default;
  GruCellParams(std::size_t hidden, std::size_t input)
      : w_hz(hidden, hidden), w_xz(hidden, input), b_z(1, hidden),
        w_hr(hidden, hidden), w_xr(hidden, input), b_r(1, hidden),
        w_h1(hidden, hidden), w_h2(hidden, input), b_h(1, hidden) {}

  std::size_t hidden() const { return w_hz.rows(); }
  std::size_t input() const { return w_xz.cols(); }

  template <typename Self>
  static void collect(Self& self, const std::string& prefix, std::vector<NamedTensor>& out) {
    for (auto [name, t] : {std::pair{"w_hz", &self.w_hz}, {"w_xz", &self.w_xz}, {"b_z", &self.b_z},
                           {"w_hr", &self.w_hr}, {"w_xr", &self.w_xr}, {"b_r", &self.b_r},
                           {"w_h1", &self.w_h1}, {"w_h2", &self.w_h2}, {"b_h", &self.b_h}}) {
      out.push_back({prefix + name, const_cast<Tensor*>(t)});
    }
  }
};

struct GruCellVars {
  Var w_hz, w_xz, b_z, w_hr, w_xr, b_r, w_h1, w_h2, b_h;

  template <typename Params>
  static GruCellVars bind_to(Graph& g, Params& p) {
    return {bind(g, p.w_hz), bind(g, p.w_xz), bind(g, p.b_z), bind(g, p.w_hr), bind(g, p.w_xr),
            bind(g, p.b_r),  bind(g, p.w_h1), bind(g, p.w_h2), bind(g, p.b_h)};
  }
};

// One recurrence step on a batch of rows:
//   z  = sigma(W_hz h + W_xz v + b_z)
//   r  = sigma(W_hr h + W_xr v + b_r)
//   h~ = tanh(W_h1 (r * h) + W_h2 v + b_h)
//   h' = (1 - z) * h + z * h~
inline Var gru_step(Graph& g, const GruCellVars& c, Var h_prev, Var v) {
  Var z = g.sigmoid(g.add_row(g.add(g.matmul_nt(h_prev, c.w_hz), g.matmul_nt(v, c.w_xz)), c.b_z));
  Var r = g.sigmoid(g.add_row(g.add(g.matmul_nt(h_prev, c.w_hr), g.matmul_nt(v, c.w_xr)), c.b_r));
  Var cand = g.tanh(g.add_row(g.add(g.matmul_nt(g.mul(r, h_prev), c.w_h1), g.matmul_nt(v, c.w_h2)), c.b_h));
  return g.add(h_prev, g.mul(z, g.sub(cand, h_prev)));
}

}  // namespace bilm
