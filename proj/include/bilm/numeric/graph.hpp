#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bilm/numeric/tensor.hpp"

namespace bilm {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline ConstMatrixMap view(const Tensor& t) { return {t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
inline MatrixMap view(Tensor& t) { return {t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// Handle to a node of a Graph.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode tape. Nodes are appended in creation order, which is a
// topological order; backward() replays them in reverse exactly once. Leaves
// bound with parameter() push their adjoint into the bound tensor's grad slot.
// References returned by value() stay valid for the life of the graph. A Graph
// is single-threaded and must not outlive the parameters bound to it.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }

  // Adjoint of a node after backward(); empty tensor if it received none.
  const Tensor& adjoint(Var v) const { return adjoints_.at(v.id); }

  Var parameter(Tensor& p) {
    Var v = push("parameter", Tensor(p.rows(), p.cols(), std::vector<double>(p.values().begin(), p.values().end())), {});
    nodes_[v.id].param = &p;
    return v;
  }

  Var constant(Tensor t) { return push("constant", std::move(t), {}); }

  // a[m x k] * b[k x n]
  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) {
      throw DimensionError("matmul: inner dimensions disagree, " + to_string(A.shape()) + " * " +
                           to_string(B.shape()));
    }
    Tensor out(A.rows(), B.cols());
    detail::view(out).noalias() = detail::view(A) * detail::view(B);
    return push("matmul", std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& dc) {
      const Tensor& A = g.value(a);
      const Tensor& B = g.value(b);
      Tensor da(A.rows(), A.cols());
      detail::view(da).noalias() = detail::view(dc) * detail::view(B).transpose();
      Tensor db(B.rows(), B.cols());
      detail::view(db).noalias() = detail::view(A).transpose() * detail::view(dc);
      g.accumulate(a, da);
      g.accumulate(b, db);
    });
  }

  // a[m x k] * b[n x k]^T, the layout of a dense layer applied to row vectors.
  Var matmul_nt(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.cols()) {
      throw DimensionError("matmul_nt: inner dimensions disagree, " + to_string(A.shape()) + " * " +
                           to_string(B.shape()) + "^T");
    }
    Tensor out(A.rows(), B.rows());
    detail::view(out).noalias() = detail::view(A) * detail::view(B).transpose();
    return push("matmul_nt", std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& dc) {
      const Tensor& A = g.value(a);
      const Tensor& B = g.value(b);
      Tensor da(A.rows(), A.cols());
      detail::view(da).noalias() = detail::view(dc) * detail::view(B);
      Tensor db(B.rows(), B.cols());
      detail::view(db).noalias() = detail::view(dc).transpose() * detail::view(A);
      g.accumulate(a, da);
      g.accumulate(b, db);
    });
  }

  Var add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    detail::view(out) += detail::view(value(b));
    return push("add", std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& d) {
      g.accumulate(a, d);
      g.accumulate(b, d);
    });
  }

  Var sub(Var a, Var b) {
    require_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    detail::view(out) -= detail::view(value(b));
    return push("sub", std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& d) {
      g.accumulate(a, d);
      Tensor neg = d;
      detail::view(neg) *= -1.0;
      g.accumulate(b, neg);
    });
  }

  Var mul(Var a, Var b) {
    require_same_shape(value(a), value(b), "mul");
    Tensor out = value(a);
    detail::view(out).array() *= detail::view(value(b)).array();
    return push("mul", std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& d) {
      Tensor da = d;
      detail::view(da).array() *= detail::view(g.value(b)).array();
      Tensor db = d;
      detail::view(db).array() *= detail::view(g.value(a)).array();
      g.accumulate(a, da);
      g.accumulate(b, db);
    });
  }

  Var scale(Var a, double factor) {
    Tensor out = value(a);
    detail::view(out) *= factor;
    return push("scale", std::move(out), {a.id}, [a, factor](Graph& g, const Tensor& d) {
      Tensor da = d;
      detail::view(da) *= factor;
      g.accumulate(a, da);
    });
  }

  // x[m x n] + b[1 x n] broadcast over rows.
  Var add_row(Var x, Var b) {
    const Tensor& X = value(x);
    const Tensor& B = value(b);
    if (B.rows() != 1 || B.cols() != X.cols()) {
      throw DimensionError("add_row: bias " + to_string(B.shape()) + " does not fit " + to_string(X.shape()));
    }
    Tensor out = X;
    detail::view(out).rowwise() += detail::view(B).row(0);
    return push("add_row", std::move(out), {x.id, b.id}, [x, b](Graph& g, const Tensor& d) {
      g.accumulate(x, d);
      Tensor db(1, d.cols());
      detail::view(db).row(0) = detail::view(d).colwise().sum();
      g.accumulate(b, db);
    });
  }

  // x[m x n] scaled row-wise by s[m x 1].
  Var mul_col(Var x, Var s) {
    const Tensor& X = value(x);
    const Tensor& S = value(s);
    if (S.cols() != 1 || S.rows() != X.rows()) {
      throw DimensionError("mul_col: scale " + to_string(S.shape()) + " does not fit " + to_string(X.shape()));
    }
    Tensor out = X;
    for (std::size_t i = 0; i < X.rows(); ++i) detail::view(out).row(Eigen::Index(i)) *= S[i];
    return push("mul_col", std::move(out), {x.id, s.id}, [x, s](Graph& g, const Tensor& d) {
      const Tensor& X = g.value(x);
      const Tensor& S = g.value(s);
      Tensor dx = d;
      Tensor ds(S.rows(), 1);
      for (std::size_t i = 0; i < X.rows(); ++i) {
        detail::view(dx).row(Eigen::Index(i)) *= S[i];
        ds[i] = detail::view(d).row(Eigen::Index(i)).dot(detail::view(X).row(Eigen::Index(i)));
      }
      g.accumulate(x, dx);
      g.accumulate(s, ds);
    });
  }

  // x[m x n] + s[1 x 1].
  Var add_scalar(Var x, Var s) {
    const Tensor& S = value(s);
    if (S.size() != 1) throw DimensionError("add_scalar: expected 1x1, got " + to_string(S.shape()));
    Tensor out = value(x);
    detail::view(out).array() += S[0];
    return push("add_scalar", std::move(out), {x.id, s.id}, [x, s](Graph& g, const Tensor& d) {
      g.accumulate(x, d);
      Tensor ds(1, 1, detail::view(d).sum());
      g.accumulate(s, ds);
    });
  }

  Var tanh(Var x) {
    Tensor out = value(x);
    for (double& v : out.values()) v = std::tanh(v);
    return push("tanh", std::move(out), {x.id}, [x, self = nodes_.size()](Graph& g, const Tensor& d) {
      const Tensor& y = g.nodes_[self].value;
      Tensor dx = d;
      detail::view(dx).array() *= 1.0 - detail::view(y).array().square();
      g.accumulate(x, dx);
    });
  }

  Var sigmoid(Var x) {
    Tensor out = value(x);
    for (double& v : out.values()) v = detail::sigmoid(v);
    return push("sigmoid", std::move(out), {x.id}, [x, self = nodes_.size()](Graph& g, const Tensor& d) {
      const Tensor& y = g.nodes_[self].value;
      Tensor dx = d;
      detail::view(dx).array() *= detail::view(y).array() * (1.0 - detail::view(y).array());
      g.accumulate(x, dx);
    });
  }

  Var exp(Var x) {
    Tensor out = value(x);
    for (double& v : out.values()) v = std::exp(v);
    return push("exp", std::move(out), {x.id}, [x, self = nodes_.size()](Graph& g, const Tensor& d) {
      Tensor dx = d;
      detail::view(dx).array() *= detail::view(g.nodes_[self].value).array();
      g.accumulate(x, dx);
    });
  }

  Var softmax_rows(Var x) {
    const Tensor& X = value(x);
    if (X.cols() == 0) throw DimensionError("softmax_rows: zero columns");
    Tensor out = X;
    auto y = detail::view(out);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      y.row(i).array() -= y.row(i).maxCoeff();
      y.row(i) = y.row(i).array().exp().matrix();
      y.row(i) /= y.row(i).sum();
    }
    return push("softmax_rows", std::move(out), {x.id}, [x, self = nodes_.size()](Graph& g, const Tensor& d) {
      const Tensor& Y = g.nodes_[self].value;
      Tensor dx(Y.rows(), Y.cols());
      auto y = detail::view(Y);
      auto dy = detail::view(d);
      auto out = detail::view(dx);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double inner = dy.row(i).dot(y.row(i));
        out.row(i) = (y.row(i).array() * (dy.row(i).array() - inner)).matrix();
      }
      g.accumulate(x, dx);
    });
  }

  Var log_softmax_rows(Var x) {
    const Tensor& X = value(x);
    if (X.cols() == 0) throw DimensionError("log_softmax_rows: zero columns");
    Tensor out = X;
    auto y = detail::view(out);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double m = y.row(i).maxCoeff();
      const double lse = m + std::log((y.row(i).array() - m).exp().sum());
      y.row(i).array() -= lse;
    }
    return push("log_softmax_rows", std::move(out), {x.id}, [x, self = nodes_.size()](Graph& g, const Tensor& d) {
      const Tensor& Y = g.nodes_[self].value;
      Tensor dx = d;
      auto y = detail::view(Y);
      auto out = detail::view(dx);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double total = out.row(i).sum();
        out.row(i).array() -= total * y.row(i).array().exp();
      }
      g.accumulate(x, dx);
    });
  }

  // out[i] = x(i, cols[i]); a negative column yields 0 and no gradient.
  Var pick(Var x, std::span<const int> cols) {
    const Tensor& X = value(x);
    if (cols.size() != X.rows()) throw DimensionError("pick: index count does not match rows");
    std::vector<int> idx(cols.begin(), cols.end());
    Tensor out(X.rows(), 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= int(X.cols())) throw DimensionError("pick: column index out of range");
      if (idx[i] >= 0) out[i] = X(i, std::size_t(idx[i]));
    }
    return push("pick", std::move(out), {x.id}, [x, idx = std::move(idx)](Graph& g, const Tensor& d) {
      const Tensor& X = g.value(x);
      Tensor dx(X.rows(), X.cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        if (idx[i] >= 0) dx(i, std::size_t(idx[i])) = d[i];
      g.accumulate(x, dx);
    });
  }

  // Rows of table[V x E] selected by ids; a negative id yields a zero row.
  Var gather_rows(Var table, std::span<const int> ids) {
    const Tensor& T = value(table);
    std::vector<int> idx(ids.begin(), ids.end());
    Tensor out(idx.size(), T.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= int(T.rows())) throw DimensionError("gather_rows: id out of range");
      if (idx[i] >= 0) detail::view(out).row(Eigen::Index(i)) = detail::view(T).row(idx[i]);
    }
    return push("gather_rows", std::move(out), {table.id}, [table, idx = std::move(idx)](Graph& g, const Tensor& d) {
      const Tensor& T = g.value(table);
      Tensor dt(T.rows(), T.cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        if (idx[i] >= 0) detail::view(dt).row(idx[i]) += detail::view(d).row(Eigen::Index(i));
      g.accumulate(table, dt);
    });
  }

  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t cols = value(parts[0]).cols();
    std::size_t rows = 0;
    for (Var p : parts) {
      if (value(p).cols() != cols) throw DimensionError("concat_rows: column counts differ");
      rows += value(p).rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    std::vector<std::size_t> inputs;
    for (Var p : parts) {
      auto v = value(p).values();
      data.insert(data.end(), v.begin(), v.end());
      inputs.push_back(p.id);
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return push("concat_rows", Tensor(rows, cols, std::move(data)), std::move(inputs),
                [ps = std::move(ps)](Graph& g, const Tensor& d) {
                  std::size_t offset = 0;
                  for (Var p : ps) {
                    const Tensor& v = g.value(p);
                    Tensor dp(v.rows(), v.cols(),
                              std::vector<double>(d.data() + offset, d.data() + offset + v.size()));
                    offset += v.size();
                    g.accumulate(p, dp);
                  }
                });
  }

  // Sums entries of x[n x 1] into nseg buckets; segment -1 is dropped.
  Var segment_sum(Var x, std::span<const int> segment, std::size_t nseg) {
    const Tensor& X = value(x);
    if (X.cols() != 1 || segment.size() != X.rows()) throw DimensionError("segment_sum: expected n x 1 with n ids");
    std::vector<int> seg(segment.begin(), segment.end());
    Tensor out(nseg, 1);
    for (std::size_t i = 0; i < seg.size(); ++i) {
      if (seg[i] >= int(nseg)) throw DimensionError("segment_sum: segment out of range");
      if (seg[i] >= 0) out[std::size_t(seg[i])] += X[i];
    }
    return push("segment_sum", std::move(out), {x.id}, [x, seg = std::move(seg)](Graph& g, const Tensor& d) {
      Tensor dx(seg.size(), 1);
      for (std::size_t i = 0; i < seg.size(); ++i)
        if (seg[i] >= 0) dx[i] = d[std::size_t(seg[i])];
      g.accumulate(x, dx);
    });
  }

  Var sum(Var x) {
    Tensor out(1, 1, detail::view(value(x)).sum());
    return push("sum", std::move(out), {x.id}, [x](Graph& g, const Tensor& d) {
      const Tensor& X = g.value(x);
      g.accumulate(x, Tensor(X.rows(), X.cols(), d[0]));
    });
  }

  // Fused output layer: row i of the result is log softmax(h W^T + b)[target_i]
  // (or the raw logit when normalize is false). Logits are recomputed in the
  // backward pass instead of being kept on the tape. Negative targets are
  // padding: they produce 0 and no gradient.
  Var output_log_prob(Var h, Var weight, Var bias, std::span<const int> targets, bool normalize = true) {
    const Tensor& H = value(h);
    const Tensor& W = value(weight);
    const Tensor& B = value(bias);
    if (W.cols() != H.cols() || B.rows() != 1 || B.cols() != W.rows() || targets.size() != H.rows()) {
      throw DimensionError("output_log_prob: h " + to_string(H.shape()) + ", W " + to_string(W.shape()) +
                           ", b " + to_string(B.shape()));
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    for (int t : tgt)
      if (t >= int(W.rows())) throw DimensionError("output_log_prob: target out of range");
    Tensor out(H.rows(), 1);
    auto logits = output_logits(H, W, B);
    for (std::size_t i = 0; i < tgt.size(); ++i) {
      if (tgt[i] < 0) continue;
      auto row = logits.row(Eigen::Index(i));
      out[i] = row(tgt[i]) - (normalize ? log_sum_exp(row) : 0.0);
    }
    return push("output_log_prob", std::move(out), {h.id, weight.id, bias.id},
                [h, weight, bias, tgt = std::move(tgt), normalize](Graph& g, const Tensor& d) {
                  const Tensor& H = g.value(h);
                  const Tensor& W = g.value(weight);
                  const Tensor& B = g.value(bias);
                  detail::RowMatrix dlogits = detail::RowMatrix::Zero(Eigen::Index(H.rows()), Eigen::Index(W.rows()));
                  if (normalize) {
                    detail::RowMatrix logits = output_logits(H, W, B);
                    for (std::size_t i = 0; i < tgt.size(); ++i) {
                      if (tgt[i] < 0 || d[i] == 0.0) continue;
                      auto row = logits.row(Eigen::Index(i));
                      const double lse = log_sum_exp(row);
                      dlogits.row(Eigen::Index(i)) = -d[i] * (row.array() - lse).exp().matrix();
                    }
                  }
                  for (std::size_t i = 0; i < tgt.size(); ++i)
                    if (tgt[i] >= 0) dlogits(Eigen::Index(i), tgt[i]) += d[i];
                  Tensor dh(H.rows(), H.cols());
                  detail::view(dh).noalias() = dlogits * detail::view(W);
                  Tensor dw(W.rows(), W.cols());
                  detail::view(dw).noalias() = dlogits.transpose() * detail::view(H);
                  Tensor db(1, B.cols());
                  detail::view(db).row(0) = dlogits.colwise().sum();
                  g.accumulate(h, dh);
                  g.accumulate(weight, dw);
                  g.accumulate(bias, db);
                });
  }

  // Sentence-level NCE loss, summed over sentences:
  //   data:  -log sigma(x - log(k Pn)),   noise: -log(1 - sigma(x - log(k Pn)))
  // where x[n x 1] holds model log-scores log P^NCE and log_noise holds log Pn.
  Var nce_loss(Var x, std::span<const double> log_noise, std::span<const std::uint8_t> is_data, double k) {
    const Tensor& X = value(x);
    if (X.cols() != 1 || log_noise.size() != X.rows() || is_data.size() != X.rows()) {
      throw DimensionError("nce_loss: expected n x 1 scores with n noise log-probs and labels");
    }
    if (!(k > 0)) throw NumericError("nce_loss: noise ratio must be positive");
    std::vector<double> shift(X.rows());
    std::vector<std::uint8_t> label(is_data.begin(), is_data.end());
    double total = 0;
    for (std::size_t i = 0; i < X.rows(); ++i) {
      shift[i] = std::log(k) + log_noise[i];
      const double delta = X[i] - shift[i];
      total += label[i] ? detail::softplus(-delta) : detail::softplus(delta);
    }
    return push("nce_loss", Tensor(1, 1, total), {x.id},
                [x, shift = std::move(shift), label = std::move(label)](Graph& g, const Tensor& d) {
                  const Tensor& X = g.value(x);
                  Tensor dx(X.rows(), 1);
                  for (std::size_t i = 0; i < X.rows(); ++i) {
                    const double delta = X[i] - shift[i];
                    dx[i] = d[0] * (label[i] ? -detail::sigmoid(-delta) : detail::sigmoid(delta));
                  }
                  g.accumulate(x, dx);
                });
  }

  // Reverse pass from a scalar node. Each node is visited at most once, in
  // reverse creation order.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw DimensionError("backward: loss must be 1x1");
    adjoints_.assign(nodes_.size(), Tensor());
    adjoints_[loss.id] = Tensor(1, 1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (adjoints_[i].size() == 0) continue;
      Node& node = nodes_[i];
      require_finite(adjoints_[i], node.op);
      if (node.backward) node.backward(*this, adjoints_[i]);
      if (node.param && node.param->has_grad()) {
        auto g = node.param->grad();
        auto a = adjoints_[i].values();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += a[j];
      }
    }
  }

 private:
  using Backward = std::function<void(Graph&, const Tensor&)>;

  struct Node {
    const char* op = "";
    Tensor value;
    std::vector<std::size_t> inputs;
    Backward backward;
    Tensor* param = nullptr;
  };

  Var push(const char* op, Tensor value, std::vector<std::size_t> inputs, Backward bw = {}) {
    require_finite(value, op);
    nodes_.push_back(Node{op, std::move(value), std::move(inputs), std::move(bw), nullptr});
    return Var{nodes_.size() - 1};
  }

  void accumulate(Var v, const Tensor& d) {
    Tensor& a = adjoints_[v.id];
    if (a.size() == 0) {
      a = d;
    } else {
      detail::view(a) += detail::view(d);
    }
  }

  static detail::RowMatrix output_logits(const Tensor& H, const Tensor& W, const Tensor& B) {
    detail::RowMatrix logits = detail::view(H) * detail::view(W).transpose();
    logits.rowwise() += detail::view(B).row(0);
    return logits;
  }

  template <typename Row>
  static double log_sum_exp(const Row& row) {
    const double m = row.maxCoeff();
    return m + std::log((row.array() - m).exp().sum());
  }

  std::deque<Node> nodes_;
  std::vector<Tensor> adjoints_;
};

}  // namespace bilm
