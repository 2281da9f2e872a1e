#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

#include "bilm/corpus/corpus.hpp"
#include "bilm/errors.hpp"
#include "bilm/grulm/gru.hpp"
#include "bilm/rng.hpp"

namespace bilm {

enum class ModelKind : std::uint32_t { Uni = 1, Bi = 2 };

inline const char* to_string(ModelKind k) { return k == ModelKind::Uni ? "uni" : "bi"; }

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t embed = 0;
  std::size_t hidden = 0;
};

namespace detail {

inline void check_dims(const ModelDims& d, double dropout) {
  if (d.vocab < 2 || d.embed == 0 || d.hidden == 0) throw UsageError("model dimensions must be positive (V >= 2)");
  if (!(dropout >= 0 && dropout < 1)) throw UsageError("dropout rate must lie in [0, 1)");
}

// Biases and the normalization scalar start at zero, weights uniform.
inline void init_params(const std::vector<NamedTensor>& params, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (const auto& p : params) {
    std::string_view leaf(p.name);
    leaf = leaf.substr(leaf.rfind('.') + 1);
    if (leaf.starts_with("b_") || leaf == "c") {
      p.tensor->fill(0.0);
    } else {
      p.tensor->fill_uniform(rng, -scale, scale);
    }
  }
}

}  // namespace detail

// One-layer left-to-right GRU language model. The embedding is stored as
// V x E so that a word's vector is a row lookup.
class UniGruLm {
 public:
  static constexpr ModelKind kind = ModelKind::Uni;

  Tensor embedding;
  GruCellParams cell;
  Tensor w_ho;  // V x H
  Tensor b_o;   // 1 x V
  double dropout = 0.0;

  UniGruLm() = default;
  UniGruLm(ModelDims d, double dropout_rate = 0.5)
      : embedding(d.vocab, d.embed), cell(d.hidden, d.embed), w_ho(d.vocab, d.hidden), b_o(1, d.vocab),
        dropout(dropout_rate) {
    detail::check_dims(d, dropout_rate);
  }

  ModelDims dims() const { return {embedding.rows(), embedding.cols(), cell.hidden()}; }

  std::vector<NamedTensor> parameters() const {
    std::vector<NamedTensor> out{{"embedding", const_cast<Tensor*>(&embedding)}};
    GruCellParams::collect(cell, "gru.", out);
    out.push_back({"out.w_ho", const_cast<Tensor*>(&w_ho)});
    out.push_back({"out.b_o", const_cast<Tensor*>(&b_o)});
    return out;
  }

  void initialize(std::uint64_t seed, double scale = 0.05) { detail::init_params(parameters(), seed, scale); }
};

// Bi-directional GRU model: position i sees a forward state over w_1..w_{i-1}
// and a backward state over w_{i+1}..w_l, never w_i itself.
class BiGruLm {
 public:
  static constexpr ModelKind kind = ModelKind::Bi;

  Tensor embedding;
  GruCellParams fwd;
  GruCellParams bwd;
  Tensor w_hf;  // H x H
  Tensor w_hr;  // H x H
  Tensor b_1;   // 1 x H
  Tensor w_ho;  // V x H
  Tensor b_o;   // 1 x V
  Tensor c;     // 1 x 1 sentence-level normalization scalar
  double dropout = 0.0;
  bool normalize = true;  // softmax over the vocabulary at each position

  BiGruLm() = default;
  BiGruLm(ModelDims d, double dropout_rate = 0.0, bool normalize_words = true)
      : embedding(d.vocab, d.embed), fwd(d.hidden, d.embed), bwd(d.hidden, d.embed), w_hf(d.hidden, d.hidden),
        w_hr(d.hidden, d.hidden), b_1(1, d.hidden), w_ho(d.vocab, d.hidden), b_o(1, d.vocab), c(1, 1),
        dropout(dropout_rate), normalize(normalize_words) {
    detail::check_dims(d, dropout_rate);
  }

  ModelDims dims() const { return {embedding.rows(), embedding.cols(), fwd.hidden()}; }
  double norm_scalar() const { return c[0]; }

  std::vector<NamedTensor> parameters(bool include_c = true) const {
    std::vector<NamedTensor> out{{"embedding", const_cast<Tensor*>(&embedding)}};
    GruCellParams::collect(fwd, "fwd.", out);
    GruCellParams::collect(bwd, "bwd.", out);
    out.push_back({"comb.w_hf", const_cast<Tensor*>(&w_hf)});
    out.push_back({"comb.w_hr", const_cast<Tensor*>(&w_hr)});
    out.push_back({"comb.b_1", const_cast<Tensor*>(&b_1)});
    out.push_back({"out.w_ho", const_cast<Tensor*>(&w_ho)});
    out.push_back({"out.b_o", const_cast<Tensor*>(&b_o)});
    if (include_c) out.push_back({"nce.c", const_cast<Tensor*>(&c)});
    return out;
  }

  void initialize(std::uint64_t seed, double scale = 0.05) { detail::init_params(parameters(), seed, scale); }
};

template <typename M>
concept GruModel = std::is_same_v<std::remove_const_t<M>, UniGruLm> || std::is_same_v<std::remove_const_t<M>, BiGruLm>;

struct SentenceScore {
  std::vector<double> log_f;  // one entry per position, </s> included
  double total = 0;           // sum of log_f
  double log_p_nce = 0;       // total + c (equal to total for the uni model)
};

// Graph outputs for one chunk batch. Rows of position_log_f are ordered
// position-major: row p * batch + s.
struct ChunkForward {
  Var position_log_f;
  Var sentence_log_f;       // sentence_count x 1
  std::vector<int> row_sentence;  // local sentence of each row, -1 on padding
};

namespace detail {

// Column of 0/1 flags, one per stream, for position p.
inline Tensor keep_column(const ChunkBatch& cb, std::size_t p, bool (*keep)(const ChunkBatch&, std::size_t)) {
  Tensor t(cb.batch, 1);
  for (std::size_t s = 0; s < cb.batch; ++s) t[s] = keep(cb, cb.index(s, p)) ? 1.0 : 0.0;
  return t;
}

inline Var apply_dropout(Graph& g, Var h, double rate, Rng* rng) {
  if (!rng || rate <= 0) return h;
  const Tensor& v = g.value(h);
  Tensor mask(v.rows(), v.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = uniform01(*rng) < rate ? 0.0 : keep;
  return g.mul(h, g.constant(std::move(mask)));
}

inline std::vector<int> position_column(const ChunkBatch& cb, std::size_t p, bool targets) {
  std::vector<int> out(cb.batch);
  for (std::size_t s = 0; s < cb.batch; ++s) {
    const std::size_t k = cb.index(s, p);
    out[s] = targets && cb.sentence[k] < 0 ? -1 : cb.tokens[k];
  }
  return out;
}

inline ChunkForward finish_chunk(Graph& g, const ChunkBatch& cb, std::vector<Var>& rows, Var w_ho, Var b_o,
                                 bool normalize) {
  ChunkForward out;
  std::vector<int> targets;
  targets.reserve(cb.batch * cb.chunk_len);
  out.row_sentence.reserve(cb.batch * cb.chunk_len);
  for (std::size_t p = 0; p < cb.chunk_len; ++p) {
    auto t = position_column(cb, p, true);
    targets.insert(targets.end(), t.begin(), t.end());
    for (std::size_t s = 0; s < cb.batch; ++s) out.row_sentence.push_back(cb.sentence[cb.index(s, p)]);
  }
  Var h = g.concat_rows(rows);
  out.position_log_f = g.output_log_prob(h, w_ho, b_o, targets, normalize);
  out.sentence_log_f = g.segment_sum(out.position_log_f, out.row_sentence, cb.sentence_count());
  return out;
}

inline void require_tokens(const ChunkBatch& cb, std::size_t vocab) {
  for (std::size_t k = 0; k < cb.tokens.size(); ++k) {
    if (cb.sentence[k] >= 0 && (cb.tokens[k] < 0 || std::size_t(cb.tokens[k]) >= vocab)) {
      throw DataError("token id " + std::to_string(cb.tokens[k]) + " outside model vocabulary of " +
                      std::to_string(vocab));
    }
  }
}

}  // namespace detail

// Forward pass of the uni model over a chunk batch. A mutable model binds
// its tensors as trainable parameters, a const model as constants. Dropout
// is applied only when an rng is given.
template <GruModel M>
  requires(std::remove_const_t<M>::kind == ModelKind::Uni)
ChunkForward forward_chunk(Graph& g, M& m, const ChunkBatch& cb, Rng* dropout_rng = nullptr) {
  detail::require_tokens(cb, m.dims().vocab);
  Var emb = bind(g, m.embedding);
  GruCellVars cell = GruCellVars::bind_to(g, m.cell);
  Var w_ho = bind(g, m.w_ho);
  Var b_o = bind(g, m.b_o);

  std::vector<Var> rows;
  rows.reserve(cb.chunk_len);
  Var h = g.constant(Tensor(cb.batch, m.dims().hidden));
  for (std::size_t p = 0; p < cb.chunk_len; ++p) {
    Var h_in = p == 0 ? h
                      : g.mul_col(h, g.constant(detail::keep_column(cb, p, [](const ChunkBatch& b, std::size_t k) {
                          return b.sentence[k] >= 0 && !b.starts[k];
                        })));
    rows.push_back(detail::apply_dropout(g, h_in, m.dropout, dropout_rng));
    if (p + 1 < cb.chunk_len) h = gru_step(g, cell, h_in, g.gather_rows(emb, detail::position_column(cb, p, false)));
  }
  return detail::finish_chunk(g, cb, rows, w_ho, b_o, true);
}

template <GruModel M>
  requires(std::remove_const_t<M>::kind == ModelKind::Bi)
ChunkForward forward_chunk(Graph& g, M& m, const ChunkBatch& cb, Rng* dropout_rng = nullptr) {
  detail::require_tokens(cb, m.dims().vocab);
  const std::size_t C = cb.chunk_len;
  const std::size_t H = m.dims().hidden;
  Var emb = bind(g, m.embedding);
  GruCellVars fc = GruCellVars::bind_to(g, m.fwd);
  GruCellVars bc = GruCellVars::bind_to(g, m.bwd);
  Var w_hf = bind(g, m.w_hf);
  Var w_hr = bind(g, m.w_hr);
  Var b_1 = bind(g, m.b_1);
  Var w_ho = bind(g, m.w_ho);
  Var b_o = bind(g, m.b_o);

  std::vector<Var> v(C);
  for (std::size_t p = 0; p < C; ++p) v[p] = g.gather_rows(emb, detail::position_column(cb, p, false));

  // f_in[p]: forward state entering position p; b_in[p]: backward state.
  std::vector<Var> f_in(C), b_in(C);
  f_in[0] = g.constant(Tensor(cb.batch, H));
  for (std::size_t p = 1; p < C; ++p) {
    Var h = gru_step(g, fc, f_in[p - 1], v[p - 1]);
    f_in[p] = g.mul_col(h, g.constant(detail::keep_column(cb, p, [](const ChunkBatch& b, std::size_t k) {
                          return b.sentence[k] >= 0 && !b.starts[k];
                        })));
  }
  b_in[C - 1] = g.constant(Tensor(cb.batch, H));
  for (std::size_t p = C - 1; p-- > 0;) {
    Var h = gru_step(g, bc, b_in[p + 1], v[p + 1]);
    b_in[p] = g.mul_col(h, g.constant(detail::keep_column(cb, p, [](const ChunkBatch& b, std::size_t k) {
                          return b.sentence[k] >= 0 && !b.ends[k];
                        })));
  }

  std::vector<Var> rows(C);
  for (std::size_t p = 0; p < C; ++p) {
    Var h1 = g.tanh(g.add_row(g.add(g.matmul_nt(f_in[p], w_hf), g.matmul_nt(b_in[p], w_hr)), b_1));
    rows[p] = detail::apply_dropout(g, h1, m.dropout, dropout_rng);
  }
  return detail::finish_chunk(g, cb, rows, w_ho, b_o, m.normalize);
}

inline double norm_scalar(const UniGruLm&) { return 0.0; }
inline double norm_scalar(const BiGruLm& m) { return m.c[0]; }

// Per-sentence scores of one chunk batch, in local sentence order.
template <GruModel M>
std::vector<SentenceScore> score_batch(const M& model, const ChunkBatch& cb) {
  Graph g;
  ChunkForward f = forward_chunk(g, model, cb);
  const Tensor& lf = g.value(f.position_log_f);
  std::vector<SentenceScore> out(cb.sentence_count());
  for (std::size_t r = 0; r < f.row_sentence.size(); ++r)
    if (f.row_sentence[r] >= 0) out[std::size_t(f.row_sentence[r])].log_f.push_back(lf[r]);
  const double c = norm_scalar(model);
  for (auto& s : out) {
    for (double x : s.log_f) s.total += x;
    s.log_p_nce = s.total + c;
  }
  return out;
}

struct ScoreOptions {
  std::size_t batch = 64;
  std::size_t chunk_len = 0;  // 0: longest sentence + 1
  std::size_t threads = 1;
};

// Scores every sentence; result i belongs to sentences[i].
template <GruModel M>
std::vector<SentenceScore> score_sentences(const M& model, std::span<const Sentence> sentences,
                                           const ScoreOptions& opts = {}) {
  std::size_t chunk_len = opts.chunk_len;
  if (chunk_len == 0) {
    for (const auto& s : sentences) chunk_len = std::max(chunk_len, s.length() + 1);
  }
  for (std::size_t i = 0; i < sentences.size(); ++i)
    if (sentences[i].tokens.empty()) throw DataError("sentence " + std::to_string(i + 1) + " is empty");
  std::vector<SentenceScore> out(sentences.size());
  if (sentences.empty()) return out;
  const std::vector<ChunkBatch> batches = make_chunks(sentences, std::max<std::size_t>(opts.batch, 1), chunk_len,
                                                      std::nullopt);
  auto work = [&](std::size_t first, std::size_t step) {
    for (std::size_t b = first; b < batches.size(); b += step) {
      auto scores = score_batch(model, batches[b]);
      for (std::size_t i = 0; i < scores.size(); ++i) out[batches[b].sentence_ids[i]] = std::move(scores[i]);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(opts.threads, 1, batches.size());
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return out;
}

template <GruModel M>
SentenceScore score_sentence(const M& model, const Sentence& s) {
  return score_sentences(model, std::span<const Sentence>(&s, 1), {.batch = 1})[0];
}

inline SentenceScore uni_forward(const UniGruLm& m, const Sentence& s) { return score_sentence(m, s); }
inline SentenceScore bi_forward(const BiGruLm& m, const Sentence& s) { return score_sentence(m, s); }

// Log-probability vector over the vocabulary at every position of one
// sentence, for inspection and tests. Row i is the distribution used to
// score position i.
template <GruModel M>
std::vector<std::vector<double>> position_distributions(const M& model, const Sentence& s) {
  const std::size_t V = model.dims().vocab;
  std::vector<std::vector<double>> out(s.length(), std::vector<double>(V));
  for (std::size_t w = 0; w < V; ++w) {
    for (std::size_t i = 0; i < s.length(); ++i) {
      Sentence t = s;
      t.tokens[i] = int(w);
      out[i][w] = score_sentence(model, t).log_f[i];
    }
  }
  return out;
}

}  // namespace bilm
