// Property-level acceptance suite. Prints one PASS/FAIL line per criterion
// and exits non-zero if any criterion fails.

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bilm/corpus/corpus.hpp"
#include "bilm/eval/decoys.hpp"
#include "bilm/eval/evaluate.hpp"
#include "bilm/grulm/models.hpp"
#include "bilm/ngram/ngram.hpp"
#include "bilm/numeric/graph.hpp"
#include "bilm/training/trainer.hpp"
#include "support/finite_diff.hpp"
#include "support/toy_corpus.hpp"

namespace bilm {
namespace {

using clock_type = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "!") + what;
  }
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. gradient fidelity

Tensor rnd(std::size_t r, std::size_t c, unsigned seed, double lo = -1, double hi = 1) {
  return testing::random_tensor(r, c, seed, lo, hi);
}

// Contracts an op's output with fixed random weights so every output entry
// contributes a distinct amount to the scalar.
Var contract(Graph& g, Var y, unsigned seed) {
  const Tensor& v = g.value(y);
  return g.sum(g.mul(y, g.constant(rnd(v.rows(), v.cols(), seed))));
}

struct OpCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Var(Graph&, const std::vector<Var>&)> op;
};

std::vector<OpCase> op_cases() {
  static const std::vector<int> pick_cols{1, 3, 0};
  static const std::vector<int> gather_ids{4, 0, 4, 2};
  static const std::vector<int> segments{0, 2, 0, 1, 2};
  static const std::vector<int> targets{1, 4, 0, 2};
  static const std::vector<double> log_noise{-2.0, -3.5, -1.2, -4.0};
  static const std::vector<std::uint8_t> labels{1, 0, 0, 1};
  std::vector<OpCase> c;
  c.push_back({"matmul", {rnd(3, 4, 1), rnd(4, 2, 2)}, [](Graph& g, auto& v) { return g.matmul(v[0], v[1]); }});
  c.push_back({"matmul_nt", {rnd(3, 4, 3), rnd(2, 4, 4)}, [](Graph& g, auto& v) { return g.matmul_nt(v[0], v[1]); }});
  c.push_back({"add", {rnd(3, 4, 5), rnd(3, 4, 6)}, [](Graph& g, auto& v) { return g.add(v[0], v[1]); }});
  c.push_back({"sub", {rnd(3, 4, 7), rnd(3, 4, 8)}, [](Graph& g, auto& v) { return g.sub(v[0], v[1]); }});
  c.push_back({"mul", {rnd(3, 4, 9), rnd(3, 4, 10)}, [](Graph& g, auto& v) { return g.mul(v[0], v[1]); }});
  c.push_back({"scale", {rnd(3, 4, 11)}, [](Graph& g, auto& v) { return g.scale(v[0], -1.7); }});
  c.push_back({"add_row", {rnd(3, 4, 12), rnd(1, 4, 13)}, [](Graph& g, auto& v) { return g.add_row(v[0], v[1]); }});
  c.push_back({"mul_col", {rnd(3, 4, 14), rnd(3, 1, 15)}, [](Graph& g, auto& v) { return g.mul_col(v[0], v[1]); }});
  c.push_back({"add_scalar", {rnd(3, 1, 16), rnd(1, 1, 17)}, [](Graph& g, auto& v) { return g.add_scalar(v[0], v[1]); }});
  c.push_back({"tanh", {rnd(3, 4, 18, -2, 2)}, [](Graph& g, auto& v) { return g.tanh(v[0]); }});
  c.push_back({"sigmoid", {rnd(3, 4, 19, -3, 3)}, [](Graph& g, auto& v) { return g.sigmoid(v[0]); }});
  c.push_back({"exp", {rnd(3, 4, 20)}, [](Graph& g, auto& v) { return g.exp(v[0]); }});
  c.push_back({"softmax_rows", {rnd(3, 5, 21, -3, 3)}, [](Graph& g, auto& v) { return g.softmax_rows(v[0]); }});
  c.push_back({"log_softmax_rows", {rnd(3, 5, 22, -3, 3)}, [](Graph& g, auto& v) { return g.log_softmax_rows(v[0]); }});
  c.push_back({"pick", {rnd(3, 4, 23)}, [](Graph& g, auto& v) { return g.pick(v[0], pick_cols); }});
  c.push_back({"gather_rows", {rnd(5, 3, 24)}, [](Graph& g, auto& v) { return g.gather_rows(v[0], gather_ids); }});
  c.push_back({"concat_rows", {rnd(2, 3, 25), rnd(1, 3, 26)}, [](Graph& g, auto& v) {
                 const std::vector<Var> parts{v[0], v[1]};
                 return g.concat_rows(parts);
               }});
  c.push_back({"segment_sum", {rnd(5, 1, 27)}, [](Graph& g, auto& v) { return g.segment_sum(v[0], segments, 3); }});
  c.push_back({"sum", {rnd(3, 4, 28)}, [](Graph& g, auto& v) { return g.sum(v[0]); }});
  c.push_back({"output_log_prob", {rnd(4, 3, 29), rnd(5, 3, 30), rnd(1, 5, 31)},
               [](Graph& g, auto& v) { return g.output_log_prob(v[0], v[1], v[2], targets, true); }});
  c.push_back({"output_log_prob(unnormalized)", {rnd(4, 3, 32), rnd(5, 3, 33), rnd(1, 5, 34)},
               [](Graph& g, auto& v) { return g.output_log_prob(v[0], v[1], v[2], targets, false); }});
  c.push_back({"nce_loss", {rnd(4, 1, 35, -4, 1)}, [](Graph& g, auto& v) { return g.nce_loss(v[0], log_noise, labels, 3.0); }});
  return c;
}

// Five-point finite differences over every entry of every model tensor;
// analytic grads come from one backward pass of the same loss.
double model_fd_error(const std::vector<NamedTensor>& params, const std::function<double(bool)>& loss,
                      std::set<std::string>* checked = nullptr) {
  for (const auto& p : params) {
    p.tensor->enable_grad();
    p.tensor->zero_grad();
  }
  loss(true);
  const double h = 1e-3;
  double worst = 0;
  for (const auto& p : params) {
    Tensor& t = *p.tensor;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      auto at = [&](double off) {
        t[i] = saved + off;
        return loss(false);
      };
      const double numeric = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
      t[i] = saved;
      worst = std::max(worst, std::abs(analytic[i] - numeric) /
                                  std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8}));
    }
    if (checked) checked->insert(p.name);
  }
  return worst;
}

std::vector<Sentence> toy_sentences(std::size_t n, std::size_t vocab, std::size_t max_words, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sentence> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> t;
    const std::size_t len = 1 + uniform_index(rng, max_words);
    for (std::size_t j = 0; j < len; ++j) t.push_back(int(Vocabulary::kReserved + uniform_index(rng, vocab - 3)));
    t.push_back(Vocabulary::kEos);
    out.emplace_back(std::move(t));
  }
  return out;
}

template <typename M>
void randomize(M& m, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& p : m.parameters()) p.tensor->fill_uniform(rng, -scale, scale);
}

Outcome criterion_gradients() {
  const auto t0 = clock_type::now();
  Outcome o;
  double op_worst = 0;
  std::string op_worst_name;
  for (auto& c : op_cases()) {
    std::vector<Tensor*> ps;
    for (auto& t : c.inputs) ps.push_back(&t);
    const double err = testing::fd_max_rel_error(ps, [&](Graph& g, const std::vector<Var>& v) {
      return contract(g, c.op(g, v), 99);
    });
    if (err >= 1e-6) o.require(false, c.name + " " + fmt("%.2e", err));
    if (err >= op_worst) {
      op_worst = err;
      op_worst_name = c.name;
    }
  }
  o.require(op_worst < 1e-6, std::to_string(op_cases().size()) + " ops max " + fmt("%.1e", op_worst) + " (" + op_worst_name + ")");

  const auto data = toy_sentences(4, 7, 4, 5);
  const auto batches = make_chunks(data, 2, 7, std::nullopt);
  const double tokens = double(token_count(data));

  UniGruLm uni({7, 3, 4}, 0.5);
  randomize(uni, 41);
  const double e_uni = model_fd_error(uni.parameters(), [&](bool acc) {
    double total = 0;
    Rng mask(123);
    for (const auto& cb : batches) {
      Graph g;
      Var l = g.scale(g.sum(forward_chunk(g, uni, cb, &mask).sentence_log_f), -1.0 / tokens);
      if (acc) g.backward(l);
      total += g.value(l)[0];
    }
    return total;
  });
  o.require(e_uni < 1e-4, "uni-mle " + fmt("%.1e", e_uni));

  BiGruLm bi({7, 3, 4}, 0.0);
  randomize(bi, 42);
  const double e_bi = model_fd_error(bi.parameters(false), [&](bool acc) {
    double total = 0;
    for (const auto& cb : batches) {
      Graph g;
      Var l = g.scale(g.sum(forward_chunk(g, bi, cb).sentence_log_f), -1.0 / tokens);
      if (acc) g.backward(l);
      total += g.value(l)[0];
    }
    return total;
  });
  o.require(e_bi < 1e-4, "bi-mle " + fmt("%.1e", e_bi));

  BiGruLm nce({7, 3, 4}, 0.0);
  randomize(nce, 43);
  nce.c[0] = -0.4;
  std::vector<Sentence> all = data;
  std::vector<std::uint8_t> is_data(data.size(), 1);
  for (const auto& s : toy_sentences(8, 7, 4, 6)) {
    all.push_back(s);
    is_data.push_back(0);
  }
  std::vector<double> log_noise;
  for (std::size_t i = 0; i < all.size(); ++i) log_noise.push_back(-1.5 - 0.45 * double(i % 7));
  const auto nce_batches = make_chunks(all, 3, 7, std::nullopt);
  std::set<std::string> checked;
  const double e_nce = model_fd_error(
      nce.parameters(true),
      [&](bool acc) {
        double total = 0;
        for (const auto& cb : nce_batches) {
          std::vector<double> ln;
          std::vector<std::uint8_t> lab;
          for (std::size_t id : cb.sentence_ids) {
            ln.push_back(log_noise[id]);
            lab.push_back(is_data[id]);
          }
          Graph g;
          Var x = g.add_scalar(forward_chunk(g, nce, cb).sentence_log_f, g.parameter(nce.c));
          Var l = g.scale(g.nce_loss(x, ln, lab, 2.0), 1.0 / double(data.size()));
          if (acc) g.backward(l);
          total += g.value(l)[0];
        }
        return total;
      },
      &checked);
  o.require(e_nce < 1e-4 && checked.count("nce.c"), "bi-nce incl. c " + fmt("%.1e", e_nce));

  const double secs = seconds_since(t0);
  o.require(secs < 60, "runtime " + fmt("%.1fs", secs));
  return o;
}

// ---------------------------------------------------------------------------
// 2. normalization

std::vector<std::vector<int>> all_sequences(const std::vector<int>& words, std::size_t n) {
  std::vector<std::vector<int>> out{{}};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::vector<int>> next;
    for (const auto& s : out)
      for (int w : words) {
        next.push_back(s);
        next.back().push_back(w);
      }
    out = std::move(next);
  }
  return out;
}

// Sum of exp(total score) over all complete sentences of 0..L words, plus
// (for the uni model) the probability of every (L+1)-word prefix.
template <typename M>
double universe_mass(const M& m, const std::vector<int>& words, std::size_t L, bool with_prefixes) {
  double mass = 0;
  for (std::size_t n = 0; n <= L; ++n)
    for (auto seq : all_sequences(words, n)) {
      seq.push_back(Vocabulary::kEos);
      mass += std::exp(score_sentence(m, Sentence(seq)).total);
    }
  if (with_prefixes)
    for (const auto& seq : all_sequences(words, L + 1)) mass += std::exp(score_sentence(m, Sentence(seq)).total);
  return mass;
}

Outcome criterion_normalization() {
  Outcome o;
  // Word-level softmax rows, on raw logits and through the bi model.
  double worst = 0;
  {
    Graph g;
    Tensor logits = rnd(50, 20, 7, -30, 30);
    const Tensor& p = g.value(g.softmax_rows(g.constant(logits)));
    for (std::size_t r = 0; r < 50; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 20; ++c) s += p(r, c);
      worst = std::max(worst, std::abs(s - 1));
    }
    BiGruLm bi({12, 4, 5});
    randomize(bi, 8, 1.0);
    for (const auto& s : toy_sentences(20, 12, 8, 9))
      for (const auto& row : position_distributions(bi, s)) {
        double sum = 0;
        for (double lp : row) sum += std::exp(lp);
        worst = std::max(worst, std::abs(sum - 1));
      }
  }
  o.require(worst <= 1e-12, "softmax rows |sum-1| " + fmt("%.1e", worst));

  // N-gram conditionals over 1,000 random contexts of every order.
  {
    const auto lines = testing::markov_text(400, 25, 3);
    const Vocabulary v = Vocabulary::build(lines, 1000);
    const NGramModel m = train_ngram(encode_all(lines, v), v.size(), 4);
    const auto corpus = encode_all(lines, v);
    Rng rng(10);
    double nworst = 0;
    for (int i = 0; i < 1000; ++i) {
      std::vector<int> ctx;
      const std::size_t len = uniform_index(rng, 4);
      if (i % 2 == 0) {
        // a history that occurs in the data
        const Sentence& s = corpus[uniform_index(rng, corpus.size())];
        ctx.push_back(Vocabulary::kBos);
        for (std::size_t j = 0; j + 1 < s.length() && ctx.size() < len; ++j) ctx.push_back(s.tokens[j]);
      } else {
        for (std::size_t j = 0; j < len; ++j) ctx.push_back(int(Vocabulary::kReserved + uniform_index(rng, v.size() - 3)));
      }
      double sum = 0;
      for (std::size_t w = 0; w < v.size(); ++w) sum += m.prob(int(w), ctx);
      nworst = std::max(nworst, std::abs(sum - 1));
    }
    o.require(nworst <= 1e-9, "n-gram 1000 contexts |sum-1| " + fmt("%.1e", nworst));
  }

  // Enumerable universe: the three output symbols other than </s>, at most
  // three words.
  const std::vector<int> words{Vocabulary::kBos, Vocabulary::kUnk, 3};
  UniGruLm uni({4, 3, 3});
  randomize(uni, 11, 1.5);
  const double umass = universe_mass(uni, words, 3, true);
  o.require(std::abs(umass - 1) <= 1e-9, "uni mass " + fmt("%.12f", umass));
  BiGruLm bi({4, 3, 3});
  bi.initialize(12);
  const double bmass = universe_mass(bi, words, 3, true);
  BiGruLm bi_rand({4, 3, 3});
  randomize(bi_rand, 12, 1.5);
  const double bmass_rand = universe_mass(bi_rand, words, 3, true);
  // The default init (+-0.05) is close to uniform, and a uniform model is
  // normalized here, so only the +-1.5 model is gated.
  o.require(std::abs(bmass_rand - 1) > 1e-3, "untrained bi mass " + fmt("%.4f", bmass_rand));
  o.detail += " (near-uniform init " + fmt("%.6f", bmass) + ")";
  return o;
}

// ---------------------------------------------------------------------------
// 3. NCE self-normalization on an enumerable universe

struct ToyUniverse {
  std::vector<Sentence> sentences;  // every sentence of 1..3 words over {a, b, c}
  std::vector<double> prob;         // data distribution
};

ToyUniverse toy_universe() {
  const double len_p[3] = {0.25, 0.45, 0.30};
  const double first[3] = {0.5, 0.3, 0.2};
  const double trans[3][3] = {{0.1, 0.6, 0.3}, {0.5, 0.1, 0.4}, {0.3, 0.3, 0.4}};
  ToyUniverse u;
  for (std::size_t n = 1; n <= 3; ++n)
    for (const auto& seq : all_sequences({0, 1, 2}, n)) {
      double p = len_p[n - 1] * first[seq[0]];
      for (std::size_t i = 1; i < n; ++i) p *= trans[seq[i - 1]][seq[i]];
      std::vector<int> t;
      for (int w : seq) t.push_back(int(Vocabulary::kReserved) + w);
      t.push_back(Vocabulary::kEos);
      u.sentences.emplace_back(std::move(t));
      u.prob.push_back(p);
    }
  return u;
}

std::vector<Sentence> draw(const ToyUniverse& u, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::discrete_distribution<std::size_t> d(u.prob.begin(), u.prob.end());
  std::vector<Sentence> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(u.sentences[d(rng)]);
  return out;
}

// Brute-force sum of P^NCE over the universe, and KL(data || P^NCE / sum).
std::pair<double, double> universe_fit(const BiGruLm& m, const ToyUniverse& u) {
  const auto scores = score_sentences(m, u.sentences);
  std::vector<double> p;
  double mass = 0;
  for (const auto& s : scores) {
    p.push_back(std::exp(s.log_p_nce));
    mass += p.back();
  }
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += u.prob[i] * std::log(u.prob[i] / (p[i] / mass));
  return {mass, kl};
}

Outcome criterion_nce_consistency() {
  const auto t0 = clock_type::now();
  Outcome o;
  const ToyUniverse u = toy_universe();
  const auto train = draw(u, 2000, 1);
  const auto valid = draw(u, 300, 2);
  const std::size_t V = Vocabulary::kReserved + 3;
  const NGramModel noise = train_ngram(train, V, 4, 0.1);
  double noise_mass = 0;
  for (const auto& s : u.sentences) noise_mass += std::exp(noise.score(s));

  BiGruLm m({V, 8, 12});
  m.initialize(3, 0.1);
  std::vector<double> kl_trace{universe_fit(m, u).second};
  TrainConfig cfg;
  cfg.objective = Objective::Nce;
  cfg.k = 25;
  cfg.batch = 16;
  cfg.chunk_len = 5;
  cfg.lr = 0.1;
  cfg.threshold = 0.0;
  cfg.max_epochs = 30;
  cfg.seed = 4;
  cfg.on_epoch = [&](const EpochRecord& r) {
    if (r.epoch % 5 == 0) kl_trace.push_back(universe_fit(m, u).second);
  };
  train_nce(m, train, valid, noise, cfg);
  const auto [mass, kl] = universe_fit(m, u);
  kl_trace.push_back(kl);

  bool decreasing = true;
  std::string trace;
  for (std::size_t i = 0; i < kl_trace.size(); ++i) {
    if (i && !(kl_trace[i] < kl_trace[i - 1])) decreasing = false;
    trace += (i ? "," : "") + fmt("%.4f", kl_trace[i]);
  }
  o.require(mass >= 0.9 && mass <= 1.1, "sum P_nce " + fmt("%.4f", mass) + " (noise mass " + fmt("%.4f", noise_mass) + ")");
  o.require(decreasing, "KL trace " + trace);
  const double secs = seconds_since(t0);
  o.require(secs < 600, "runtime " + fmt("%.1fs", secs));
  return o;
}

// ---------------------------------------------------------------------------
// 4. sampler correctness

Outcome criterion_sampler() {
  Outcome o;
  const auto lines = testing::markov_text(500, 8, 21, 10);
  const Vocabulary v = Vocabulary::build(lines, 50);
  const NGramModel m = train_ngram(encode_all(lines, v), v.size(), 3);
  const std::size_t V = v.size();

  // Tested conditionals: after <s>, and after <s> w for the likeliest w.
  const std::vector<double> p0 = m.conditional(std::vector<int>{Vocabulary::kBos});
  const int top = int(std::max_element(p0.begin(), p0.end()) - p0.begin());
  const std::vector<double> p1 = m.conditional(std::vector<int>{Vocabulary::kBos, top});

  std::vector<double> c0(V), c1(V);
  std::size_t n0 = 0, n1 = 0;
  bool exact = true;
  std::size_t checked = 0;
  NGramSampler sampler(m, 77, 200);
  while (n1 < 100000) {
    const SampledSentence s = sampler.next();
    if (n0 < 100000) {
      c0[std::size_t(s.sentence.tokens[0])] += 1;
      ++n0;
    }
    if (s.sentence.tokens[0] == top && s.sentence.tokens.size() > 1) {
      c1[std::size_t(s.sentence.tokens[1])] += 1;
      ++n1;
    }
    if (!s.truncated && checked < 5000) {
      exact = exact && s.log_prob == m.score(s.sentence);
      ++checked;
    }
  }
  auto stats = [&](const std::vector<double>& counts, const std::vector<double>& p, double n) {
    double tv = 0, chi2 = 0;
    std::size_t cells = 0;
    for (std::size_t w = 0; w < V; ++w) {
      tv += 0.5 * std::abs(counts[w] / n - p[w]);
      if (p[w] > 0) {
        const double e = n * p[w];
        chi2 += (counts[w] - e) * (counts[w] - e) / e;
        ++cells;
      }
    }
    const double pval = 1 - boost::math::cdf(boost::math::chi_squared(double(cells - 1)), chi2);
    return std::pair{tv, pval};
  };
  const auto [tv0, pv0] = stats(c0, p0, double(n0));
  const auto [tv1, pv1] = stats(c1, p1, double(n1));
  o.require(tv0 < 0.01 && tv1 < 0.01, "TV " + fmt("%.4f", tv0) + ", " + fmt("%.4f", tv1) + " at 100k");
  o.require(pv0 > 0.001 && pv1 > 0.001, "chi2 p " + fmt("%.3f", pv0) + ", " + fmt("%.3f", pv1));
  o.require(exact, std::to_string(checked) + " sample log-probs equal rescored exactly");
  return o;
}

// ---------------------------------------------------------------------------
// 5. benchmark integrity

std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Outcome criterion_benchmark() {
  Outcome o;
  const auto lines = testing::markov_text(3761, 40, 31, 25);
  const Vocabulary v = Vocabulary::build(lines, 10000);
  const auto test = encode_all(lines, v);

  std::size_t bad_edit = 0, dup = 0, decoys = 0;
  bool deterministic = true;
  std::string acc;
  bool acc_ok = true;
  for (DecoyMode mode : {DecoyMode::S, DecoyMode::D, DecoyMode::I, DecoyMode::SDI}) {
    const DecoyResult r = gen_decoys(test, v, mode, 2024);
    const DecoyResult again = gen_decoys(test, v, mode, 2024);
    deterministic = deterministic && r.sets.size() == again.sets.size();
    for (std::size_t i = 0; i < r.sets.size() && deterministic; ++i) {
      for (std::size_t j = 0; j < r.sets[i].decoys.size(); ++j)
        deterministic = deterministic && r.sets[i].decoys[j].sentence == again.sets[i].decoys[j].sentence;
    }
    for (const auto& set : r.sets) {
      std::set<std::vector<int>> seen{set.original.tokens};
      for (const auto& d : set.decoys) {
        ++decoys;
        bad_edit += levenshtein(set.original.tokens, d.sentence.tokens) != 1;
        dup += !seen.insert(d.sentence.tokens).second;
      }
    }
    Rng rng(derive_seed(5, to_string(mode)));
    Scorer random = [&rng](std::span<const Sentence> s) {
      std::vector<double> out;
      for (std::size_t i = 0; i < s.size(); ++i) out.push_back(uniform01(rng));
      return out;
    };
    const RescoreResult res = rescore(random, r.sets);
    const double a = res.accuracy_raw();
    acc += (acc.empty() ? "" : ", ") + to_string(mode) + "=" + fmt("%.3f", a) + "/" + std::to_string(res.sets);
    if (mode != DecoyMode::D) acc_ok = acc_ok && std::abs(a - 0.10) <= 0.02;
  }
  o.require(bad_edit == 0, std::to_string(decoys) + " decoys at edit distance 1");
  o.require(dup == 0, "all distinct");
  o.require(deterministic, "seed-deterministic");
  o.require(acc_ok, "uniform-random accuracy " + acc);
  return o;
}

// ---------------------------------------------------------------------------
// 6. ranking invariance under constant shifts

Outcome criterion_invariance() {
  Outcome o;
  const auto lines = testing::markov_text(400, 20, 41, 15);
  const Vocabulary v = Vocabulary::build(lines, 10000);
  const auto test = encode_all(lines, v);
  BiGruLm m({v.size(), 5, 6});
  randomize(m, 42, 0.8);

  bool report_same = true, raw_same = true, norm_same = true;
  for (DecoyMode mode : {DecoyMode::S, DecoyMode::SDI}) {
    const auto sets = gen_decoys(test, v, mode, 9).sets;
    m.c[0] = 0;
    const RescoreResult base = rescore(make_scorer(m), sets);
    for (double c : {-1000.0, -7.25, 0.3, 42.0, 1000.0}) {
      m.c[0] = c;
      const RescoreResult r = rescore(make_scorer(m), sets);
      report_same = report_same && r.correct_raw == base.correct_raw && r.correct_norm == base.correct_norm;
      // The same scores with the constant folded in, as log P^NCE.
      Scorer with_c = [&m](std::span<const Sentence> s) {
        std::vector<double> out;
        for (const auto& x : score_sentences(m, s)) out.push_back(x.log_p_nce);
        return out;
      };
      const RescoreResult shifted = rescore(with_c, sets);
      raw_same = raw_same && shifted.correct_raw == base.correct_raw;
      if (mode == DecoyMode::S) norm_same = norm_same && shifted.correct_norm == base.correct_norm;
    }
  }
  o.require(report_same, "report unchanged for c in {-1000..1000}");
  o.require(raw_same, "raw accuracy unchanged under log-score shifts (s, sdi)");
  o.require(norm_same, "length-normed accuracy unchanged under shifts at equal lengths (s)");
  return o;
}

}  // namespace
}  // namespace bilm

int main() {
  using namespace bilm;
  struct Entry {
    int id;
    const char* name;
    Outcome (*fn)();
  };
  const Entry entries[] = {
      {1, "gradient fidelity", criterion_gradients},
      {2, "normalization", criterion_normalization},
      {3, "NCE consistency on toy universe", criterion_nce_consistency},
      {4, "sampler correctness", criterion_sampler},
      {5, "benchmark integrity", criterion_benchmark},
      {6, "ranking invariance", criterion_invariance},
  };
  int failed = 0;
  for (const auto& e : entries) {
    Outcome r;
    try {
      r = e.fn();
    } catch (const std::exception& ex) {
      r.pass = false;
      r.detail = std::string("exception: ") + ex.what();
    }
    std::printf("%s  %2d  %-32s  %s\n", r.pass ? "PASS" : "FAIL", e.id, e.name, r.detail.c_str());
    std::fflush(stdout);
    failed += !r.pass;
  }
  return failed ? 1 : 0;
}
