#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bilm/corpus/corpus.hpp"
#include "bilm/errors.hpp"
#include "bilm/rng.hpp"

namespace bilm {

using WordSeq = std::vector<int>;

struct WordSeqHash {
  std::size_t operator()(const WordSeq& s) const {
    std::uint64_t h = 0x84222325cbf29ce4ULL ^ s.size();
    for (int w : s) h = mix64(h ^ std::uint64_t(std::uint32_t(w)));
    return std::size_t(h);
  }
};

template <typename V>
using WordSeqMap = std::unordered_map<WordSeq, V, WordSeqHash>;

// Explicit successors of one context plus the weight applied to the
// shorter context's distribution for every other word.
struct ContextNode {
  double backoff = 1.0;
  std::vector<std::pair<int, double>> successors;  // sorted by word id

  const double* find(int w) const {
    auto it = std::lower_bound(successors.begin(), successors.end(), w,
                               [](const auto& p, int x) { return p.first < x; });
    return it != successors.end() && it->first == w ? &it->second : nullptr;
  }
};

// Raw n-gram counts for every order and the Kneser-Ney adjusted counts:
// the highest order and n-grams beginning with <s> keep raw counts, every
// other lower-order n-gram counts its distinct left extensions.
struct NGramCounts {
  std::size_t order = 0;
  std::vector<WordSeqMap<std::uint64_t>> raw;       // raw[n-1]: n-grams
  std::vector<WordSeqMap<std::uint64_t>> adjusted;  // adjusted[n-1]

  static NGramCounts collect(std::span<const Sentence> corpus, std::size_t order) {
    NGramCounts c;
    c.order = order;
    c.raw.resize(order);
    c.adjusted.resize(order);
    WordSeq seq;
    for (const auto& s : corpus) {
      seq.assign(1, Vocabulary::kBos);
      seq.insert(seq.end(), s.tokens.begin(), s.tokens.end());
      for (std::size_t i = 1; i < seq.size(); ++i) {
        for (std::size_t n = 1; n <= order && n <= i + 1; ++n) {
          WordSeq g(seq.begin() + std::ptrdiff_t(i + 1 - n), seq.begin() + std::ptrdiff_t(i + 1));
          ++c.raw[n - 1][g];
        }
      }
    }
    for (std::size_t n = 1; n <= order; ++n) {
      auto& adj = c.adjusted[n - 1];
      if (n == order) {
        adj = c.raw[n - 1];
        continue;
      }
      for (const auto& [g, cnt] : c.raw[n - 1])
        if (g.front() == Vocabulary::kBos) adj[g] = cnt;
      for (const auto& [g, cnt] : c.raw[n]) {
        if (g[1] == Vocabulary::kBos) continue;
        ++adj[WordSeq(g.begin() + 1, g.end())];
      }
    }
    return c;
  }
};

// Backoff n-gram model over a dense vocabulary [0, V). <s> is never
// predicted. levels()[n-1] maps contexts of n-1 words to their node.
class NGramModel {
 public:
  NGramModel() = default;
  NGramModel(std::size_t order, std::size_t vocab_size) : order_(order), vocab_size_(vocab_size), levels_(order) {
    if (order == 0) throw UsageError("n-gram order must be at least 1");
  }

  std::size_t order() const { return order_; }
  std::size_t vocab_size() const { return vocab_size_; }
  const std::vector<WordSeqMap<ContextNode>>& levels() const { return levels_; }
  std::vector<WordSeqMap<ContextNode>>& levels() { return levels_; }

  const ContextNode* node(std::span<const int> context) const {
    if (context.size() >= order_) return nullptr;
    const auto& level = levels_[context.size()];
    auto it = level.find(WordSeq(context.begin(), context.end()));
    return it == level.end() ? nullptr : &it->second;
  }

  // P(w | history); only the last order-1 words of history are used.
  double prob(int w, std::span<const int> history) const {
    if (history.size() + 1 > order_) history = history.last(order_ - 1);
    const ContextNode* n = node(history);
    if (n) {
      if (const double* p = n->find(w)) return *p;
    }
    if (history.empty()) return 0.0;
    const double bow = n ? n->backoff : 1.0;
    return bow * prob(w, history.subspan(1));
  }

  // The full conditional over all V words, built by backing off from the
  // unigram level. Agrees bitwise with prob() for every word.
  std::vector<double> conditional(std::span<const int> history) const {
    if (history.size() + 1 > order_) history = history.last(order_ - 1);
    std::vector<double> dist(vocab_size_, 0.0);
    for (std::size_t len = 0; len <= history.size(); ++len) {
      const ContextNode* n = node(history.last(len));
      if (!n) continue;
      if (len > 0)
        for (double& p : dist) p = n->backoff * p;
      for (const auto& [w, p] : n->successors) dist[std::size_t(w)] = p;
    }
    return dist;
  }

  // log P(sentence[i] | <s> sentence[0..i-1]).
  double log_prob_at(const Sentence& s, std::size_t i) const {
    WordSeq hist;
    const std::size_t ctx = std::min(order_ - 1, i + 1);
    for (std::size_t j = i + 1 - ctx; j < i + 1; ++j) hist.push_back(j == 0 ? Vocabulary::kBos : s.tokens[j - 1]);
    return std::log(prob(s.tokens[i], hist));
  }

  // Natural-log sentence probability including </s>.
  double score(const Sentence& s) const {
    double total = 0;
    for (std::size_t i = 0; i < s.length(); ++i) total += log_prob_at(s, i);
    return total;
  }

 private:
  std::size_t order_ = 0;
  std::size_t vocab_size_ = 0;
  std::vector<WordSeqMap<ContextNode>> levels_;
};

// Interpolated Kneser-Ney with one absolute discount at every order. The
// unigram level interpolates with the uniform distribution over the V-1
// predictable words.
inline NGramModel train_ngram(std::span<const Sentence> corpus, std::size_t vocab_size, std::size_t order,
                              double discount = 0.75) {
  if (corpus.empty()) throw DataError("cannot train an n-gram model on an empty corpus");
  if (!(discount > 0 && discount < 1)) throw UsageError("discount must lie in (0, 1)");
  if (vocab_size < Vocabulary::kReserved) throw UsageError("vocabulary too small");
  for (const auto& s : corpus)
    for (int w : s.tokens)
      if (w < 0 || std::size_t(w) >= vocab_size) throw DataError("word id outside vocabulary");

  NGramModel model(order, vocab_size);
  const NGramCounts counts = NGramCounts::collect(corpus, order);

  for (std::size_t n = 1; n <= order; ++n) {
    struct Stat {
      double total = 0;
      double types = 0;
    };
    WordSeqMap<Stat> stats;
    for (const auto& [g, c] : counts.adjusted[n - 1]) {
      Stat& st = stats[WordSeq(g.begin(), g.end() - 1)];
      st.total += double(c);
      st.types += 1;
    }
    auto& level = model.levels()[n - 1];
    for (const auto& [ctx, st] : stats) level[ctx].backoff = discount * st.types / st.total;
    if (n == 1) {
      ContextNode& root = level[WordSeq{}];
      const double uniform = 1.0 / double(vocab_size - 1);
      for (std::size_t w = 0; w < vocab_size; ++w) {
        if (int(w) == Vocabulary::kBos) continue;
        auto it = counts.adjusted[0].find(WordSeq{int(w)});
        const double c = it == counts.adjusted[0].end() ? 0.0 : double(it->second);
        const Stat& st = stats[WordSeq{}];
        root.successors.emplace_back(int(w), std::max(c - discount, 0.0) / st.total + root.backoff * uniform);
      }
      continue;
    }
    std::vector<std::pair<WordSeq, double>> entries;
    for (const auto& [g, c] : counts.adjusted[n - 1]) {
      WordSeq ctx(g.begin(), g.end() - 1);
      const Stat& st = stats[ctx];
      const double lower = model.prob(g.back(), std::span<const int>(ctx).subspan(1));
      entries.emplace_back(g, (double(c) - discount) / st.total + level[ctx].backoff * lower);
    }
    for (auto& [g, p] : entries) level[WordSeq(g.begin(), g.end() - 1)].successors.emplace_back(g.back(), p);
    for (auto& [ctx, node] : level) std::sort(node.successors.begin(), node.successors.end());
  }
  return model;
}

struct SampledSentence {
  Sentence sentence;
  double log_prob = 0;     // natural log under the sampling model
  bool truncated = false;  // max_len reached without </s>
  std::uint64_t seed = 0;  // reproduces this sample exactly
};

// Ancestral sampling: each word is drawn by inverse CDF from the full
// materialized conditional.
inline SampledSentence sample_sentence(const NGramModel& model, std::uint64_t seed, std::size_t max_len) {
  Rng rng(seed);
  SampledSentence out;
  out.seed = seed;
  out.sentence.tokens.clear();
  WordSeq history{Vocabulary::kBos};
  while (out.sentence.tokens.size() < max_len) {
    const std::vector<double> dist = model.conditional(history);
    double total = 0;
    for (double p : dist) total += p;
    const double u = uniform01(rng) * total;
    double acc = 0;
    std::size_t w = 0;
    std::size_t last_positive = 0;
    for (; w < dist.size(); ++w) {
      if (dist[w] <= 0) continue;
      last_positive = w;
      acc += dist[w];
      if (u < acc) break;
    }
    if (w == dist.size()) w = last_positive;
    out.sentence.tokens.push_back(int(w));
    out.log_prob += std::log(dist[w]);
    if (int(w) == Vocabulary::kEos) return out;
    history.push_back(int(w));
    if (history.size() + 1 > model.order()) history.erase(history.begin());
  }
  out.truncated = true;
  return out;
}

// Deterministic stream of samples; sample i uses seed mix64(root + i) so any
// element can be regenerated alone.
class NGramSampler {
 public:
  NGramSampler(const NGramModel& model, std::uint64_t root_seed, std::size_t max_len = 200)
      : model_(&model), root_(root_seed), max_len_(max_len) {}

  SampledSentence next() { return sample_sentence(*model_, mix64(root_ + counter_++), max_len_); }

  // Skips truncated samples.
  SampledSentence next_complete() {
    for (;;) {
      SampledSentence s = next();
      if (!s.truncated) return s;
    }
  }

 private:
  const NGramModel* model_;
  std::uint64_t root_;
  std::size_t max_len_;
  std::uint64_t counter_ = 0;
};

}  // namespace bilm
