#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bilm/corpus/corpus.hpp"
#include "bilm/errors.hpp"
#include "bilm/eval/decoys.hpp"
#include "bilm/grulm/models.hpp"
#include "bilm/grulm/serialize.hpp"
#include "bilm/ngram/ngram.hpp"

namespace bilm {

// Maps sentences to their total log-scores log f'(W), without the bi
// model's normalization scalar. Must be safe to call concurrently.
using Scorer = std::function<std::vector<double>(std::span<const Sentence>)>;

template <GruModel M>
Scorer make_scorer(const M& model, std::size_t threads = 1) {
  return [&model, threads](std::span<const Sentence> s) {
    const auto scores = score_sentences(model, s, {.threads = threads});
    std::vector<double> out;
    out.reserve(scores.size());
    for (const auto& x : scores) out.push_back(x.total);
    return out;
  };
}

inline Scorer make_scorer(const AnyModel& model, std::size_t threads = 1) {
  return std::visit([threads](const auto& m) { return make_scorer(m, threads); }, model);
}

inline Scorer make_scorer(const NGramModel& model) {
  return [&model](std::span<const Sentence> s) {
    std::vector<double> out;
    out.reserve(s.size());
    for (const auto& x : s) out.push_back(model.score(x));
    return out;
  };
}

struct RescoreResult {
  std::size_t sets = 0;
  std::size_t correct_raw = 0;
  std::size_t correct_norm = 0;

  double accuracy_raw() const { return sets ? double(correct_raw) / double(sets) : 0.0; }
  double accuracy_norm() const { return sets ? double(correct_norm) / double(sets) : 0.0; }
};

// A set is correct when the original scores strictly above every decoy.
// Length-normed scores divide by the token count including </s>.
inline RescoreResult rescore(const Scorer& scorer, std::span<const DecoySet> sets) {
  if (sets.empty()) throw DataError("rescore: no decoy sets");
  std::vector<Sentence> all;
  for (const auto& set : sets) {
    if (set.decoys.empty()) throw DataError("rescore: decoy set without decoys");
    all.push_back(set.original);
    for (const auto& d : set.decoys) all.push_back(d.sentence);
  }
  const std::vector<double> scores = scorer(all);
  RescoreResult r;
  r.sets = sets.size();
  std::size_t at = 0;
  for (const auto& set : sets) {
    const double raw0 = scores[at];
    const double norm0 = raw0 / double(set.original.length());
    bool raw_ok = true, norm_ok = true;
    for (std::size_t j = 0; j < set.decoys.size(); ++j) {
      const double raw = scores[at + 1 + j];
      raw_ok = raw_ok && raw0 > raw;
      norm_ok = norm_ok && norm0 > raw / double(set.decoys[j].sentence.length());
    }
    r.correct_raw += raw_ok;
    r.correct_norm += norm_ok;
    at += 1 + set.decoys.size();
  }
  return r;
}

struct PseudoPpl {
  double log_sum = 0;      // sum of log f_i over all positions
  std::size_t tokens = 0;  // positions, </s> included
  double value() const { return std::exp(-log_sum / double(tokens)); }
};

inline PseudoPpl pseudo_ppl(const Scorer& scorer, std::span<const Sentence> text) {
  if (text.empty()) throw DataError("pseudo_ppl: empty text set");
  const std::vector<double> scores = scorer(text);
  PseudoPpl p;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw NumericError("pseudo_ppl: non-finite score for sentence " + std::to_string(i + 1));
    }
    p.log_sum += scores[i];
    p.tokens += text[i].length();
  }
  return p;
}

struct TextSets {
  std::vector<Sentence> ngram_text;
  std::vector<Sentence> uniform_text;
};

inline std::vector<Sentence> gen_ngram_text(const NGramModel& model, std::size_t count, std::uint64_t seed,
                                            std::size_t max_len = 200) {
  std::vector<Sentence> out;
  NGramSampler sampler(model, derive_seed(seed, "ngram-text"), max_len);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sampler.next_complete().sentence);
  return out;
}

// Word counts follow the training length distribution; words are i.i.d.
// uniform over the regular vocabulary.
inline std::vector<Sentence> gen_uniform_text(std::size_t vocab_size, std::span<const Sentence> train,
                                              std::size_t count, std::uint64_t seed) {
  if (train.empty()) throw DataError("gen_uniform_text: empty training corpus");
  if (vocab_size <= Vocabulary::kReserved) throw UsageError("gen_uniform_text: vocabulary has no regular words");
  std::vector<Sentence> out;
  Rng rng = make_rng(seed, "uniform-text");
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t words = train[uniform_index(rng, train.size())].length() - 1;
    std::vector<int> t;
    for (std::size_t j = 0; j < words; ++j)
      t.push_back(int(Vocabulary::kReserved + uniform_index(rng, vocab_size - Vocabulary::kReserved)));
    t.push_back(Vocabulary::kEos);
    out.emplace_back(std::move(t));
  }
  return out;
}

inline TextSets gen_text_sets(const NGramModel& model, std::span<const Sentence> train, std::size_t count,
                              std::uint64_t seed, std::size_t max_len = 200) {
  if (train.empty()) throw DataError("gen_text_sets: empty training corpus");
  if (model.vocab_size() <= Vocabulary::kReserved) throw UsageError("gen_text_sets: vocabulary has no regular words");
  return {gen_ngram_text(model, count, seed, max_len), gen_uniform_text(model.vocab_size(), train, count, seed)};
}

inline void write_sentences(const std::string& path, std::span<const Sentence> text, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& s : text) out << decode(s, vocab) << "\n";
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace bilm
