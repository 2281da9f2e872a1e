#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bilm/corpus/vocabulary.hpp"
#include "bilm/errors.hpp"
#include "bilm/rng.hpp"

namespace bilm {

// Token ids of one sentence without <s> and with the trailing </s>, so
// length() is the number of predicted positions.
struct Sentence {
  std::vector<int> tokens{Vocabulary::kEos};

  Sentence() = default;
  explicit Sentence(std::vector<int> t) : tokens(std::move(t)) {}

  std::size_t length() const { return tokens.size(); }
  std::size_t words() const { return tokens.size() - 1; }
  friend bool operator==(const Sentence&, const Sentence&) = default;
  friend auto operator<=>(const Sentence&, const Sentence&) = default;
};

// Words to ids, appends </s>. Unknown words become <unk>.
inline Sentence encode(std::string_view line, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& tok : tokenize(line)) ids.push_back(vocab.id(tok));
  ids.push_back(Vocabulary::kEos);
  return Sentence(std::move(ids));
}

// Sentence back to space-separated words, without </s>.
inline std::string decode(const Sentence& s, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i + 1 < s.tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.word(s.tokens[i]);
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

inline std::vector<Sentence> encode_all(std::span<const std::string> lines, const Vocabulary& vocab) {
  std::vector<Sentence> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(encode(l, vocab));
  return out;
}

inline std::size_t token_count(std::span<const Sentence> sentences) {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.length();
  return n;
}

// One batch of B parallel streams, each a chunk of C positions. Arrays are
// indexed [stream * C + position]. Whole sentences are packed from the front
// of a chunk; the tail is padding.
struct ChunkBatch {
  std::size_t batch = 0;
  std::size_t chunk_len = 0;
  std::vector<int> tokens;            // padding holds -1
  std::vector<double> mask;           // 1 on real positions, 0 on padding
  std::vector<int> sentence;          // local sentence index, -1 on padding
  std::vector<std::uint8_t> starts;   // first position of a sentence
  std::vector<std::uint8_t> ends;     // the </s> position of a sentence
  std::vector<std::size_t> sentence_ids;  // local index -> index in the input list

  std::size_t index(std::size_t stream, std::size_t pos) const { return stream * chunk_len + pos; }
  std::size_t sentence_count() const { return sentence_ids.size(); }
  std::size_t real_positions() const {
    return std::size_t(std::count(mask.begin(), mask.end(), 1.0));
  }
};

// Deals sentences round-robin into `batch` streams (after a seeded shuffle
// when a seed is given) and packs each stream first-fit into chunks of
// chunk_len positions. Batch j holds chunk j of every stream. Every sentence
// must satisfy length()+1 <= chunk_len.
inline std::vector<ChunkBatch> make_chunks(std::span<const Sentence> sentences, std::size_t batch,
                                           std::size_t chunk_len, std::optional<std::uint64_t> shuffle_seed) {
  if (batch == 0 || chunk_len == 0) throw UsageError("make_chunks: batch and chunk length must be positive");
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (sentences[i].length() + 1 > chunk_len) {
      throw DataError("sentence at line " + std::to_string(i + 1) + " has " +
                      std::to_string(sentences[i].length()) + " tokens, too long for chunk length " +
                      std::to_string(chunk_len));
    }
  }
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }

  // streams[s][c] lists the sentences of chunk c in stream s.
  std::vector<std::vector<std::vector<std::size_t>>> streams(batch);
  std::vector<std::vector<std::size_t>> used(batch);
  for (std::size_t j = 0; j < order.size(); ++j) {
    const std::size_t s = j % batch;
    const std::size_t len = sentences[order[j]].length();
    std::size_t c = 0;
    while (c < used[s].size() && used[s][c] + len > chunk_len) ++c;
    if (c == used[s].size()) {
      used[s].push_back(0);
      streams[s].emplace_back();
    }
    used[s][c] += len;
    streams[s][c].push_back(order[j]);
  }

  std::size_t nbatches = 0;
  for (const auto& st : streams) nbatches = std::max(nbatches, st.size());
  std::vector<ChunkBatch> out(nbatches);
  for (std::size_t b = 0; b < nbatches; ++b) {
    ChunkBatch& cb = out[b];
    cb.batch = batch;
    cb.chunk_len = chunk_len;
    const std::size_t n = batch * chunk_len;
    cb.tokens.assign(n, -1);
    cb.mask.assign(n, 0.0);
    cb.sentence.assign(n, -1);
    cb.starts.assign(n, 0);
    cb.ends.assign(n, 0);
    for (std::size_t s = 0; s < batch; ++s) {
      if (b >= streams[s].size()) continue;
      std::size_t pos = 0;
      for (std::size_t sid : streams[s][b]) {
        const int local = int(cb.sentence_ids.size());
        cb.sentence_ids.push_back(sid);
        const auto& toks = sentences[sid].tokens;
        for (std::size_t t = 0; t < toks.size(); ++t, ++pos) {
          const std::size_t k = cb.index(s, pos);
          cb.tokens[k] = toks[t];
          cb.mask[k] = 1.0;
          cb.sentence[k] = local;
          cb.starts[k] = t == 0;
          cb.ends[k] = t + 1 == toks.size();
        }
      }
    }
  }
  return out;
}

}  // namespace bilm
