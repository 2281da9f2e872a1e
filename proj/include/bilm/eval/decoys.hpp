#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bilm/corpus/corpus.hpp"
#include "bilm/errors.hpp"
#include "bilm/rng.hpp"

namespace bilm {

enum class EditType : char { Sub = 's', Del = 'd', Ins = 'i' };

// Which edits a benchmark uses: one type, or each decoy's type drawn
// uniformly from the three.
enum class DecoyMode { S, D, I, SDI };

inline DecoyMode parse_decoy_mode(const std::string& s) {
  if (s == "s") return DecoyMode::S;
  if (s == "d") return DecoyMode::D;
  if (s == "i") return DecoyMode::I;
  if (s == "sdi") return DecoyMode::SDI;
  throw UsageError("unknown decoy type '" + s + "' (expected s, d, i or sdi)");
}

inline std::string to_string(DecoyMode m) {
  switch (m) {
    case DecoyMode::S: return "s";
    case DecoyMode::D: return "d";
    case DecoyMode::I: return "i";
    case DecoyMode::SDI: return "sdi";
  }
  return "?";
}

struct Decoy {
  EditType type;
  Sentence sentence;
};

struct DecoySet {
  Sentence original;
  std::vector<Decoy> decoys;
  std::uint64_t seed = 0;  // regenerates this set alone
  std::size_t line = 0;    // 1-based line of the original in the source
};

struct DecoyOptions {
  std::size_t per_sentence = 9;
  std::size_t max_attempts = 100;  // draws per decoy before giving up
};

struct DecoyResult {
  std::vector<DecoySet> sets;
  std::vector<std::string> notices;  // one per skipped sentence
};

namespace detail {

inline std::size_t word_count(const Sentence& s) { return s.length() - 1; }

// Number of distinct sentences one edit of type t can produce.
inline std::size_t distinct_edits(const Sentence& s, EditType t, std::size_t vocab_words) {
  const std::size_t n = word_count(s);
  std::size_t regular = 0;
  for (std::size_t j = 0; j < n; ++j) regular += Vocabulary::is_reserved(s.tokens[j]) ? 0 : 1;
  switch (t) {
    case EditType::Sub:
      return n * vocab_words - regular;
    case EditType::Del: {
      if (n < 2) return 0;
      std::size_t runs = 0;
      for (std::size_t j = 0; j < n; ++j) runs += j == 0 || s.tokens[j] != s.tokens[j - 1];
      return runs;
    }
    case EditType::Ins:
      // Inserting w next to an existing w gives the same sentence from two gaps.
      return (n + 1) * vocab_words - regular;
  }
  return 0;
}

inline Sentence apply_edit(const Sentence& s, EditType t, Rng& rng, std::size_t vocab_size) {
  const std::size_t n = word_count(s);
  const std::size_t words = vocab_size - Vocabulary::kReserved;
  Sentence out = s;
  switch (t) {
    case EditType::Sub: {
      const std::size_t pos = uniform_index(rng, n);
      const int old = s.tokens[pos];
      int w;
      do {
        w = int(Vocabulary::kReserved + uniform_index(rng, words));
      } while (w == old);
      out.tokens[pos] = w;
      break;
    }
    case EditType::Del:
      out.tokens.erase(out.tokens.begin() + std::ptrdiff_t(uniform_index(rng, n)));
      break;
    case EditType::Ins: {
      const std::size_t gap = uniform_index(rng, n + 1);
      const int w = int(Vocabulary::kReserved + uniform_index(rng, words));
      out.tokens.insert(out.tokens.begin() + std::ptrdiff_t(gap), w);
      break;
    }
  }
  return out;
}

}  // namespace detail

// Builds one decoy set per eligible sentence. A sentence is skipped, with a
// notice, when the requested edit types cannot give per_sentence distinct
// decoys. Each set's seed depends only on the root seed and its line.
inline DecoyResult gen_decoys(std::span<const Sentence> corpus, const Vocabulary& vocab, DecoyMode mode,
                              std::uint64_t seed, const DecoyOptions& opts = {}) {
  if (vocab.size() <= Vocabulary::kReserved + 1) throw UsageError("vocabulary needs at least two regular words");
  const std::size_t vocab_words = vocab.size() - Vocabulary::kReserved;
  const std::uint64_t root = derive_seed(seed, "decoys");
  DecoyResult result;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Sentence& s = corpus[i];
    if (s.tokens.empty() || s.tokens.back() != Vocabulary::kEos) {
      throw DataError("sentence at line " + std::to_string(i + 1) + " does not end with </s>");
    }
    std::vector<EditType> types;
    switch (mode) {
      case DecoyMode::S: types = {EditType::Sub}; break;
      case DecoyMode::D: types = {EditType::Del}; break;
      case DecoyMode::I: types = {EditType::Ins}; break;
      case DecoyMode::SDI: types = {EditType::Sub, EditType::Del, EditType::Ins}; break;
    }
    std::size_t capacity = 0;
    std::vector<EditType> feasible;
    for (EditType t : types) {
      const std::size_t c = detail::distinct_edits(s, t, vocab_words);
      if (c > 0) feasible.push_back(t);
      capacity += c;
    }
    if (capacity < opts.per_sentence) {
      result.notices.push_back("line " + std::to_string(i + 1) + ": skipped, " + std::to_string(detail::word_count(s)) +
                               "-word sentence allows only " + std::to_string(capacity) + " distinct " +
                               to_string(mode) + " decoys");
      continue;
    }

    DecoySet set;
    set.original = s;
    set.line = i + 1;
    set.seed = mix64(root + i);
    Rng rng(set.seed);
    std::set<std::vector<int>> seen{s.tokens};
    while (set.decoys.size() < opts.per_sentence) {
      bool placed = false;
      for (std::size_t attempt = 0; attempt < opts.max_attempts && !placed; ++attempt) {
        const EditType t = feasible[uniform_index(rng, feasible.size())];
        Sentence d = detail::apply_edit(s, t, rng, vocab.size());
        if (seen.insert(d.tokens).second) {
          set.decoys.push_back({t, std::move(d)});
          placed = true;
        }
      }
      if (!placed) {
        throw DataError("line " + std::to_string(i + 1) + ": no new distinct decoy after " +
                        std::to_string(opts.max_attempts) + " draws");
      }
    }
    result.sets.push_back(std::move(set));
  }
  return result;
}

inline constexpr int kDecoyFormatVersion = 1;

struct DecoyFile {
  int version = kDecoyFormatVersion;
  std::uint64_t seed = 0;
  std::string mode;
  std::vector<DecoySet> sets;
};

// Header line, then one block per set separated by blank lines:
//   O<tab>original, then <type><tab>decoy for each decoy.
inline void write_decoys(const std::string& path, std::span<const DecoySet> sets, const Vocabulary& vocab,
                         DecoyMode mode, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "#bilm-decoys\tversion=" << kDecoyFormatVersion << "\tseed=" << seed << "\ttype=" << to_string(mode) << "\n";
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (i) out << "\n";
    out << "O\t" << decode(sets[i].original, vocab) << "\n";
    for (const auto& d : sets[i].decoys) out << char(d.type) << '\t' << decode(d.sentence, vocab) << "\n";
  }
  if (!out) throw DataError("write failed for " + path);
}

inline DecoyFile read_decoys(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  DecoyFile file;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) { throw FormatError(path + ":" + std::to_string(lineno) + ": " + msg); };
  if (!std::getline(in, line)) fail("empty decoy file");
  ++lineno;
  if (!line.starts_with("#bilm-decoys\t")) fail("missing #bilm-decoys header");
  for (const auto& field : tokenize(line.substr(13))) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) fail("malformed header field '" + field + "'");
    const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    try {
      if (key == "version") file.version = std::stoi(val);
      if (key == "seed") file.seed = std::stoull(val);
    } catch (const std::exception&) {
      fail("malformed header field '" + field + "'");
    }
    if (key == "type") file.mode = val;
  }
  if (file.version != kDecoyFormatVersion) fail("unsupported decoy format version " + std::to_string(file.version));

  std::optional<DecoySet> cur;
  auto flush = [&] {
    if (!cur) return;
    if (cur->decoys.empty()) fail("set without decoys");
    file.sets.push_back(std::move(*cur));
    cur.reset();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    const auto tab = line.find('\t');
    if (tab != 1) fail("expected '<tag><tab>text'");
    const char tag = line[0];
    const Sentence s = encode(line.substr(2), vocab);
    if (tag == 'O') {
      flush();
      cur = DecoySet{};
      cur->original = s;
      cur->line = file.sets.size() + 1;
    } else if (tag == 's' || tag == 'd' || tag == 'i') {
      if (!cur) fail("decoy before its original");
      cur->decoys.push_back({EditType(tag), s});
    } else {
      fail(std::string("unknown tag '") + tag + "'");
    }
  }
  flush();
  return file;
}

}  // namespace bilm
