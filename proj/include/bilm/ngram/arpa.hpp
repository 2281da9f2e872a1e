#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "bilm/corpus/vocabulary.hpp"
#include "bilm/ngram/ngram.hpp"

namespace bilm {

namespace detail {

inline constexpr double kArpaLogZero = -99.0;

inline std::string arpa_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

inline double parse_arpa_number(const std::string& tok, const std::string& where) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw FormatError(where + ": non-numeric field '" + tok + "'");
  }
  return v;
}

}  // namespace detail

// Writes the standard ARPA layout: \data\ counts, then one \n-grams:
// section per order with "log10 prob <tab> words [<tab> log10 backoff]".
inline void export_arpa(const NGramModel& model, const Vocabulary& vocab, const std::string& path) {
  if (vocab.size() != model.vocab_size()) throw UsageError("export_arpa: vocabulary does not match model");
  struct Line {
    WordSeq words;
    double log10_prob;
    std::optional<double> log10_bow;
  };
  std::vector<std::vector<Line>> sections(model.order());
  for (std::size_t n = 1; n <= model.order(); ++n) {
    for (const auto& [ctx, node] : model.levels()[n - 1]) {
      for (const auto& [w, p] : node.successors) {
        WordSeq g = ctx;
        g.push_back(w);
        sections[n - 1].push_back({std::move(g), std::log10(p), std::nullopt});
      }
    }
  }
  // <s> is a unigram that is never predicted but may carry a backoff weight.
  sections[0].push_back({WordSeq{Vocabulary::kBos}, detail::kArpaLogZero, std::nullopt});
  for (std::size_t n = 1; n < model.order(); ++n) {
    auto& sec = sections[n - 1];
    std::sort(sec.begin(), sec.end(), [](const Line& a, const Line& b) { return a.words < b.words; });
    for (const auto& [ctx, node] : model.levels()[n]) {
      auto it = std::lower_bound(sec.begin(), sec.end(), ctx, [](const Line& l, const WordSeq& k) { return l.words < k; });
      if (it == sec.end() || it->words != ctx) {
        const double p = model.prob(ctx.back(), std::span<const int>(ctx).first(ctx.size() - 1));
        it = sec.insert(it, Line{ctx, p > 0 ? std::log10(p) : detail::kArpaLogZero, std::nullopt});
      }
      it->log10_bow = std::log10(node.backoff);
    }
  }
  std::sort(sections.back().begin(), sections.back().end(),
            [](const Line& a, const Line& b) { return a.words < b.words; });

  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "\\data\\\n";
  for (std::size_t n = 1; n <= model.order(); ++n) out << "ngram " << n << "=" << sections[n - 1].size() << "\n";
  for (std::size_t n = 1; n <= model.order(); ++n) {
    out << "\n\\" << n << "-grams:\n";
    for (const auto& l : sections[n - 1]) {
      out << detail::arpa_number(l.log10_prob) << '\t';
      for (std::size_t i = 0; i < l.words.size(); ++i) out << (i ? " " : "") << vocab.word(l.words[i]);
      if (l.log10_bow) out << '\t' << detail::arpa_number(*l.log10_bow);
      out << '\n';
    }
  }
  out << "\n\\end\\\n";
  if (!out) throw DataError("write failed for " + path);
}

struct ArpaModel {
  Vocabulary vocab;
  NGramModel model;
};

// Reads an ARPA file. With a vocabulary given, every word must already be
// in it; otherwise the vocabulary is built from the unigram section in file
// order after the reserved tokens.
inline ArpaModel import_arpa(const std::string& path, const std::optional<Vocabulary>& known = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  std::size_t lineno = 0;
  auto where = [&] { return path + ":" + std::to_string(lineno); };
  auto next_content = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  };

  // Anything before \data\ is ignored, as other toolkits do.
  bool found = false;
  while (next_content())
    if (line == "\\data\\") {
      found = true;
      break;
    }
  if (!found) throw FormatError(path + ": missing \\data\\ header");

  static const std::regex count_re(R"(ngram\s+(\d+)\s*=\s*(\d+))");
  static const std::regex section_re(R"(\\(\d+)-grams:)");
  std::vector<std::size_t> counts;
  std::smatch m;
  while (next_content() && std::regex_match(line, m, count_re)) {
    if (std::stoul(m[1]) != counts.size() + 1) throw FormatError(where() + ": ngram counts out of order");
    counts.push_back(std::stoul(m[2]));
  }
  if (counts.empty()) throw FormatError(where() + ": no ngram counts in \\data\\ section");

  struct Entry {
    std::vector<std::string> words;
    double log10_prob;
    std::optional<double> log10_bow;
  };
  std::vector<std::vector<Entry>> sections(counts.size());
  bool more = true;  // `line` holds an unconsumed line
  for (std::size_t n = 1; n <= counts.size(); ++n) {
    if (!more) throw FormatError(path + ": unexpected end of file before \\" + std::to_string(n) + "-grams:");
    if (!std::regex_match(line, m, section_re) || std::stoul(m[1]) != n) {
      throw FormatError(where() + ": expected \\" + std::to_string(n) + "-grams: header, got '" + line + "'");
    }
    while ((more = next_content()) && line[0] != '\\') {
      auto toks = tokenize(line);
      if (toks.size() != n + 1 && toks.size() != n + 2) {
        throw FormatError(where() + ": expected " + std::to_string(n) + " words");
      }
      Entry e;
      e.log10_prob = detail::parse_arpa_number(toks[0], where());
      e.words.assign(toks.begin() + 1, toks.begin() + 1 + std::ptrdiff_t(n));
      if (toks.size() == n + 2) e.log10_bow = detail::parse_arpa_number(toks.back(), where());
      sections[n - 1].push_back(std::move(e));
    }
    if (sections[n - 1].size() != counts[n - 1]) {
      throw FormatError(path + ": \\data\\ declares " + std::to_string(counts[n - 1]) + " " + std::to_string(n) +
                        "-grams but the section has " + std::to_string(sections[n - 1].size()));
    }
  }
  if (!more || line != "\\end\\") throw FormatError(path + ": missing \\end\\");

  ArpaModel out;
  if (known) {
    out.vocab = *known;
  } else {
    for (const auto& e : sections[0]) out.vocab.add(e.words[0]);
  }
  auto id_of = [&](const std::string& w) {
    auto id = out.vocab.find(w);
    if (!id) throw FormatError(path + ": word '" + w + "' is not in the vocabulary");
    return *id;
  };
  out.model = NGramModel(counts.size(), out.vocab.size());
  auto& levels = out.model.levels();
  for (std::size_t n = 1; n <= counts.size(); ++n) {
    for (const auto& e : sections[n - 1]) {
      WordSeq g;
      for (const auto& w : e.words) g.push_back(id_of(w));
      if (g.back() != Vocabulary::kBos && e.log10_prob > detail::kArpaLogZero) {
        levels[n - 1][WordSeq(g.begin(), g.end() - 1)].successors.emplace_back(g.back(), std::pow(10.0, e.log10_prob));
      }
      if (e.log10_bow) {
        if (n == counts.size()) throw FormatError(path + ": backoff weight on a highest-order n-gram");
        levels[n][g].backoff = std::pow(10.0, *e.log10_bow);
      }
    }
  }
  for (auto& level : levels)
    for (auto& [ctx, node] : level) std::sort(node.successors.begin(), node.successors.end());
  return out;
}

}  // namespace bilm
