#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bilm/errors.hpp"

namespace bilm {

// Splits on ASCII whitespace.
inline std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(std::move(tok));
  return out;
}

// Dense word <-> id map. Ids 0..2 are the reserved <s>, </s>, <unk>; every
// other word occupies exactly one id in [3, size()).
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr std::size_t kReserved = 3;

  Vocabulary() {
    for (const char* w : {"<s>", "</s>", "<unk>"}) push(w);
  }

  static bool is_reserved(int id) { return id >= 0 && id < int(kReserved); }

  std::size_t size() const { return words_.size(); }

  // Adds a word if absent and returns its id. Reserved spellings map to
  // their reserved ids.
  int add(std::string_view word) {
    if (auto id = find(word)) return *id;
    return push(std::string(word));
  }

  std::optional<int> find(std::string_view word) const {
    auto it = ids_.find(std::string(word));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  int id(std::string_view word) const { return find(word).value_or(kUnk); }

  const std::string& word(int id) const {
    if (id < 0 || std::size_t(id) >= words_.size()) {
      throw DataError("word id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
    }
    return words_[std::size_t(id)];
  }

  // Most frequent words up to max_size entries in total (reserved tokens
  // included), ties broken by first occurrence. Words seen fewer than
  // min_count times are left out and encode to <unk>.
  static Vocabulary build(std::span<const std::string> lines, std::size_t max_size, std::size_t min_count = 1) {
    struct Stat {
      std::size_t count = 0;
      std::size_t first = 0;
    };
    std::unordered_map<std::string, Stat> stats;
    std::vector<std::string> order;
    std::size_t total = 0;
    Vocabulary reserved;
    for (const auto& line : lines) {
      for (auto& tok : tokenize(line)) {
        ++total;
        if (reserved.find(tok)) continue;
        auto [it, inserted] = stats.try_emplace(tok, Stat{0, order.size()});
        if (inserted) order.push_back(tok);
        ++it->second.count;
      }
    }
    if (total == 0) throw DataError("cannot build a vocabulary from an empty corpus");
    std::vector<const std::string*> ranked;
    for (const auto& w : order)
      if (stats[w].count >= min_count) ranked.push_back(&w);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](const std::string* a, const std::string* b) { return stats[*a].count > stats[*b].count; });
    Vocabulary v;
    const std::size_t room = max_size > kReserved ? max_size - kReserved : 0;
    for (std::size_t i = 0; i < ranked.size() && i < room; ++i) v.push(*ranked[i]);
    return v;
  }

  // One non-reserved word per line, in id order.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary " + path);
    for (std::size_t i = kReserved; i < words_.size(); ++i) out << words_[i] << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read vocabulary " + path);
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto toks = tokenize(line);
      if (toks.empty()) continue;
      if (toks.size() != 1) throw FormatError(path + ":" + std::to_string(lineno) + ": expected one word per line");
      if (v.find(toks[0])) throw FormatError(path + ":" + std::to_string(lineno) + ": duplicate word " + toks[0]);
      v.push(toks[0]);
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  int push(std::string word) {
    const int id = int(words_.size());
    ids_.emplace(word, id);
    words_.push_back(std::move(word));
    return id;
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace bilm
