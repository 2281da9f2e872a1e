#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <filesystem>
#include <fstream>
#include <map>

#include "bilm/ngram/arpa.hpp"
#include "bilm/ngram/ngram.hpp"
#include "support/toy_corpus.hpp"

namespace bilm {
namespace {

namespace fs = std::filesystem;

struct Toy {
  Vocabulary vocab;
  std::vector<Sentence> train;
  std::vector<Sentence> test;
};

Toy make_toy(std::size_t nwords, std::size_t nsent = 400, std::uint64_t seed = 7) {
  Toy t;
  auto lines = testing::markov_text(nsent, nwords, seed);
  t.vocab = Vocabulary::build(lines, 1000);
  auto sents = encode_all(lines, t.vocab);
  t.test.assign(sents.begin() + std::ptrdiff_t(nsent * 9 / 10), sents.end());
  sents.resize(nsent * 9 / 10);
  t.train = std::move(sents);
  return t;
}

double brute_force_sum(const NGramModel& m, const WordSeq& history) {
  double total = 0;
  for (std::size_t w = 0; w < m.vocab_size(); ++w) total += m.prob(int(w), history);
  return total;
}

std::string temp_path(const std::string& name) { return (fs::temp_directory_path() / name).string(); }

TEST(KneserNey, HandComputedBigram) {
  // Corpus "a b" twice, vocab {<s>, </s>, <unk>, a, b}, d = 0.75.
  // Continuation counts: a=1 (after <s>), b=1 (after a), </s>=1 (after b).
  // P1(b) = (1-.75)/3 + .75*3/3 * 1/4 = 0.2708333...
  // P(b|a) = (2-.75)/2 + .75*1/2 * P1(b) = 0.7265625
  Vocabulary v;
  const int a = v.add("a"), b = v.add("b");
  std::vector<Sentence> corpus{encode("a b", v), encode("a b", v)};
  NGramModel m = train_ngram(corpus, v.size(), 2, 0.75);
  const WordSeq ctx{a};
  EXPECT_NEAR(m.prob(b, ctx), 0.7265625, 1e-15);
  EXPECT_GT(m.prob(b, ctx), 0.5);
  EXPECT_NEAR(m.prob(b, WordSeq{}), 0.25 / 3 + 0.1875, 1e-15);
  EXPECT_NEAR(brute_force_sum(m, ctx), 1.0, 1e-12);
  EXPECT_EQ(m.prob(Vocabulary::kBos, ctx), 0.0);
}

TEST(KneserNey, UnigramLevelIsNormalized) {
  Toy t = make_toy(20);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 3);
  EXPECT_NEAR(brute_force_sum(m, WordSeq{}), 1.0, 1e-9);
}

TEST(KneserNey, UnseenContextBacksOffCompletely) {
  Toy t = make_toy(20);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 3);
  const int unk = Vocabulary::kUnk;  // never occurs in the toy text
  for (std::size_t w = 1; w < t.vocab.size(); ++w) {
    const WordSeq unseen{unk, unk};
    const WordSeq shorter{unk};
    EXPECT_EQ(m.prob(int(w), unseen), m.prob(int(w), shorter));
    EXPECT_EQ(m.prob(int(w), shorter), m.prob(int(w), WordSeq{}));
  }
}

TEST(KneserNey, ConditionalsSumToOneOverRandomContexts) {
  Toy t = make_toy(25, 600);
  for (std::size_t order : {2u, 3u, 4u}) {
    NGramModel m = train_ngram(t.train, t.vocab.size(), order);
    Rng rng(order);
    for (int trial = 0; trial < 1000; ++trial) {
      WordSeq ctx;
      const std::size_t len = uniform_index(rng, order);
      for (std::size_t i = 0; i < len; ++i) {
        // Mix observed contexts (taken from training text) with random ones.
        ctx.push_back(int(uniform_index(rng, t.vocab.size())));
      }
      if (trial % 2 == 0 && len > 0) {
        const Sentence& s = t.train[uniform_index(rng, t.train.size())];
        ctx.assign(1, Vocabulary::kBos);
        ctx.insert(ctx.end(), s.tokens.begin(), s.tokens.end() - 1);
        if (ctx.size() > len) ctx.erase(ctx.begin(), ctx.end() - std::ptrdiff_t(len));
      }
      const double total = brute_force_sum(m, ctx);
      ASSERT_NEAR(total, 1.0, 1e-9) << "order " << order;
    }
  }
}

TEST(KneserNey, StoredValuesAreProbabilitiesAndBackoffsPositive) {
  Toy t = make_toy(25);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 4);
  for (const auto& level : m.levels()) {
    for (const auto& [ctx, node] : level) {
      EXPECT_GT(node.backoff, 0.0);
      for (const auto& [w, p] : node.successors) {
        EXPECT_GT(p, 0.0);
        EXPECT_LE(p, 1.0);
      }
    }
  }
}

TEST(KneserNey, RejectsBadArguments) {
  Vocabulary v;
  std::vector<Sentence> empty;
  EXPECT_THROW(train_ngram(empty, v.size(), 2), DataError);
  std::vector<Sentence> one{Sentence()};
  EXPECT_THROW(train_ngram(one, v.size(), 2, 1.0), UsageError);
  EXPECT_THROW(train_ngram(one, v.size(), 2, 0.0), UsageError);
}

TEST(KneserNey, AddingASentenceNeverLowersItsCounts) {
  Toy t = make_toy(15, 200);
  NGramCounts before = NGramCounts::collect(t.train, 3);
  auto more = t.train;
  more.push_back(t.test[0]);
  NGramCounts after = NGramCounts::collect(more, 3);
  WordSeq seq{Vocabulary::kBos};
  seq.insert(seq.end(), t.test[0].tokens.begin(), t.test[0].tokens.end());
  for (std::size_t n = 1; n <= 3; ++n) {
    for (std::size_t i = 1; i + 1 >= n && i < seq.size(); ++i) {
      WordSeq g(seq.begin() + std::ptrdiff_t(i + 1 - n), seq.begin() + std::ptrdiff_t(i + 1));
      auto lookup = [&](const NGramCounts& c) {
        auto it = c.adjusted[n - 1].find(g);
        return it == c.adjusted[n - 1].end() ? 0u : it->second;
      };
      EXPECT_GE(lookup(after), lookup(before));
      EXPECT_GT(after.raw[n - 1].at(g), before.raw[n - 1].count(g) ? before.raw[n - 1].at(g) : 0u);
    }
  }
}

TEST(Score, SentenceEndOnly) {
  Toy t = make_toy(10);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 3);
  Sentence end_only;
  EXPECT_EQ(m.score(end_only), std::log(m.prob(Vocabulary::kEos, WordSeq{Vocabulary::kBos})));
}

TEST(Score, IsTheSumOfPerPositionScores) {
  Toy t = make_toy(20);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 4);
  for (const auto& s : t.test) {
    double total = 0;
    for (std::size_t i = 0; i < s.length(); ++i) total += m.log_prob_at(s, i);
    EXPECT_EQ(m.score(s), total);
  }
}

TEST(Score, UsesTheTruncatedPaddedHistory) {
  Vocabulary v;
  const int a = v.add("a"), b = v.add("b"), c = v.add("c");
  std::vector<Sentence> corpus{encode("a b c", v), encode("b c a", v), encode("c a b", v)};
  NGramModel m = train_ngram(corpus, v.size(), 3);
  Sentence s({a, b, c, Vocabulary::kEos});
  const double expected = std::log(m.prob(a, WordSeq{Vocabulary::kBos})) +
                          std::log(m.prob(b, WordSeq{Vocabulary::kBos, a})) + std::log(m.prob(c, WordSeq{a, b})) +
                          std::log(m.prob(Vocabulary::kEos, WordSeq{b, c}));
  EXPECT_DOUBLE_EQ(m.score(s), expected);
}

TEST(Score, HigherOrderBeatsUnigramOnHeldOutText) {
  Toy t = make_toy(30, 2000);
  auto ppl = [&](const NGramModel& m) {
    double lp = 0;
    for (const auto& s : t.test) lp += m.score(s);
    return std::exp(-lp / double(token_count(t.test)));
  };
  const double four = ppl(train_ngram(t.train, t.vocab.size(), 4));
  const double one = ppl(train_ngram(t.train, t.vocab.size(), 1));
  EXPECT_TRUE(std::isfinite(four));
  EXPECT_LT(four, one);
}

NGramModel deterministic_model(Vocabulary& v) {
  const int a = v.add("a");
  NGramModel m(2, v.size());
  auto& uni = m.levels()[0][WordSeq{}];
  uni.successors = {{Vocabulary::kEos, 0.5}, {a, 0.5}};
  // Explicit mass is 1 in both contexts, so nothing is left to back off.
  m.levels()[1][WordSeq{Vocabulary::kBos}] = ContextNode{0.0, {{a, 1.0}}};
  m.levels()[1][WordSeq{a}] = ContextNode{0.0, {{Vocabulary::kEos, 1.0}}};
  return m;
}

TEST(Sampling, DeterministicModelAlwaysSamplesTheSameSentence) {
  Vocabulary v;
  NGramModel m = deterministic_model(v);
  NGramSampler sampler(m, 3);
  for (int i = 0; i < 100; ++i) {
    SampledSentence s = sampler.next();
    EXPECT_EQ(decode(s.sentence, v), "a");
    EXPECT_EQ(s.log_prob, 0.0);
    EXPECT_FALSE(s.truncated);
  }
}

TEST(Sampling, FixedSeedReproducesTheSequence) {
  Toy t = make_toy(10);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 3);
  NGramSampler a(m, 42), b(m, 42), c(m, 43);
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    SampledSentence x = a.next(), y = b.next(), z = c.next();
    EXPECT_EQ(x.sentence, y.sentence);
    EXPECT_EQ(x.log_prob, y.log_prob);
    differs |= x.sentence != z.sentence;
    // Each sample can be regenerated from its own seed.
    EXPECT_EQ(sample_sentence(m, x.seed, 200).sentence, x.sentence);
  }
  EXPECT_TRUE(differs);
}

TEST(Sampling, LogProbEqualsRecomputedScoreExactly) {
  Toy t = make_toy(20);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 4);
  NGramSampler sampler(m, 5);
  for (int i = 0; i < 500; ++i) {
    SampledSentence s = sampler.next_complete();
    EXPECT_EQ(s.log_prob, m.score(s.sentence));
  }
}

TEST(Sampling, TruncationIsFlagged) {
  Toy t = make_toy(10);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 2);
  std::size_t truncated = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SampledSentence s = sample_sentence(m, seed, 2);
    EXPECT_LE(s.sentence.length(), 2u);
    if (s.truncated) {
      ++truncated;
      EXPECT_NE(s.sentence.tokens.back(), Vocabulary::kEos);
    }
  }
  EXPECT_GT(truncated, 0u);
}

TEST(Sampling, FirstTokenFrequenciesPassChiSquare) {
  Toy t = make_toy(7);  // 3 reserved + 7 words
  ASSERT_EQ(t.vocab.size(), 10u);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 3);
  const WordSeq start{Vocabulary::kBos};
  std::vector<double> expected(10);
  for (int w = 0; w < 10; ++w) expected[std::size_t(w)] = m.prob(w, start);
  constexpr std::size_t n = 100000;
  std::vector<double> observed(10, 0);
  NGramSampler sampler(m, 11);
  for (std::size_t i = 0; i < n; ++i) ++observed[std::size_t(sampler.next().sentence.tokens[0])];
  double chi2 = 0, tv = 0;
  int cells = 0;
  for (std::size_t w = 0; w < 10; ++w) {
    tv += 0.5 * std::abs(observed[w] / n - expected[w]);
    if (expected[w] == 0) {
      EXPECT_EQ(observed[w], 0);
      continue;
    }
    const double e = expected[w] * n;
    chi2 += (observed[w] - e) * (observed[w] - e) / e;
    ++cells;
  }
  boost::math::chi_squared dist(cells - 1);
  const double p = 1 - boost::math::cdf(dist, chi2);
  EXPECT_GT(p, 0.001) << "chi2=" << chi2;
  EXPECT_LT(tv, 0.01);
}

TEST(Arpa, RoundTripPreservesScores) {
  Toy t = make_toy(25, 600);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 4);
  const std::string path = temp_path("bilm_roundtrip.arpa");
  export_arpa(m, t.vocab, path);
  ArpaModel back = import_arpa(path);
  EXPECT_EQ(back.vocab, t.vocab);
  NGramSampler sampler(m, 3);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const Sentence s = i < 50 ? t.test[std::size_t(i) % t.test.size()] : sampler.next_complete().sentence;
    worst = std::max(worst, std::abs(m.score(s) - back.model.score(s)) / std::log(10.0));
  }
  EXPECT_LT(worst, 1e-6);
  fs::remove(path);
}

TEST(Arpa, DeclaredCountsMatchSectionLengths) {
  Toy t = make_toy(15);
  NGramModel m = train_ngram(t.train, t.vocab.size(), 3);
  const std::string path = temp_path("bilm_counts.arpa");
  export_arpa(m, t.vocab, path);
  std::ifstream in(path);
  std::string line;
  std::map<int, std::size_t> declared, actual;
  int section = 0;
  while (std::getline(in, line)) {
    if (line.rfind("ngram ", 0) == 0) {
      declared[std::stoi(line.substr(6))] = std::stoul(line.substr(line.find('=') + 1));
    } else if (line.size() > 1 && line[0] == '\\' && std::isdigit(line[1])) {
      section = line[1] - '0';
    } else if (section && !line.empty() && line[0] != '\\') {
      ++actual[section];
      EXPECT_NE(line.find('\t'), std::string::npos);
    }
  }
  EXPECT_EQ(declared, actual);
  EXPECT_EQ(declared.size(), 3u);
  fs::remove(path);
}

TEST(Arpa, HandWrittenUnigramFile) {
  const std::string path = temp_path("bilm_unigram.arpa");
  {
    std::ofstream out(path);
    out << "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.3010299957\thello\n-0.3010299957\t</s>\n\n\\end\\\n";
  }
  ArpaModel am = import_arpa(path);
  ASSERT_TRUE(am.vocab.find("hello"));
  Sentence s = encode("hello hello", am.vocab);
  EXPECT_NEAR(am.model.score(s), 3 * std::log(0.5), 1e-9);
  fs::remove(path);
}

void expect_format_error(const std::string& body, const std::string& needle) {
  const std::string path = temp_path("bilm_bad.arpa");
  {
    std::ofstream out(path);
    out << body;
  }
  try {
    import_arpa(path);
    ADD_FAILURE() << "expected FormatError for: " << needle;
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
  fs::remove(path);
}

TEST(Arpa, MalformedFilesAreRejected) {
  expect_format_error("ngram 1=1\n", "missing \\data\\");
  expect_format_error("\\data\\\nngram 1=1\n\n\\2-grams:\n-1\ta\n\\end\\\n", "expected \\1-grams:");
  expect_format_error("\\data\\\nngram 1=2\n\n\\1-grams:\n-1\ta\n\n\\end\\\n", "declares 2");
  expect_format_error("\\data\\\nngram 1=1\n\n\\1-grams:\nabc\ta\n\n\\end\\\n", "non-numeric");
  expect_format_error("\\data\\\nngram 1=1\n\n\\1-grams:\n-1\ta\n", "missing \\end\\");
}

TEST(PtbData, FourGramBeatsUnigram) {
  const char* dir = testing::ptb_dir();
  if (!dir) GTEST_SKIP() << "BILM_PTB_DIR not set";
  const std::string d(dir);
  auto train_lines = read_lines(d + "/ptb.train.txt");
  Vocabulary v = Vocabulary::build(train_lines, 10000);
  auto train = encode_all(train_lines, v);
  auto test_lines = read_lines(d + "/ptb.test.txt");
  auto test = encode_all(test_lines, v);
  auto ppl = [&](const NGramModel& m) {
    double lp = 0;
    for (const auto& s : test) lp += m.score(s);
    return std::exp(-lp / double(token_count(test)));
  };
  const double four = ppl(train_ngram(train, v.size(), 4));
  const double one = ppl(train_ngram(train, v.size(), 1));
  EXPECT_TRUE(std::isfinite(four));
  EXPECT_LT(four, one);
}

}  // namespace
}  // namespace bilm
