#pragma once

#include <optional>
#include <vector>

#include "bilm/corpus/corpus.hpp"
#include "bilm/errors.hpp"
#include "bilm/grulm/models.hpp"
#include "bilm/ngram/ngram.hpp"
#include "bilm/numeric/gradcheck.hpp"
#include "bilm/training/trainer.hpp"

namespace bilm {

struct ToyCheckOptions {
  ModelDims dims{7, 3, 4};
  std::size_t sentences = 4;  // data sentences
  std::size_t max_words = 5;
  std::size_t k = 2;          // NCE noise ratio
  double scale = 0.5;         // parameter init range
  double dropout = 0.5;       // uni only; the mask is frozen across evaluations
  std::uint64_t seed = 1;
  GradCheckOptions check{.step = 1e-5, .tolerance = 1e-4};
};

// Finite-difference check of a full training loss on a random toy instance:
// uni or bi MLE, or bi NCE against a bigram noise model fitted to the toy
// data (which includes d/dc).
inline GradCheckReport check_objective_gradients(ModelKind kind, Objective objective, const ToyCheckOptions& o = {}) {
  if (kind == ModelKind::Uni && objective == Objective::Nce) throw UsageError("NCE applies to the bi model only");
  if (o.dims.vocab <= Vocabulary::kReserved + 1) throw UsageError("toy vocabulary needs at least two regular words");
  if (objective == Objective::Nce && o.k == 0) throw UsageError("noise ratio k must be at least 1");

  Rng rng = make_rng(o.seed, "toy-data");
  std::vector<Sentence> data;
  for (std::size_t i = 0; i < o.sentences; ++i) {
    std::vector<int> t;
    const std::size_t len = 1 + uniform_index(rng, o.max_words);
    for (std::size_t j = 0; j < len; ++j)
      t.push_back(int(Vocabulary::kReserved + uniform_index(rng, o.dims.vocab - Vocabulary::kReserved)));
    t.push_back(Vocabulary::kEos);
    data.emplace_back(std::move(t));
  }
  const std::size_t chunk = o.max_words + 3;

  auto fill = [&](const std::vector<NamedTensor>& params) {
    Rng init = make_rng(o.seed, "toy-init");
    for (const auto& p : params) p.tensor->fill_uniform(init, -o.scale, o.scale);
  };

  if (kind == ModelKind::Uni) {
    UniGruLm m(o.dims, o.dropout);
    fill(m.parameters());
    const auto batches = make_chunks(data, 2, chunk, std::nullopt);
    const double tokens = double(token_count(data));
    LossFn loss = [&](bool accumulate) {
      Rng mask(derive_seed(o.seed, "toy-dropout"));
      double total = 0;
      for (const auto& cb : batches) {
        Graph g;
        ChunkForward f = forward_chunk(g, m, cb, &mask);
        Var l = g.scale(g.sum(f.sentence_log_f), -1.0 / tokens);
        if (accumulate) g.backward(l);
        total += g.value(l)[0];
      }
      return total;
    };
    return check_gradients(loss, m.parameters(), o.check);
  }

  BiGruLm m(o.dims, 0.0);
  fill(m.parameters());
  m.c[0] = -0.3;
  if (objective == Objective::Mle) {
    const auto batches = make_chunks(data, 2, chunk, std::nullopt);
    const double tokens = double(token_count(data));
    LossFn loss = [&](bool accumulate) {
      double total = 0;
      for (const auto& cb : batches) {
        Graph g;
        ChunkForward f = forward_chunk(g, m, cb);
        Var l = g.scale(g.sum(f.sentence_log_f), -1.0 / tokens);
        if (accumulate) g.backward(l);
        total += g.value(l)[0];
      }
      return total;
    };
    return check_gradients(loss, m.parameters(false), o.check);
  }

  const NGramModel noise = train_ngram(data, o.dims.vocab, 2);
  std::vector<Sentence> all = data;
  std::vector<double> log_noise;
  std::vector<std::uint8_t> is_data(data.size(), 1);
  for (const auto& s : data) log_noise.push_back(noise.score(s));
  NGramSampler sampler(noise, derive_seed(o.seed, "toy-noise"), chunk - 1);
  for (auto& n : draw_noise(sampler, data.size() * o.k)) {
    all.push_back(std::move(n.sentence));
    log_noise.push_back(n.log_prob);
    is_data.push_back(0);
  }
  const auto batches = make_chunks(all, 4, chunk, std::nullopt);
  LossFn loss = [&](bool accumulate) {
    double total = 0;
    for (const auto& cb : batches) {
      std::vector<double> ln;
      std::vector<std::uint8_t> lab;
      for (std::size_t id : cb.sentence_ids) {
        ln.push_back(log_noise[id]);
        lab.push_back(is_data[id]);
      }
      Graph g;
      ChunkForward f = forward_chunk(g, m, cb);
      Var x = g.add_scalar(f.sentence_log_f, g.parameter(m.c));
      Var l = g.scale(g.nce_loss(x, ln, lab, double(o.k)), 1.0 / double(data.size()));
      if (accumulate) g.backward(l);
      total += g.value(l)[0];
    }
    return total;
  };
  return check_gradients(loss, m.parameters(true), o.check);
}

}  // namespace bilm
