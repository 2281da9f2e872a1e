#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bilm/corpus/corpus.hpp"
#include "bilm/errors.hpp"
#include "bilm/grulm/models.hpp"
#include "bilm/grulm/serialize.hpp"
#include "bilm/ngram/ngram.hpp"
#include "bilm/training/schedule.hpp"
#include "bilm/training/sgd.hpp"

namespace bilm {

enum class Objective { Mle, Nce };

inline const char* to_string(Objective o) { return o == Objective::Mle ? "mle" : "nce"; }

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double train_objective = 0;
  double valid_objective = 0;
  double wall_seconds = 0;
};

struct TrainConfig {
  Objective objective = Objective::Mle;
  std::size_t k = 10;           // noise samples per data sentence
  std::size_t batch = 64;       // streams per chunk batch; data sentences per NCE update
  std::size_t chunk_len = 90;
  double lr = 0;                // 0: 1.0 for MLE, 0.1 for NCE
  double decay = 0.6;
  double l2 = 1e-5;
  double threshold = 0.01;      // relative validation improvement
  std::size_t max_epochs = 20;
  std::uint64_t seed = 1;
  double clip = 5.0;
  std::size_t threads = 1;      // validation scoring
  std::string history_path;     // tab-separated per-epoch records
  std::string checkpoint_path;  // best model so far
  std::function<void(const EpochRecord&)> on_epoch;

  double initial_lr() const {
    if (lr > 0) return lr;
    return objective == Objective::Mle ? 1.0 : 0.1;
  }

  void validate() const {
    if (objective == Objective::Nce && k == 0) throw UsageError("noise ratio k must be at least 1");
    if (batch == 0 || chunk_len < 2) throw UsageError("batch must be positive and chunk length at least 2");
    if (lr < 0 || l2 < 0 || clip < 0 || threshold < 0) throw UsageError("lr, l2, clip and threshold must be non-negative");
    if (!(decay > 0 && decay < 1)) throw UsageError("decay must lie in (0, 1)");
    if (max_epochs == 0) throw UsageError("max_epochs must be positive");
  }
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double initial_valid = 0;
  double best_valid = 0;
  std::size_t best_epoch = 0;  // 0: the initial parameters were never beaten
  bool stopped_early = false;
};

struct NoiseSample {
  Sentence sentence;
  double log_prob = 0;  // natural log under the noise model
};

// Noise sentences that fit in a chunk of chunk_len positions; longer draws
// are discarded and redrawn.
inline std::vector<NoiseSample> draw_noise(NGramSampler& sampler, std::size_t n) {
  std::vector<NoiseSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SampledSentence s = sampler.next_complete();
    out.push_back({std::move(s.sentence), s.log_prob});
  }
  return out;
}

// Per-instance NCE loss, -log P(D=1|W) for data and -log P(D=0|W) for noise,
// with P(D=1|W) = P / (P + k Pn).
inline double nce_instance_loss(double log_p_nce, double log_noise, double k, bool is_data) {
  const double delta = log_p_nce - std::log(k) - log_noise;
  const double x = is_data ? -delta : delta;
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// d(loss)/d(log P) of one instance; equal to d(loss)/dc.
inline double nce_instance_grad(double log_p_nce, double log_noise, double k, bool is_data) {
  const double delta = log_p_nce - std::log(k) - log_noise;
  return is_data ? -detail::sigmoid(-delta) : detail::sigmoid(delta);
}

// Mean NCE loss per data sentence; data_log_noise[i] is log Pn(data[i]).
inline double nce_objective(const BiGruLm& model, std::span<const Sentence> data,
                            std::span<const double> data_log_noise, std::span<const NoiseSample> noise, double k,
                            std::size_t threads = 1) {
  if (data.empty()) throw DataError("NCE objective needs at least one data sentence");
  if (data_log_noise.size() != data.size()) throw UsageError("one noise log-probability per data sentence required");
  std::vector<Sentence> all(data.begin(), data.end());
  for (const auto& n : noise) all.push_back(n.sentence);
  const auto scores = score_sentences(model, all, {.threads = threads});
  double total = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const bool is_data = i < data.size();
    const double ln = is_data ? data_log_noise[i] : noise[i - data.size()].log_prob;
    total += nce_instance_loss(scores[i].log_p_nce, ln, k, is_data);
  }
  return total / double(data.size());
}

// Per-token negative log-likelihood.
template <GruModel M>
double mle_objective(const M& model, std::span<const Sentence> sentences, std::size_t threads = 1) {
  const auto scores = score_sentences(model, sentences, {.threads = threads});
  double total = 0;
  for (const auto& s : scores) total -= s.total;
  return total / double(token_count(sentences));
}

namespace detail {

struct Snapshot {
  std::vector<std::vector<double>> values;

  static Snapshot take(const std::vector<NamedTensor>& params) {
    Snapshot s;
    for (const auto& p : params) s.values.emplace_back(p.tensor->values().begin(), p.tensor->values().end());
    return s;
  }

  void restore(const std::vector<NamedTensor>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i)
      std::copy(values[i].begin(), values[i].end(), params[i].tensor->values().begin());
  }
};

class HistoryWriter {
 public:
  explicit HistoryWriter(const std::string& path) {
    if (path.empty()) return;
    out_.open(path);
    if (!out_) throw DataError("cannot write " + path);
    out_ << "epoch\tlr\ttrain\tvalid\twall_seconds\n";
    out_.flush();
  }

  void write(const EpochRecord& r) {
    if (!out_.is_open()) return;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu\t%.10g\t%.10g\t%.10g\t%.3f\n", r.epoch, r.lr, r.train_objective,
                  r.valid_objective, r.wall_seconds);
    out_ << buf;
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// Shared epoch loop: run_epoch trains one epoch at the given lr and returns
// the training objective; validate returns the validation objective.
template <GruModel M>
TrainResult run_schedule(M& model, const std::vector<NamedTensor>& params, const TrainConfig& cfg,
                         const std::function<double(std::size_t epoch, double lr)>& run_epoch,
                         const std::function<double()>& validate) {
  using clock = std::chrono::steady_clock;
  HistoryWriter history(cfg.history_path);
  auto diverged = [&](const std::string& what) -> void {
    std::string msg = "training diverged: " + what;
    if (!cfg.checkpoint_path.empty()) {
      const std::string dump = cfg.checkpoint_path + ".diverged";
      try {
        save_model(model, dump);
        msg += " (state dumped to " + dump + ")";
      } catch (const Error&) {
      }
    }
    throw NumericError(msg);
  };

  TrainResult result;
  try {
    result.initial_valid = validate();
  } catch (const NumericError& e) {
    diverged(std::string("initial validation: ") + e.what());
  }
  if (!std::isfinite(result.initial_valid)) diverged("initial validation objective is not finite");
  ScheduleState state;
  schedule_start(state, cfg.initial_lr(), result.initial_valid);
  Snapshot best = Snapshot::take(params);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = state.lr;
    try {
      rec.train_objective = run_epoch(epoch, state.lr);
      rec.valid_objective = validate();
    } catch (const NumericError& e) {
      diverged("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(rec.train_objective) || !std::isfinite(rec.valid_objective)) {
      diverged("epoch " + std::to_string(epoch) + " objective is not finite");
    }
    rec.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
    history.write(rec);
    result.history.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);

    const ScheduleStep step = lr_schedule(state, rec.valid_objective, cfg.threshold, cfg.decay);
    if (step.improved) {
      best = Snapshot::take(params);
      if (!cfg.checkpoint_path.empty()) save_model(model, cfg.checkpoint_path);
    }
    if (step.stop) {
      result.stopped_early = true;
      break;
    }
  }
  best.restore(params);
  result.best_valid = state.best;
  result.best_epoch = state.best_epoch;
  return result;
}

}  // namespace detail

// Maximum-likelihood training: minimizes per-token NLL, equivalently
// maximizes the mean sentence log-score. The bi model's c stays frozen.
template <GruModel M>
TrainResult train_mle(M& model, std::span<const Sentence> train, std::span<const Sentence> valid,
                      const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty() || valid.empty()) throw DataError("training and validation corpora must be non-empty");
  std::vector<NamedTensor> params;
  if constexpr (M::kind == ModelKind::Bi) {
    params = model.parameters(false);
  } else {
    params = model.parameters();
  }

  auto run_epoch = [&](std::size_t epoch, double lr) {
    const std::string tag = "epoch" + std::to_string(epoch);
    Rng dropout_rng = make_rng(cfg.seed, "dropout/" + tag);
    const auto batches = make_chunks(train, cfg.batch, cfg.chunk_len, derive_seed(cfg.seed, "shuffle/" + tag));
    double nll = 0;
    std::size_t tokens = 0;
    for (const auto& cb : batches) {
      const std::size_t n = cb.real_positions();
      zero_grads(params);
      Graph g;
      ChunkForward f = forward_chunk(g, model, cb, &dropout_rng);
      Var loss = g.scale(g.sum(f.sentence_log_f), -1.0 / double(n));
      g.backward(loss);
      sgd_update(params, lr, cfg.l2, cfg.clip);
      nll += g.value(loss)[0] * double(n);
      tokens += n;
    }
    return nll / double(tokens);
  };
  auto validate = [&] { return mle_objective(std::as_const(model), valid, cfg.threads); };
  return detail::run_schedule(model, params, cfg, run_epoch, validate);
}

// Sentence-level NCE training of the bi model against an n-gram noise
// model. Every update uses cfg.batch data sentences and k fresh noise
// sentences for each of them.
inline TrainResult train_nce(BiGruLm& model, std::span<const Sentence> train, std::span<const Sentence> valid,
                             const NGramModel& noise, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty() || valid.empty()) throw DataError("training and validation corpora must be non-empty");
  if (noise.vocab_size() != model.dims().vocab) throw UsageError("noise model and network vocabularies differ");
  const std::vector<NamedTensor> params = model.parameters(true);
  const double k = double(cfg.k);
  const std::size_t max_len = cfg.chunk_len - 1;

  auto log_noise_of = [&](std::span<const Sentence> s) {
    std::vector<double> out;
    for (const auto& x : s) out.push_back(noise.score(x));
    return out;
  };
  const std::vector<double> train_ln = log_noise_of(train);
  const std::vector<double> valid_ln = log_noise_of(valid);
  for (std::size_t i = 0; i < train_ln.size(); ++i)
    if (!std::isfinite(train_ln[i])) throw DataError("noise model gives zero probability to training sentence " + std::to_string(i + 1));

  NGramSampler valid_sampler(noise, derive_seed(cfg.seed, "valid-noise"), max_len);
  const std::vector<NoiseSample> valid_noise = draw_noise(valid_sampler, valid.size() * cfg.k);
  NGramSampler sampler(noise, derive_seed(cfg.seed, "train-noise"), max_len);

  auto run_epoch = [&](std::size_t epoch, double lr) {
    const std::string tag = "epoch" + std::to_string(epoch);
    Rng dropout_rng = make_rng(cfg.seed, "dropout/" + tag);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = make_rng(cfg.seed, "shuffle/" + tag);
    std::shuffle(order.begin(), order.end(), shuffle);

    double total = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch) {
      const std::size_t ndata = std::min(cfg.batch, order.size() - first);
      std::vector<Sentence> group;
      std::vector<double> log_noise;
      std::vector<std::uint8_t> is_data;
      for (std::size_t j = 0; j < ndata; ++j) {
        group.push_back(train[order[first + j]]);
        log_noise.push_back(train_ln[order[first + j]]);
        is_data.push_back(1);
      }
      for (auto& n : draw_noise(sampler, ndata * cfg.k)) {
        group.push_back(std::move(n.sentence));
        log_noise.push_back(n.log_prob);
        is_data.push_back(0);
      }

      zero_grads(params);
      for (const auto& cb : make_chunks(group, cfg.batch, cfg.chunk_len, std::nullopt)) {
        std::vector<double> ln;
        std::vector<std::uint8_t> lab;
        for (std::size_t id : cb.sentence_ids) {
          ln.push_back(log_noise[id]);
          lab.push_back(is_data[id]);
        }
        Graph g;
        ChunkForward f = forward_chunk(g, model, cb, &dropout_rng);
        Var x = g.add_scalar(f.sentence_log_f, g.parameter(model.c));
        Var loss = g.scale(g.nce_loss(x, ln, lab, k), 1.0 / double(ndata));
        g.backward(loss);
        total += g.value(loss)[0] * double(ndata);
      }
      sgd_update(params, lr, cfg.l2, cfg.clip);
    }
    return total / double(train.size());
  };
  auto validate = [&] { return nce_objective(model, valid, valid_ln, valid_noise, k, cfg.threads); };
  return detail::run_schedule(model, params, cfg, run_epoch, validate);
}

}  // namespace bilm
