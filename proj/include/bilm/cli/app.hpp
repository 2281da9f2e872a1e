#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bilm/cli/manifest.hpp"
#include "bilm/corpus/corpus.hpp"
#include "bilm/errors.hpp"
#include "bilm/eval/decoys.hpp"
#include "bilm/eval/evaluate.hpp"
#include "bilm/grulm/models.hpp"
#include "bilm/grulm/serialize.hpp"
#include "bilm/ngram/arpa.hpp"
#include "bilm/ngram/ngram.hpp"
#include "bilm/training/loss_check.hpp"
#include "bilm/training/trainer.hpp"

namespace bilm::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

inline std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r' || ch == '\t') ch = ' ';
  return s;
}

inline void report_error(std::ostream& err, int code, const std::string& kind, const std::string& msg) {
  err << "error\tkind=" << kind << "\texit=" << code << "\tmessage=" << one_line(msg) << "\n";
}

inline std::string stem(const std::string& path) { return std::filesystem::path(path).stem().string(); }

// Reads a flat key=value file into --key=value arguments. Blank lines and
// lines starting with '#' are ignored.
inline std::vector<std::string> config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config " + path);
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    if (key.starts_with("--")) key = key.substr(2);
    if (key.empty() || key == "config") throw UsageError(path + ":" + std::to_string(lineno) + ": invalid key '" + key + "'");
    out.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  return out;
}

// Splices config-file entries in front of the command-line flags; with
// take-last semantics the explicit flags win.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::optional<std::string> cfg;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) cfg = args[i + 1];
    if (args[i].starts_with("--config=")) cfg = args[i].substr(9);
  }
  if (!cfg) return args;
  std::vector<std::string> out{args[0]};
  for (auto& a : config_args(*cfg)) out.push_back(std::move(a));
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

inline std::vector<std::pair<std::string, std::string>> effective_config(const CLI::App& sub) {
  std::vector<std::pair<std::string, std::string>> kv;
  for (const CLI::Option* o : sub.get_options()) {
    std::string name = o->get_single_name();
    if (name == "help") continue;
    std::string v;
    if (o->count() > 0) {
      const auto& res = o->results();
      if (o->get_multi_option_policy() == CLI::MultiOptionPolicy::TakeAll) {
        for (std::size_t i = 0; i < res.size(); ++i) v += (i ? "," : "") + res[i];
      } else {
        v = res.back();
      }
      if (o->get_type_size() == 0 && v.empty()) v = "true";
    } else {
      v = o->get_default_str();
    }
    kv.emplace_back(std::move(name), std::move(v));
  }
  return kv;
}

inline void check_distinct(const std::vector<std::string>& inputs, const std::string& output) {
  namespace fs = std::filesystem;
  for (const auto& in : inputs) {
    std::error_code ec;
    if (fs::exists(output) && fs::equivalent(in, output, ec)) {
      throw UsageError("output " + output + " would overwrite input " + in);
    }
  }
}

inline bool is_arpa(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    return line == "\\data\\";
  }
  return false;
}

// A loaded model plus the vocabulary its ids refer to. Not movable, the
// scorer refers to the model in place.
struct LoadedModel {
  std::optional<ArpaModel> arpa;
  std::optional<AnyModel> nn;
  Vocabulary vocab;
  Scorer scorer;
  std::vector<std::pair<std::string, std::string>> files;  // role, path

  LoadedModel() = default;
  LoadedModel(const LoadedModel&) = delete;
  LoadedModel& operator=(const LoadedModel&) = delete;
};

inline std::unique_ptr<LoadedModel> load_any_model(const std::string& path, const std::string& vocab_path,
                                                   std::size_t threads) {
  auto m = std::make_unique<LoadedModel>();
  m->files.emplace_back("model", path);
  if (is_arpa(path)) {
    if (!vocab_path.empty()) {
      m->arpa = import_arpa(path, Vocabulary::load(vocab_path));
      m->files.emplace_back("vocab", vocab_path);
    } else {
      m->arpa = import_arpa(path);
    }
    m->vocab = m->arpa->vocab;
    m->scorer = make_scorer(m->arpa->model);
    return m;
  }
  const std::string vp = vocab_path.empty() ? path + ".vocab" : vocab_path;
  m->nn = load_model(path);
  m->vocab = Vocabulary::load(vp);
  m->files.emplace_back("vocab", vp);
  const std::size_t V = std::visit([](const auto& x) { return x.dims().vocab; }, *m->nn);
  if (V != m->vocab.size()) {
    throw DataError("vocabulary " + vp + " has " + std::to_string(m->vocab.size()) + " entries but model " + path +
                    " expects " + std::to_string(V));
  }
  m->scorer = make_scorer(*m->nn, threads);
  return m;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("write failed for " + path);
}

inline std::vector<Sentence> read_corpus(const std::string& path, const Vocabulary& vocab) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path + " is empty");
  return encode_all(lines, vocab);
}

}  // namespace detail

// Parses argv-style arguments (without the program name) and runs one
// subcommand. Returns the process exit code; errors are reported as one
// tab-separated line on the error stream.
inline int run(std::vector<std::string> args, Streams io = {}) {
  CLI::App app{"Uni- and bi-directional GRU language models, n-gram noise models and decoy rescoring", "bilm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolkitVersion);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string config;
  auto common = [&](CLI::App* s, bool with_threads = false) {
    s->add_option("--config", config, "flat key=value file; explicit flags override it");
    s->add_option("--seed", seed, "root random seed");
    if (with_threads) s->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  };

  // train-ngram
  auto* tn = app.add_subcommand("train-ngram", "train an interpolated Kneser-Ney model and write ARPA");
  std::string tn_train, tn_out, tn_vocab;
  std::size_t tn_order = 4, tn_vocab_size = 10000;
  double tn_discount = 0.75;
  tn->add_option("--train", tn_train, "training text, one sentence per line")->required();
  tn->add_option("--out", tn_out, "output ARPA file")->required();
  tn->add_option("--order", tn_order)->check(CLI::Range(1, 9));
  tn->add_option("--discount", tn_discount);
  tn->add_option("--vocab", tn_vocab, "fixed vocabulary file (one word per line)");
  tn->add_option("--vocab-size", tn_vocab_size, "vocabulary cap, reserved tokens included");
  common(tn);

  // sample
  auto* sm = app.add_subcommand("sample", "sample sentences from an ARPA model, or uniform-random text");
  std::string sm_model, sm_out, sm_lengths;
  std::size_t sm_count = 0, sm_max_len = 200;
  bool sm_uniform = false;
  sm->add_option("--model", sm_model, "ARPA model")->required();
  sm->add_option("--out", sm_out)->required();
  sm->add_option("--count", sm_count)->required()->check(CLI::PositiveNumber);
  sm->add_option("--max-len", sm_max_len, "token cap per sample; longer samples are redrawn")->check(CLI::PositiveNumber);
  sm->add_flag("--uniform", sm_uniform, "i.i.d. uniform words instead of n-gram samples");
  sm->add_option("--lengths-from", sm_lengths, "corpus whose sentence lengths the uniform text follows");
  common(sm);

  // train-nn
  auto* tr = app.add_subcommand("train-nn", "train a uni- or bi-directional GRU language model");
  std::string tr_kind = "uni", tr_objective = "mle", tr_train, tr_valid, tr_out, tr_vocab, tr_noise;
  std::size_t tr_vocab_size = 10000, tr_embed = 300, tr_hidden = 300, tr_checkpoint_every = 0;
  std::optional<double> tr_dropout;
  double tr_init_scale = 0.05;
  bool tr_no_normalize = false;
  TrainConfig tc;
  tr->add_option("--kind", tr_kind)->check(CLI::IsMember({"uni", "bi"}));
  tr->add_option("--objective", tr_objective)->check(CLI::IsMember({"mle", "nce"}));
  tr->add_option("--train", tr_train)->required();
  tr->add_option("--valid", tr_valid)->required();
  tr->add_option("--out", tr_out, "final model; also prefixes vocab, history and checkpoints")->required();
  tr->add_option("--vocab", tr_vocab);
  tr->add_option("--vocab-size", tr_vocab_size);
  tr->add_option("--noise", tr_noise, "ARPA noise model (nce)");
  tr->add_option("--k", tc.k, "noise samples per data sentence (nce)");
  tr->add_option("--embed", tr_embed)->check(CLI::PositiveNumber);
  tr->add_option("--hidden", tr_hidden)->check(CLI::PositiveNumber);
  tr->add_option("--dropout", tr_dropout, "default 0.5 for uni, 0 for bi");
  tr->add_flag("--no-normalize", tr_no_normalize, "bi: skip the word-level softmax");
  tr->add_option("--init-scale", tr_init_scale);
  tr->add_option("--batch", tc.batch);
  tr->add_option("--chunk-len", tc.chunk_len);
  tr->add_option("--lr", tc.lr, "0 picks 1.0 for mle, 0.1 for nce");
  tr->add_option("--decay", tc.decay);
  tr->add_option("--l2", tc.l2);
  tr->add_option("--threshold", tc.threshold);
  tr->add_option("--max-epochs", tc.max_epochs);
  tr->add_option("--clip", tc.clip);
  tr->add_option("--checkpoint-every", tr_checkpoint_every, "also save the model every N epochs (0: off)");
  common(tr, true);

  // gen-decoys
  auto* gd = app.add_subcommand("gen-decoys", "build a decoy benchmark from a test corpus");
  std::string gd_in, gd_type = "sdi", gd_out, gd_vocab;
  DecoyOptions gd_opts;
  gd->add_option("--in", gd_in)->required();
  gd->add_option("--type", gd_type)->check(CLI::IsMember({"s", "d", "i", "sdi"}));
  gd->add_option("--out", gd_out, "default: <in stem>-<type>.dec beside the input");
  gd->add_option("--vocab", gd_vocab, "vocabulary for replacement words (default: words of the input)");
  gd->add_option("--per-sentence", gd_opts.per_sentence)->check(CLI::PositiveNumber);
  common(gd);

  // rescore
  auto* rs = app.add_subcommand("rescore", "accuracy of a model on decoy benchmarks");
  std::string rs_model, rs_vocab, rs_out, rs_name;
  std::vector<std::string> rs_decoys;
  bool rs_length_norm = false;
  rs->add_option("--model", rs_model, "ARPA file or model container")->required();
  rs->add_option("--decoys", rs_decoys)->required()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  rs->add_option("--vocab", rs_vocab, "default for containers: <model>.vocab");
  rs->add_option("--out", rs_out, "report file (also printed)");
  rs->add_option("--name", rs_name, "model column (default: model file stem)");
  rs->add_flag("--length-norm", rs_length_norm, "mark the length-normed column as primary");
  common(rs, true);

  // ppl
  auto* pp = app.add_subcommand("ppl", "pseudo-perplexity of text sets");
  std::string pp_model, pp_vocab, pp_out, pp_name;
  std::vector<std::string> pp_text;
  pp->add_option("--model", pp_model)->required();
  pp->add_option("--text", pp_text)->required()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  pp->add_option("--vocab", pp_vocab);
  pp->add_option("--out", pp_out);
  pp->add_option("--name", pp_name);
  common(pp, true);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of a training loss on a toy instance");
  std::string gc_kind = "bi", gc_objective = "nce", gc_out;
  ToyCheckOptions gc_opts;
  gc->add_option("--kind", gc_kind)->check(CLI::IsMember({"uni", "bi"}));
  gc->add_option("--objective", gc_objective)->check(CLI::IsMember({"mle", "nce"}));
  gc->add_option("--vocab-size", gc_opts.dims.vocab);
  gc->add_option("--embed", gc_opts.dims.embed)->check(CLI::PositiveNumber);
  gc->add_option("--hidden", gc_opts.dims.hidden)->check(CLI::PositiveNumber);
  gc->add_option("--k", gc_opts.k);
  gc->add_option("--step", gc_opts.check.step);
  gc->add_option("--tolerance", gc_opts.check.tolerance);
  gc->add_option("--out", gc_out, "report file (also printed)");
  common(gc);

  try {
    args = detail::expand_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    io.out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kOk;
  } catch (const CLI::CallForVersion&) {
    io.out << kToolkitVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    detail::report_error(io.err, kUsage, "usage", e.what());
    return kUsage;
  } catch (const Error& e) {
    detail::report_error(io.err, dynamic_cast<const UsageError*>(&e) ? kUsage : kData,
                         dynamic_cast<const UsageError*>(&e) ? "usage" : "data", e.what());
    return dynamic_cast<const UsageError*>(&e) ? kUsage : kData;
  }

  CLI::App* sub = app.get_subcommands().front();
  Manifest manifest(sub->get_name());
  manifest.set_config(detail::effective_config(*sub));
  manifest.set("seed", seed);

  try {
    if (sub == tn) {
      const auto lines = read_lines(tn_train);
      if (lines.empty()) throw DataError(tn_train + " is empty");
      const Vocabulary vocab = tn_vocab.empty() ? Vocabulary::build(lines, tn_vocab_size) : Vocabulary::load(tn_vocab);
      const std::vector<std::string> inputs =
          tn_vocab.empty() ? std::vector{tn_train} : std::vector{tn_train, tn_vocab};
      detail::check_distinct(inputs, tn_out);
      detail::check_distinct(inputs, tn_out + ".vocab");
      const NGramModel model = train_ngram(encode_all(lines, vocab), vocab.size(), tn_order, tn_discount);
      export_arpa(model, vocab, tn_out);
      vocab.save(tn_out + ".vocab");
      manifest.add_input("train", tn_train);
      if (!tn_vocab.empty()) manifest.add_input("vocab", tn_vocab);
      manifest.add_output(tn_out);
      manifest.add_output(tn_out + ".vocab");
      manifest.write(manifest_path(tn_out));
      io.out << "wrote " << tn_out << "\tvocab=" << vocab.size() << "\torder=" << tn_order << "\n";
      return kOk;
    }

    if (sub == sm) {
      if (sm_uniform == sm_lengths.empty()) throw UsageError("--uniform and --lengths-from go together");
      detail::check_distinct({sm_model}, sm_out);
      ArpaModel m = import_arpa(sm_model);
      manifest.add_input("model", sm_model);
      std::vector<Sentence> text;
      if (sm_uniform) {
        const auto lengths = detail::read_corpus(sm_lengths, m.vocab);
        text = gen_uniform_text(m.vocab.size(), lengths, sm_count, seed);
        manifest.add_input("lengths", sm_lengths);
      } else {
        text = gen_ngram_text(m.model, sm_count, seed, sm_max_len);
      }
      write_sentences(sm_out, text, m.vocab);
      manifest.add_output(sm_out);
      manifest.write(manifest_path(sm_out));
      io.out << "wrote " << sm_out << "\tsentences=" << text.size() << "\n";
      return kOk;
    }

    if (sub == tr) {
      const bool nce = tr_objective == "nce";
      if (tr_kind == "uni" && nce) throw UsageError("the nce objective applies to --kind bi only");
      if (nce && tr_noise.empty()) throw UsageError("--objective nce needs --noise <arpa>");
      if (!nce && !tr_noise.empty()) throw UsageError("--noise is only used with --objective nce");
      if (tr_kind == "uni" && tr_no_normalize) throw UsageError("--no-normalize applies to --kind bi only");
      tc.objective = nce ? Objective::Nce : Objective::Mle;
      tc.seed = seed;
      tc.threads = threads;
      tc.history_path = tr_out + ".history.tsv";
      tc.checkpoint_path = tr_out + ".ckpt";
      tc.validate();

      std::vector<std::string> inputs{tr_train, tr_valid};
      if (!tr_vocab.empty()) inputs.push_back(tr_vocab);
      if (nce) inputs.push_back(tr_noise);
      for (const auto& o : {tr_out, tr_out + ".vocab", tc.history_path, tc.checkpoint_path}) detail::check_distinct(inputs, o);

      const auto train_lines = read_lines(tr_train);
      if (train_lines.empty()) throw DataError(tr_train + " is empty");
      std::optional<ArpaModel> noise;
      Vocabulary vocab;
      if (nce) {
        noise = tr_vocab.empty() ? import_arpa(tr_noise) : import_arpa(tr_noise, Vocabulary::load(tr_vocab));
        vocab = noise->vocab;
      } else {
        vocab = tr_vocab.empty() ? Vocabulary::build(train_lines, tr_vocab_size) : Vocabulary::load(tr_vocab);
      }
      const auto train = encode_all(train_lines, vocab);
      const auto valid = detail::read_corpus(tr_valid, vocab);
      const ModelDims dims{vocab.size(), tr_embed, tr_hidden};

      std::vector<std::string> written;
      auto finish = [&](const auto& model, const TrainResult& r) {
        save_model(model, tr_out);
        vocab.save(tr_out + ".vocab");
        for (const auto& p : {tr_out, tr_out + ".vocab", tc.history_path}) written.push_back(p);
        if (std::filesystem::exists(tc.checkpoint_path)) written.push_back(tc.checkpoint_path);
        manifest.add_input("train", tr_train);
        manifest.add_input("valid", tr_valid);
        if (!tr_vocab.empty()) manifest.add_input("vocab", tr_vocab);
        if (nce) manifest.add_input("noise", tr_noise);
        for (const auto& p : written) manifest.add_output(p);
        manifest.set("result", {{"initial_valid", r.initial_valid},
                                {"best_valid", r.best_valid},
                                {"best_epoch", r.best_epoch},
                                {"epochs", r.history.size()},
                                {"stopped_early", r.stopped_early}});
        manifest.write(manifest_path(tr_out));
        io.out << "wrote " << tr_out << "\tbest_epoch=" << r.best_epoch << "\tbest_valid=" << r.best_valid << "\n";
      };
      auto with_checkpoints = [&](auto& model) {
        if (tr_checkpoint_every == 0) return;
        tc.on_epoch = [&, every = tr_checkpoint_every](const EpochRecord& rec) {
          if (rec.epoch % every) return;
          const std::string p = tr_out + ".epoch" + std::to_string(rec.epoch);
          save_model(model, p);
          written.push_back(p);
        };
      };

      if (tr_kind == "uni") {
        UniGruLm model(dims, tr_dropout.value_or(0.5));
        model.initialize(derive_seed(seed, "init"), tr_init_scale);
        with_checkpoints(model);
        finish(model, train_mle(model, train, valid, tc));
      } else {
        BiGruLm model(dims, tr_dropout.value_or(0.0), !tr_no_normalize);
        model.initialize(derive_seed(seed, "init"), tr_init_scale);
        with_checkpoints(model);
        const TrainResult r = nce ? train_nce(model, train, valid, noise->model, tc) : train_mle(model, train, valid, tc);
        finish(model, r);
      }
      return kOk;
    }

    if (sub == gd) {
      const auto lines = read_lines(gd_in);
      if (lines.empty()) throw DataError(gd_in + " is empty");
      const Vocabulary vocab = gd_vocab.empty() ? Vocabulary::build(lines, std::size_t(-1)) : Vocabulary::load(gd_vocab);
      const std::string out =
          gd_out.empty()
              ? (std::filesystem::path(gd_in).parent_path() / (detail::stem(gd_in) + "-" + gd_type + ".dec")).string()
              : gd_out;
      detail::check_distinct(gd_vocab.empty() ? std::vector{gd_in} : std::vector{gd_in, gd_vocab}, out);
      const DecoyMode mode = parse_decoy_mode(gd_type);
      const DecoyResult r = gen_decoys(encode_all(lines, vocab), vocab, mode, seed, gd_opts);
      for (const auto& n : r.notices) io.err << "notice\t" << n << "\n";
      if (r.sets.empty()) throw DataError("no sentence of " + gd_in + " admits " + gd_type + " decoys");
      write_decoys(out, r.sets, vocab, mode, seed);
      manifest.add_input("in", gd_in);
      if (!gd_vocab.empty()) manifest.add_input("vocab", gd_vocab);
      manifest.add_output(out);
      manifest.set("sets", r.sets.size());
      manifest.set("skipped", r.notices.size());
      manifest.write(manifest_path(out));
      io.out << "wrote " << out << "\tsets=" << r.sets.size() << "\tskipped=" << r.notices.size() << "\n";
      return kOk;
    }

    if (sub == rs || sub == pp) {
      const bool is_rs = sub == rs;
      const std::string& model_path = is_rs ? rs_model : pp_model;
      const std::string& vocab_path = is_rs ? rs_vocab : pp_vocab;
      const std::string& out = is_rs ? rs_out : pp_out;
      const std::string name = (is_rs ? rs_name : pp_name).empty() ? detail::stem(model_path) : (is_rs ? rs_name : pp_name);
      const std::vector<std::string>& sets = is_rs ? rs_decoys : pp_text;

      auto model = detail::load_any_model(model_path, vocab_path, threads);
      std::vector<std::string> inputs = sets;
      for (const auto& [role, p] : model->files) inputs.push_back(p);
      if (!out.empty()) detail::check_distinct(inputs, out);

      std::string report;
      char buf[512];
      if (is_rs) {
        report = rs_length_norm ? "model\ttest_set\tsets\traw_acc\tnorm_acc*\n" : "model\ttest_set\tsets\traw_acc\tnorm_acc\n";
        for (const auto& path : sets) {
          const DecoyFile f = read_decoys(path, model->vocab);
          const RescoreResult r = rescore(model->scorer, f.sets);
          std::snprintf(buf, sizeof buf, "%s\t%s\t%zu\t%.2f\t%.2f\n", name.c_str(), detail::stem(path).c_str(), r.sets,
                        100 * r.accuracy_raw(), 100 * r.accuracy_norm());
          report += buf;
        }
      } else {
        report = "model\ttext\tsentences\ttokens\tpseudo_ppl\n";
        for (const auto& path : sets) {
          const auto text = detail::read_corpus(path, model->vocab);
          const PseudoPpl p = pseudo_ppl(model->scorer, text);
          std::snprintf(buf, sizeof buf, "%s\t%s\t%zu\t%zu\t%.4f\n", name.c_str(), detail::stem(path).c_str(), text.size(),
                        p.tokens, p.value());
          report += buf;
        }
      }
      io.out << report;
      if (!out.empty()) {
        detail::write_text(out, report);
        for (const auto& [role, p] : model->files) manifest.add_input(role, p);
        for (const auto& p : sets) manifest.add_input(is_rs ? "decoys" : "text", p);
        manifest.add_output(out);
        manifest.write(manifest_path(out));
      }
      return kOk;
    }

    if (sub == gc) {
      gc_opts.seed = seed;
      const GradCheckReport r = check_objective_gradients(gc_kind == "uni" ? ModelKind::Uni : ModelKind::Bi,
                                                          gc_objective == "nce" ? Objective::Nce : Objective::Mle, gc_opts);
      std::string report = "tensor\tchecked\tmax_rel_error\n";
      char buf[256];
      for (const auto& e : r.tensors) {
        std::snprintf(buf, sizeof buf, "%s\t%zu\t%.3e\n", e.name.c_str(), e.checked, e.max_rel_error);
        report += buf;
      }
      std::snprintf(buf, sizeof buf, "result\t%s\t%.3e\n", r.passed ? "PASS" : "FAIL", r.max_rel_error);
      report += buf;
      io.out << report;
      if (!gc_out.empty()) {
        detail::write_text(gc_out, report);
        manifest.add_output(gc_out);
        manifest.write(manifest_path(gc_out));
      }
      if (!r.passed) {
        std::snprintf(buf, sizeof buf, "gradient check failed: max relative error %.3e in %s", r.max_rel_error,
                      r.worst_tensor.c_str());
        throw NumericError(buf);
      }
      return kOk;
    }
  } catch (const UsageError& e) {
    detail::report_error(io.err, kUsage, "usage", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    detail::report_error(io.err, kNumeric, "numeric", e.what());
    return kNumeric;
  } catch (const Error& e) {
    detail::report_error(io.err, kData, "data", e.what());
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    detail::report_error(io.err, kData, "data", e.what());
    return kData;
  } catch (const std::bad_alloc&) {
    detail::report_error(io.err, kData, "data", "out of memory");
    return kData;
  }
  return kUsage;
}

inline int run(int argc, char** argv, Streams io = {}) {
  return run(std::vector<std::string>(argv + 1, argv + argc), io);
}

}  // namespace bilm::cli
