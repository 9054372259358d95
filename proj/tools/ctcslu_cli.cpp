// Copyright 2026 The ctcslu Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "ctcslu/corpus.hpp"
#include "ctcslu/decode.hpp"
#include "ctcslu/error.hpp"
#include "ctcslu/experiment.hpp"
#include "ctcslu/lm.hpp"
#include "ctcslu/metrics.hpp"
#include "ctcslu/model.hpp"
#include "ctcslu/synthcorpus.hpp"
#include "ctcslu/train.hpp"
#include "ctcslu/utf8.hpp"

namespace {

namespace fs = std::filesystem;
using namespace ctcslu;

// A corpus argument is either a split file or a corpus directory.
fs::path split_path(const fs::path& p, const char* split) {
  return fs::is_directory(p) ? p / (std::string(split) + ".jsonl") : p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::ofstream open_out(const fs::path& p) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + p.string());
  return out;
}

template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Globals {
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

// gen-corpus -------------------------------------------------------------

struct GenArgs {
  std::string spec;
  std::string out;
  synth::SplitSizes sizes;
};

int run_gen_corpus(const GenArgs& a, const Globals& g) {
  synth::GeneratorSpec spec =
      a.spec.empty() ? synth::GeneratorSpec::desk_default() : synth::GeneratorSpec::read(a.spec);
  if (g.seed) spec.seed = *g.seed;
  const auto corpus = synth::generate(spec, a.sizes);
  synth::write_corpus(a.out, spec, corpus);
  const auto stats = corpus::corpus_stats(corpus.train);
  std::cout << "wrote " << a.out << ": " << corpus.train.size() << " train, " << corpus.dev.size()
            << " dev, " << corpus.test.size() << " test utterances, " << stats.chunks
            << " training chunks\n";
  return 0;
}

// build-vocab ------------------------------------------------------------

struct VocabArgs {
  std::string corpus;
  std::string tags;
  bool star = false;
  std::string out;
};

int run_build_vocab(const VocabArgs& a) {
  const auto train = corpus::read_split(split_path(a.corpus, "train"));
  const tagcodec::TagInventory tags =
      a.tags.empty() ? tagcodec::TagInventory{} : tagcodec::TagInventory::read(a.tags);
  const auto vocab =
      tagcodec::Vocabulary::build(corpus::grapheme_inventory(train), tags, a.star);
  ensure_parent(a.out);
  vocab.write_file(a.out);
  std::cout << "wrote " << a.out << ": " << vocab.size() << " units, " << tags.size()
            << " tags" << (a.star ? ", star" : "") << '\n';
  return 0;
}

// train / chain ----------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string stage;
};

int run_training(const TrainArgs& a, const Globals& g, bool whole_chain) {
  experiment::ExperimentConfig cfg = experiment::ExperimentConfig::read(a.config);
  if (g.seed) cfg.override_seed(*g.seed);
  cfg.override_jobs(g.jobs);
  if (!whole_chain) {
    auto it = cfg.chain.begin();
    if (!a.stage.empty()) {
      it = std::find_if(cfg.chain.begin(), cfg.chain.end(),
                        [&](const auto& s) { return s.name == a.stage; });
      if (it == cfg.chain.end()) throw Error(ErrorKind::kUsage, "no stage named " + a.stage);
    }
    if (it == cfg.chain.end()) throw Error(ErrorKind::kConfiguration, "chain has no stages");
    cfg.chain = {*it};
  }
  train::ChainSpec spec = experiment::load_chain(cfg);
  if (cfg.init_checkpoint) spec.init = model::load_checkpoint(cfg.resolve(*cfg.init_checkpoint));
  const fs::path out = cfg.resolve(cfg.output_dir);
  const auto result = train::run_chain(spec, out, [](const train::EpochRecord& r) {
    std::fprintf(stderr, "[%s] epoch %d train_loss %.4f dev_cer %.4f dev_loss %.4f (%.1fs)\n",
                 r.stage.c_str(), r.epoch, r.train_loss, r.dev_cer, r.dev_loss, r.wall_seconds);
  });
  for (std::size_t i = 0; i < result.stages.size(); ++i) {
    const auto& s = result.stages[i];
    const auto& meta = s.checkpoint.meta;
    const double best = static_cast<std::size_t>(meta.epoch) < meta.dev_history.size()
                            ? meta.dev_history[static_cast<std::size_t>(meta.epoch)]
                            : 0.0;
    std::cout << spec.stages[i].name << ": best epoch " << meta.epoch << ", dev cer " << best
              << ", skipped " << s.skipped << " -> "
              << (out / (std::to_string(i) + "_" + spec.stages[i].name + ".ckpt")).string()
              << '\n';
  }
  cfg.write(out / "config.json");
  return 0;
}

// train-lm ---------------------------------------------------------------

struct LmArgs {
  std::string corpus;
  std::string vocab;
  int order = 4;
  std::string out;
};

int run_train_lm(const LmArgs& a) {
  const auto utts = corpus::read_split(split_path(a.corpus, "train"));
  std::optional<tagcodec::Vocabulary> vocab;
  if (!a.vocab.empty()) vocab = tagcodec::Vocabulary::read_file(a.vocab);
  std::vector<lm::Sentence> sentences;
  for (const auto& u : utts) {
    std::u32string text = u.transcript;
    if (vocab) {
      const auto loss = vocab->has_star() ? train::LossMode::kStar : train::LossMode::kPlain;
      text = vocab->render(train::make_target(u, *vocab, loss));
    }
    sentences.push_back(lm::tokenize(text));
  }
  const auto model = lm::NgramModel::estimate(sentences, a.order);
  ensure_parent(a.out);
  model.write_arpa(fs::path(a.out));
  std::cout << "wrote " << a.out << ": order " << model.order() << ", "
            << model.vocabulary_size() << " tokens\n";
  return 0;
}

// decode -----------------------------------------------------------------

struct DecodeArgs {
  std::string checkpoint;
  std::string corpus;
  std::string speakers;
  std::string vocab;
  std::string config;
  std::string out;
  std::optional<std::string> lm;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<int> beam;
};

int run_decode(const DecodeArgs& a, const Globals& g) {
  const model::Checkpoint ckpt = model::load_checkpoint(a.checkpoint);
  if (!a.vocab.empty() && !(tagcodec::Vocabulary::read_file(a.vocab) == ckpt.vocabulary)) {
    throw Error(ErrorKind::kDecodeConfig,
                "vocabulary " + a.vocab + " differs from the checkpoint's vocabulary");
  }
  std::optional<std::string> lm_path = a.lm;
  std::optional<double> alpha = a.alpha;
  std::optional<double> beta = a.beta;
  std::optional<int> beam = a.beam;
  bool monotone = true;
  if (!a.config.empty()) {
    const auto cfg = experiment::ExperimentConfig::read(a.config);
    if (!lm_path && cfg.decode.lm) lm_path = cfg.resolve(*cfg.decode.lm).string();
    if (!alpha && cfg.decode.lm) alpha = cfg.decode.alpha;
    if (!beta && cfg.decode.beam > 0) beta = cfg.decode.beta;
    if (!beam && cfg.decode.beam > 0) beam = cfg.decode.beam;
    monotone = cfg.decode.monotone;
  }
  const bool use_beam = lm_path || alpha || beta || beam;
  decode::BeamConfig bc;
  bc.width = beam.value_or(bc.width);
  bc.lm_weight = alpha.value_or(lm_path ? 1.0 : 0.0);
  bc.insertion_bonus = beta.value_or(0.0);
  bc.monotone = monotone;
  if (use_beam) bc.validate();
  std::optional<lm::NgramModel> lm_model;
  if (lm_path) {
    lm_model = lm::NgramModel::read_arpa(fs::path(*lm_path));
    decode::check_lm_compatibility(ckpt.vocabulary, *lm_model);
  } else if (bc.lm_weight != 0.0) {
    throw Error(ErrorKind::kDecodeConfig, "--alpha needs --lm");
  }

  const fs::path split = split_path(a.corpus, "test");
  const auto utts = corpus::read_split(split);
  corpus::SpeakerTable speakers;
  const int dim = ckpt.config.speaker_vector_dim;
  if (dim > 0) {
    const fs::path table = a.speakers.empty() ? split.parent_path() / "speakers.csv" : fs::path(a.speakers);
    speakers = corpus::read_speakers(table);
  }
  std::vector<decode::HypothesisRecord> records(utts.size());
  parallel_for(utts.size(), g.jobs, [&](std::size_t i) {
    const auto& u = utts[i];
    if (u.features.cols() != ckpt.config.input_dim) {
      throw Error(ErrorKind::kData, "utterance " + u.id + ": feature dim " +
                                        std::to_string(u.features.cols()) + ", model expects " +
                                        std::to_string(ckpt.config.input_dim));
    }
    model::FeatureSequence fs_{u.features, std::nullopt};
    if (dim > 0) {
      const auto it = speakers.find(u.speaker);
      if (it == speakers.end() || it->second.size() != dim) {
        throw Error(ErrorKind::kData, "utterance " + u.id + ": no usable speaker vector");
      }
      fs_.speaker_vector = it->second;
    }
    records[i].id = u.id;
    if (ckpt.config.output_frames(static_cast<int>(u.features.rows())) == 0) {
      records[i].score = -std::numeric_limits<double>::infinity();
      return;
    }
    const auto p = model::forward(ckpt, fs_);
    if (use_beam) {
      const auto r = decode::beam_decode(p, ckpt.vocabulary, lm_model ? &*lm_model : nullptr, bc);
      records[i].text = utf8::encode(r.text);
      records[i].score = r.score;
    } else {
      records[i].text = utf8::encode(decode::greedy_decode(p, ckpt.vocabulary));
      records[i].score = p.rowwise().maxCoeff().sum();
    }
  });
  ensure_parent(a.out);
  decode::write_hypotheses(a.out, records);
  std::cout << "wrote " << a.out << ": " << records.size() << " hypotheses ("
            << (use_beam ? "beam " + std::to_string(bc.width) : std::string("greedy")) << ")\n";
  return 0;
}

// evaluate ---------------------------------------------------------------

struct EvalArgs {
  std::string ref;
  std::string hyp;
  std::string tags;
  std::string train;
  std::string out;
  std::string prf_mode = "tag-value";
  int top_k = 0;
};

int run_evaluate(const EvalArgs& a) {
  const auto inventory = tagcodec::TagInventory::read(a.tags);
  const fs::path ref_path = split_path(a.ref, "test");
  const auto refs = corpus::read_split(ref_path);
  const auto hyps = decode::read_hypotheses(a.hyp);
  std::map<std::string, const decode::HypothesisRecord*> by_id;
  for (const auto& h : hyps) {
    if (!by_id.emplace(h.id, &h).second) {
      throw Error(ErrorKind::kData, a.hyp + ": duplicate hypothesis id " + h.id);
    }
  }
  metrics::Evaluator ev(inventory, a.prf_mode == "tag" ? metrics::MatchMode::kTag
                                                       : metrics::MatchMode::kTagValue);
  for (const auto& u : refs) {
    const auto it = by_id.find(u.id);
    if (it == by_id.end()) throw Error(ErrorKind::kData, a.hyp + ": no hypothesis for " + u.id);
    const auto ref = tagcodec::bio_to_chunk(corpus::restrict_bio(u.bio, inventory), inventory).text;
    ev.add(ref, utf8::decode(it->second->text));
  }
  if (by_id.size() != refs.size()) {
    throw Error(ErrorKind::kData, a.hyp + ": " + std::to_string(by_id.size() - refs.size()) +
                                      " hypotheses without a reference");
  }
  const auto report = ev.report();
  const fs::path out(a.out);
  fs::create_directories(out);
  open_out(out / "report.json") << metrics::to_json(report).dump(2) << '\n';
  open_out(out / "report.txt") << metrics::render(report);
  const auto matrix = metrics::confusion_matrix(ev.tag_alignments(), a.top_k);
  {
    auto f = open_out(out / "confusion.tsv");
    metrics::write_confusion_tsv(f, matrix, false);
  }
  {
    auto f = open_out(out / "confusion_normalized.tsv");
    metrics::write_confusion_tsv(f, matrix, true);
  }
  fs::path train_path = a.train.empty() ? ref_path.parent_path() / "train.jsonl" : fs::path(split_path(a.train, "train"));
  std::map<std::string, long> training_counts;
  if (fs::exists(train_path)) {
    training_counts = corpus::corpus_stats(corpus::read_split(train_path)).concept_counts;
  } else if (!a.train.empty()) {
    throw Error(ErrorKind::kIo, "cannot read " + train_path.string());
  }
  for (auto it = training_counts.begin(); it != training_counts.end();) {
    it = inventory.contains(it->first) ? std::next(it) : training_counts.erase(it);
  }
  {
    auto f = open_out(out / "cer_by_frequency.tsv");
    metrics::write_frequency_tsv(f, metrics::cer_by_frequency(ev.tag_alignments(), training_counts));
  }
  std::cout << metrics::render(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctcslu: CTC spoken language understanding toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random draw")->expected(1);
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  seed_opt->configurable(false);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic corpus");
  gen_cmd->add_option("--spec", gen.spec, "Generator spec JSON (default: built-in desk spec)")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--train", gen.sizes.train, "Training utterances");
  gen_cmd->add_option("--dev", gen.sizes.dev, "Dev utterances");
  gen_cmd->add_option("--test", gen.sizes.test, "Test utterances");

  VocabArgs voc;
  auto* voc_cmd = app.add_subcommand("build-vocab", "Build an output vocabulary");
  voc_cmd->add_option("--corpus", voc.corpus, "Corpus directory or training split")->required();
  voc_cmd->add_option("--tags", voc.tags, "Tag inventory file")->check(CLI::ExistingFile);
  voc_cmd->add_flag("--star", voc.star, "Add the star unit");
  voc_cmd->add_option("--out", voc.out, "Vocabulary file")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one stage of an experiment config");
  train_cmd->add_option("--config", tr.config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--stage", tr.stage, "Stage name (default: first)");
  TrainArgs ch;
  auto* chain_cmd = app.add_subcommand("chain", "Train every stage of an experiment config");
  chain_cmd->add_option("--config", ch.config, "Experiment config JSON")->required()->check(CLI::ExistingFile);

  LmArgs lma;
  auto* lm_cmd = app.add_subcommand("train-lm", "Estimate an n-gram LM and write ARPA");
  lm_cmd->add_option("--corpus", lma.corpus, "Corpus directory or split file")->required();
  lm_cmd->add_option("--vocab", lma.vocab, "Vocabulary selecting tags and star mapping")
      ->check(CLI::ExistingFile);
  lm_cmd->add_option("--order", lma.order, "N-gram order")->check(CLI::Range(1, 9));
  lm_cmd->add_option("--out", lma.out, "ARPA file")->required();

  DecodeArgs dec;
  auto* dec_cmd = app.add_subcommand("decode", "Decode a corpus split with a checkpoint");
  dec_cmd->add_option("--checkpoint", dec.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  dec_cmd->add_option("--corpus", dec.corpus, "Corpus directory (test split) or split file")->required();
  dec_cmd->add_option("--speakers", dec.speakers, "Speaker vector CSV")->check(CLI::ExistingFile);
  dec_cmd->add_option("--vocab", dec.vocab, "Expected vocabulary")->check(CLI::ExistingFile);
  dec_cmd->add_option("--config", dec.config, "Experiment config supplying decode defaults")
      ->check(CLI::ExistingFile);
  dec_cmd->add_option("--lm", dec.lm, "ARPA language model")->check(CLI::ExistingFile);
  dec_cmd->add_option("--alpha", dec.alpha, "LM weight");
  dec_cmd->add_option("--beta", dec.beta, "Per-token insertion bonus");
  dec_cmd->add_option("--beam", dec.beam, "Beam width");
  dec_cmd->add_option("--out", dec.out, "Hypothesis JSONL")->required();

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Score hypotheses against references");
  ev_cmd->add_option("--ref", ev.ref, "Reference corpus directory (test split) or split file")->required();
  ev_cmd->add_option("--hyp", ev.hyp, "Hypothesis JSONL")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--tags", ev.tags, "Tag inventory file")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--train", ev.train, "Training split for concept frequencies");
  ev_cmd->add_option("--prf-mode", ev.prf_mode, "Entity match for P/R/F")
      ->check(CLI::IsMember({"tag", "tag-value"}));
  ev_cmd->add_option("--top-k", ev.top_k, "Confusion matrix concepts (0: all)")
      ->check(CLI::NonNegativeNumber);
  ev_cmd->add_option("--out", ev.out, "Output directory")->required();

  for (auto* sub : app.get_subcommands({})) {
    sub->fallthrough();
    sub->footer("Global flags, accepted before or after the subcommand:\n"
                "  --seed UINT    Seed for every random draw\n"
                "  --jobs INT     Worker threads");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (*gen_cmd) return run_gen_corpus(gen, g);
    if (*voc_cmd) return run_build_vocab(voc);
    if (*train_cmd) return run_training(tr, g, false);
    if (*chain_cmd) return run_training(ch, g, true);
    if (*lm_cmd) return run_train_lm(lma);
    if (*dec_cmd) return run_decode(dec, g);
    if (*ev_cmd) return run_evaluate(ev);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << '\n';
    return static_cast<int>(ErrorCategory::kData);
  }
  return 1;
}
