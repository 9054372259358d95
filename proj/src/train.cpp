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


#include "ctcslu/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "ctcslu/ctc.hpp"
#include "ctcslu/decode.hpp"
#include "ctcslu/error.hpp"
#include "ctcslu/metrics.hpp"

namespace ctcslu::train {

namespace {

using model::Checkpoint;
using model::FeatureSequence;
using nlohmann::json;

[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorKind::kConfiguration, "train config: " + message);
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

struct Example {
  const corpus::Utterance* utt = nullptr;
  FeatureSequence features;
  tagcodec::LabelSequence target;
  int frames = 0;  // after convolution
  bool feasible = false;
};

Eigen::VectorXd speaker_vector(const corpus::Utterance& u, const corpus::SpeakerTable& table,
                               int dim, SpeakerMode mode) {
  if (mode != SpeakerMode::kAdapted) return Eigen::VectorXd::Zero(dim);
  const auto it = table.find(u.speaker);
  if (it == table.end()) {
    throw Error(ErrorKind::kData,
                "utterance " + u.id + ": no speaker vector for speaker '" + u.speaker + "'");
  }
  if (it->second.size() != dim) {
    throw Error(ErrorKind::kData, "utterance " + u.id + ": speaker vector has dim " +
                                      std::to_string(it->second.size()) + ", model expects " +
                                      std::to_string(dim));
  }
  return it->second;
}

std::vector<Example> prepare(const Checkpoint& ckpt, const std::vector<corpus::Utterance>& utts,
                             const corpus::SpeakerTable& speakers, LossMode loss,
                             SpeakerMode mode) {
  std::vector<Example> out(utts.size());
  const int dim = ckpt.config.speaker_vector_dim;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    Example& e = out[i];
    e.utt = &utts[i];
    if (utts[i].features.cols() != ckpt.config.input_dim) {
      throw Error(ErrorKind::kData, "utterance " + utts[i].id + ": feature dim " +
                                        std::to_string(utts[i].features.cols()) +
                                        ", model expects " +
                                        std::to_string(ckpt.config.input_dim));
    }
    e.features.frames = utts[i].features;
    if (dim > 0) e.features.speaker_vector = speaker_vector(utts[i], speakers, dim, mode);
    e.target = make_target(utts[i], ckpt.vocabulary, loss);
    e.frames = ckpt.config.output_frames(static_cast<int>(utts[i].features.rows()));
    e.feasible = e.frames > 0 && ctc::min_frames(e.target) <= e.frames;
  }
  return out;
}

// Indices sorted by input length, cut into fixed-size batches.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<Example>& examples,
                                                   const std::vector<std::size_t>& keep,
                                                   int batch_size) {
  std::vector<std::size_t> order = keep;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].features.frames.rows() < examples[b].features.frames.rows();
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::u32string as_text(const tagcodec::LabelSequence& labels) {
  std::u32string s;
  s.reserve(labels.size());
  for (int id : labels) s.push_back(static_cast<char32_t>(id));
  return s;
}

DevMetrics evaluate_examples(const Checkpoint& ckpt, const std::vector<Example>& examples,
                             int batch_size, int jobs) {
  DevMetrics m;
  m.total = static_cast<long>(examples.size());
  std::vector<std::size_t> usable;
  long edits = 0;
  long ref = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    ref += static_cast<long>(examples[i].target.size());
    if (examples[i].frames > 0) {
      usable.push_back(i);
    } else {
      edits += static_cast<long>(examples[i].target.size());
    }
  }
  double loss_sum = 0.0;
  for (const auto& batch : make_batches(examples, usable, batch_size)) {
    std::vector<const FeatureSequence*> ptrs;
    for (std::size_t i : batch) ptrs.push_back(&examples[i].features);
    const auto outs = model::forward_batch(ckpt, ptrs, model::Mode::kEval);
    std::vector<long> batch_edits(batch.size(), 0);
    std::vector<double> batch_loss(batch.size(), 0.0);
    parallel_for(batch.size(), jobs, [&](std::size_t b) {
      const Example& e = examples[batch[b]];
      batch_edits[b] = metrics::edit_distance(as_text(e.target), as_text(decode::best_path(outs[b])));
      if (e.feasible) batch_loss[b] = ctc::ctc_loss(outs[b], e.target).loss;
    });
    for (std::size_t b = 0; b < batch.size(); ++b) {
      edits += batch_edits[b];
      if (examples[batch[b]].feasible) {
        loss_sum += batch_loss[b];
        ++m.feasible;
      }
    }
  }
  m.cer = ref > 0 ? static_cast<double>(edits) / static_cast<double>(ref) : 0.0;
  m.loss = m.feasible > 0 ? loss_sum / static_cast<double>(m.feasible) : 0.0;
  return m;
}

bool better(const EpochRecord& a, const EpochRecord& b) {
  if (a.dev_cer != b.dev_cer) return a.dev_cer < b.dev_cer;
  return a.dev_loss < b.dev_loss;
}

const std::vector<std::pair<LossMode, const char*>> kLossNames = {{LossMode::kPlain, "plain"},
                                                                  {LossMode::kStar, "star"}};
const std::vector<std::pair<SpeakerMode, const char*>> kSpeakerNames = {
    {SpeakerMode::kNone, "none"},
    {SpeakerMode::kZeroPretrain, "zero-pretrain"},
    {SpeakerMode::kAdapted, "adapted"}};

template <typename E>
E parse_enum(const std::vector<std::pair<E, const char*>>& names, const std::string& s,
             const char* field) {
  for (const auto& [v, n] : names) {
    if (s == n) return v;
  }
  config_error(std::string("unknown ") + field + " '" + s + "'");
}

}  // namespace

const char* loss_mode_name(LossMode m) {
  for (const auto& [v, n] : kLossNames) {
    if (v == m) return n;
  }
  return "?";
}

const char* speaker_mode_name(SpeakerMode m) {
  for (const auto& [v, n] : kSpeakerNames) {
    if (v == m) return n;
  }
  return "?";
}

void TrainConfig::validate(const tagcodec::Vocabulary& vocab) const {
  if (batch_size < 1) config_error("batch_size must be >= 1");
  if (epochs < 0) config_error("epochs must be >= 0");
  if (adapt_epochs < -1) config_error("adapt_epochs must be >= -1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    config_error("learning_rate must be positive");
  }
  if (!(adapt_learning_rate >= 0.0) || !std::isfinite(adapt_learning_rate)) {
    config_error("adapt_learning_rate must be >= 0");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) config_error("lr_decay must be in (0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) config_error("momentum must be in [0, 1)");
  if (!(clip_norm > 0.0)) config_error("clip_norm must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) config_error("bn_momentum must be in [0, 1]");
  if (speaker_vector_dim < 0) config_error("speaker_vector_dim must be >= 0");
  if (jobs < 1) config_error("jobs must be >= 1");
  if (loss == LossMode::kStar && !vocab.has_star()) {
    config_error("star loss needs a star unit in the vocabulary");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"learning_rate", c.learning_rate},
           {"lr_decay", c.lr_decay},
           {"momentum", c.momentum},
           {"clip_norm", c.clip_norm},
           {"bn_momentum", c.bn_momentum},
           {"seed", c.seed},
           {"loss", loss_mode_name(c.loss)},
           {"speaker", speaker_mode_name(c.speaker)},
           {"speaker_vector_dim", c.speaker_vector_dim},
           {"adapt_epochs", c.adapt_epochs},
           {"adapt_learning_rate", c.adapt_learning_rate},
           {"frozen_layers", c.frozen_layers},
           {"jobs", c.jobs}};
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) config_error("expected an object");
  static const std::set<std::string> known = {
      "batch_size", "epochs",      "learning_rate", "lr_decay",           "momentum",
      "clip_norm",  "bn_momentum", "seed",          "loss",               "speaker",
      "speaker_vector_dim",        "adapt_epochs",  "adapt_learning_rate", "frozen_layers",
      "jobs"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) config_error("unknown key '" + key + "'");
  }
  const TrainConfig d;
  try {
    c.batch_size = j.value("batch_size", d.batch_size);
    c.epochs = j.value("epochs", d.epochs);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.lr_decay = j.value("lr_decay", d.lr_decay);
    c.momentum = j.value("momentum", d.momentum);
    c.clip_norm = j.value("clip_norm", d.clip_norm);
    c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
    c.seed = j.value("seed", d.seed);
    c.loss = parse_enum(kLossNames, j.value("loss", std::string("plain")), "loss");
    c.speaker = parse_enum(kSpeakerNames, j.value("speaker", std::string("none")), "speaker");
    c.speaker_vector_dim = j.value("speaker_vector_dim", d.speaker_vector_dim);
    c.adapt_epochs = j.value("adapt_epochs", d.adapt_epochs);
    c.adapt_learning_rate = j.value("adapt_learning_rate", d.adapt_learning_rate);
    c.frozen_layers = j.value("frozen_layers", d.frozen_layers);
    c.jobs = j.value("jobs", d.jobs);
  } catch (const json::exception& e) {
    config_error(e.what());
  }
}

nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["epoch"] = r.epoch;
  if (std::isfinite(r.train_loss)) {
    j["train_loss"] = r.train_loss;
  } else {
    j["train_loss"] = nullptr;
  }
  j["dev_cer"] = r.dev_cer;
  j["dev_loss"] = r.dev_loss;
  j["learning_rate"] = r.learning_rate;
  j["skipped"] = r.skipped;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

double clip_gradients(model::ParameterSet& grads, double bound) {
  const double norm = model::global_norm(grads);
  if (std::isfinite(norm) && norm > bound) {
    const double scale = bound / norm;
    for (auto& t : grads.tensors()) {
      if (t.trainable) t.value *= scale;
    }
  }
  return norm;
}

tagcodec::LabelSequence make_target(const corpus::Utterance& utt,
                                    const tagcodec::Vocabulary& vocab, LossMode loss) {
  tagcodec::LabelSequence labels = tagcodec::encode(corpus::target_text(utt, vocab), vocab);
  if (loss == LossMode::kStar) return tagcodec::star_map(labels, vocab);
  return labels;
}

DevMetrics evaluate(const Checkpoint& ckpt, const std::vector<corpus::Utterance>& utterances,
                    const corpus::SpeakerTable& speakers, LossMode loss, SpeakerMode speaker,
                    int batch_size) {
  if (batch_size < 1) throw Error(ErrorKind::kUsage, "batch_size must be >= 1");
  return evaluate_examples(ckpt, prepare(ckpt, utterances, speakers, loss, speaker), batch_size,
                           1);
}

StageResult train_stage(const Checkpoint& ckpt, const Dataset& data, const TrainConfig& cfg,
                        const std::string& stage, const EpochCallback& on_epoch) {
  using Clock = std::chrono::steady_clock;
  cfg.validate(ckpt.vocabulary);
  model::validate(ckpt);
  StageResult result;
  result.checkpoint = ckpt;
  result.last = ckpt;
  if (cfg.epochs == 0) return result;

  const auto train = prepare(ckpt, data.train, data.speakers, cfg.loss, cfg.speaker);
  const auto dev = prepare(ckpt, data.dev, data.speakers, cfg.loss, cfg.speaker);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].feasible) keep.push_back(i);
  }
  result.skipped = static_cast<long>(train.size() - keep.size());
  if (keep.empty()) {
    throw Error(ErrorKind::kData, "stage " + stage + ": no feasible training utterance (" +
                                      std::to_string(train.size()) + " skipped)");
  }
  auto batches = make_batches(train, keep, cfg.batch_size);

  Checkpoint current = ckpt;
  current.meta.stage = stage;
  model::quantize_to_float(current.parameters);
  model::ParameterSet velocity = current.parameters.zeros_like();
  const model::BackwardOptions backward_options{cfg.frozen_layers};
  std::mt19937_64 rng(cfg.seed);

  auto start = Clock::now();
  auto record = [&](int epoch, double train_loss, double lr) {
    const DevMetrics m = evaluate_examples(current, dev, std::max(cfg.batch_size, 32), cfg.jobs);
    EpochRecord r{stage, epoch, train_loss, m.cer, m.loss, lr, result.skipped,
                  std::chrono::duration<double>(Clock::now() - start).count()};
    result.history.push_back(r);
    if (on_epoch) on_epoch(r);
    if (epoch == 0 || better(r, result.history[static_cast<std::size_t>(result.best_epoch)])) {
      result.best_epoch = epoch;
      result.checkpoint = current;
    }
  };
  record(0, std::numeric_limits<double>::quiet_NaN(), cfg.learning_rate);

  double lr = cfg.learning_rate;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    start = Clock::now();
    std::shuffle(batches.begin(), batches.end(), rng);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      std::vector<const FeatureSequence*> ptrs;
      for (std::size_t i : batch) ptrs.push_back(&train[i].features);
      model::ForwardCache cache;
      const auto outs = model::forward_batch(current, ptrs, model::Mode::kTrain, &cache);
      std::vector<Eigen::MatrixXd> grads(batch.size());
      std::vector<double> losses(batch.size());
      const double scale = 1.0 / static_cast<double>(batch.size());
      parallel_for(batch.size(), cfg.jobs, [&](std::size_t b) {
        auto r = ctc::ctc_loss(outs[b], train[batch[b]].target);
        losses[b] = r.loss;
        grads[b] = std::move(r.grad) * scale;
      });
      for (double l : losses) {
        if (!std::isfinite(l)) {
          throw Error(ErrorKind::kDivergence,
                      "stage " + stage + ": non-finite loss in epoch " + std::to_string(epoch));
        }
        loss_sum += l;
      }
      model::ParameterSet g = model::backward_batch(current, cache, grads, backward_options);
      const double norm = clip_gradients(g, cfg.clip_norm);
      if (!std::isfinite(norm)) {
        throw Error(ErrorKind::kDivergence,
                    "stage " + stage + ": non-finite gradient in epoch " + std::to_string(epoch));
      }
      auto& params = current.parameters.tensors();
      auto& vel = velocity.tensors();
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].trainable) continue;
        vel[k].value = cfg.momentum * vel[k].value - lr * g.tensors()[k].value;
        params[k].value += vel[k].value;
      }
      model::update_running_stats(current, cache, cfg.bn_momentum);
      model::quantize_to_float(current.parameters);
    }
    record(epoch, loss_sum / static_cast<double>(keep.size()), lr);
    lr *= cfg.lr_decay;
  }

  result.last = current;
  result.last.meta.epoch = cfg.epochs;
  result.checkpoint.meta.stage = stage;
  result.checkpoint.meta.epoch = result.best_epoch;
  result.checkpoint.meta.dev_history.clear();
  for (const auto& r : result.history) result.checkpoint.meta.dev_history.push_back(r.dev_cer);
  return result;
}

SatResult sat_protocol(const Checkpoint& ckpt, const Dataset& data, const TrainConfig& cfg,
                       const std::string& stage, const EpochCallback& on_epoch) {
  cfg.validate(ckpt.vocabulary);
  const int existing = ckpt.config.speaker_vector_dim;
  if (existing > 0 && cfg.speaker_vector_dim != existing) {
    throw Error(ErrorKind::kConfiguration,
                "model speaker dim " + std::to_string(existing) + " differs from config " +
                    std::to_string(cfg.speaker_vector_dim));
  }
  if (cfg.speaker_vector_dim > 0) {
    for (const auto* split : {&data.train, &data.dev}) {
      for (const auto& u : *split) {
        speaker_vector(u, data.speakers, cfg.speaker_vector_dim, SpeakerMode::kAdapted);
      }
    }
  }
  SatResult out;
  TrainConfig phase1 = cfg;
  phase1.speaker = SpeakerMode::kZeroPretrain;
  out.phase1 = train_stage(ckpt, data, phase1, stage + "/phase1", on_epoch);
  if (cfg.speaker_vector_dim == 0) {
    out.checkpoint = out.phase1.checkpoint;
    return out;
  }
  const Checkpoint start = existing > 0
                               ? out.phase1.checkpoint
                               : model::attach_speaker_input(out.phase1.checkpoint,
                                                             cfg.speaker_vector_dim);
  TrainConfig phase2 = cfg;
  phase2.speaker = SpeakerMode::kAdapted;
  phase2.epochs = cfg.adapt_epochs < 0 ? cfg.epochs : cfg.adapt_epochs;
  if (cfg.adapt_learning_rate > 0.0) phase2.learning_rate = cfg.adapt_learning_rate;
  phase2.seed = cfg.seed + 1;
  out.phase2 = train_stage(start, data, phase2, stage + "/phase2", on_epoch);
  out.checkpoint = out.phase2.checkpoint;
  return out;
}

void check_chain(const ChainSpec& spec) {
  if (spec.stages.empty()) throw Error(ErrorKind::kConfiguration, "chain has no stages");
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& s = spec.stages[i];
    s.config.validate(s.vocabulary);
    if (i == 0 && !spec.init) continue;
    const std::u32string prev = i == 0 ? spec.init->vocabulary.base_graphemes()
                                       : spec.stages[i - 1].vocabulary.base_graphemes();
    const std::u32string next = s.vocabulary.base_graphemes();
    if (next.size() < prev.size() || next.compare(0, prev.size(), prev) != 0) {
      throw Error(ErrorKind::kTransferMismatch,
                  "stage " + s.name + ": grapheme block does not extend " +
                      (i == 0 ? std::string("the initial checkpoint's")
                              : "stage " + spec.stages[i - 1].name + "'s"));
    }
  }
}

ChainResult run_chain(const ChainSpec& spec, const std::optional<std::filesystem::path>& out_dir,
                      const EpochCallback& on_epoch) {
  check_chain(spec);
  std::ofstream log;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    log.open(*out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log) throw Error(ErrorKind::kIo, "cannot write " + (*out_dir / "train_log.jsonl").string());
  }
  auto callback = [&](const EpochRecord& r) {
    if (log.is_open()) log << to_json(r).dump() << '\n' << std::flush;
    if (on_epoch) on_epoch(r);
  };
  ChainResult result;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& s = spec.stages[i];
    Checkpoint start;
    if (i == 0 && spec.init) {
      start = spec.init->vocabulary == s.vocabulary
                  ? *spec.init
                  : model::replace_output_layer(*spec.init, s.vocabulary, spec.seed);
    } else if (i == 0) {
      model::NetworkConfig net = spec.network;
      net.output_units = static_cast<int>(s.vocabulary.size());
      start = model::initialize(net, s.vocabulary, spec.seed);
    } else {
      start = model::replace_output_layer(result.stages.back().checkpoint, s.vocabulary,
                                          spec.seed + i);
    }
    if (s.config.speaker == SpeakerMode::kAdapted) {
      SatResult sat = sat_protocol(start, s.data, s.config, s.name, callback);
      StageResult merged = sat.phase1;
      merged.history.insert(merged.history.end(), sat.phase2.history.begin(),
                            sat.phase2.history.end());
      merged.checkpoint = sat.checkpoint;
      merged.best_epoch = sat.checkpoint.meta.epoch;
      result.stages.push_back(std::move(merged));
    } else {
      result.stages.push_back(train_stage(start, s.data, s.config, s.name, callback));
    }
    if (out_dir) {
      model::save_checkpoint(result.stages.back().checkpoint,
                             *out_dir / (std::to_string(i) + "_" + s.name + ".ckpt"));
    }
  }
  return result;
}

}  // namespace ctcslu::train
