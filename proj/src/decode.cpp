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


#include "ctcslu/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "json.hpp"

#include "ctcslu/error.hpp"
#include "ctcslu/utf8.hpp"

namespace ctcslu::decode {
namespace {

struct PrefixHash {
  std::size_t operator()(const LabelSequence& key) const noexcept {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (int v : key) {
      h ^= static_cast<std::size_t>(static_cast<unsigned>(v));
      h *= 0x100000001b3ULL;
    }
    return h;
  }
};

bool is_symbol_token(std::u32string_view t) {
  return t.size() == 1 && ((t[0] >= tagcodec::kClosingSymbol && t[0] <= tagcodec::kLastOpeningSymbol) ||
                           t[0] == tagcodec::kStarSymbol);
}

class Scorer {
 public:
  Scorer(const Vocabulary& vocab, const lm::NgramModel* model, const BeamConfig& cfg)
      : vocab_(vocab), model_(model), cfg_(cfg) {}

  void start(Hypothesis& h) const {
    h.lm_context.clear();
    if (model_) h.lm_context.push_back(model_->sentence_start());
  }

  // Updates token state for `unit` appended to the prefix.
  void advance(Hypothesis& h, int unit) const {
    const tagcodec::Unit& u = vocab_.unit(unit);
    if (u.kind == tagcodec::UnitKind::kGrapheme && unit != vocab_.separator()) {
      h.pending.push_back(u.symbol);
      return;
    }
    close_word(h);
    if (u.kind != tagcodec::UnitKind::kGrapheme) emit(h, utf8::encode(u.symbol));
  }

  void finish(Hypothesis& h) const {
    close_word(h);
    if (model_) h.lm_score += model_->log_prob(h.lm_context, model_->sentence_end());
  }

  double score(const Hypothesis& h) const {
    return h.log_mass() + cfg_.lm_weight * h.lm_score + cfg_.insertion_bonus * h.tokens;
  }

 private:
  void close_word(Hypothesis& h) const {
    if (h.pending.empty()) return;
    emit(h, utf8::encode(h.pending));
    h.pending.clear();
  }

  void emit(Hypothesis& h, const std::string& token) const {
    ++h.tokens;
    if (!model_) return;
    const int id = model_->token_id(token);
    h.lm_score += model_->log_prob(h.lm_context, id);
    h.lm_context.push_back(id);
    const std::size_t keep = static_cast<std::size_t>(std::max(model_->order() - 1, 0));
    if (h.lm_context.size() > keep) {
      h.lm_context.erase(h.lm_context.begin(),
                         h.lm_context.end() - static_cast<std::ptrdiff_t>(keep));
    }
  }

  const Vocabulary& vocab_;
  const lm::NgramModel* model_;
  const BeamConfig& cfg_;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.prefix < b.prefix;
}

}  // namespace

void BeamConfig::validate() const {
  if (width < 1) throw Error(ErrorKind::kDecodeConfig, "beam width must be at least 1");
  if (!std::isfinite(lm_weight) || lm_weight < 0.0) {
    throw Error(ErrorKind::kDecodeConfig, "lm weight must be finite and non-negative");
  }
  if (!std::isfinite(insertion_bonus)) {
    throw Error(ErrorKind::kDecodeConfig, "insertion bonus must be finite");
  }
}

LabelSequence best_path(const LogProbMatrix& p) {
  std::vector<int> path(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index t = 0; t < p.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index v = 1; v < p.cols(); ++v) {
      if (p(t, v) > p(t, best)) best = v;
    }
    path[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return ctc::collapse(path);
}

std::u32string greedy_decode(const LogProbMatrix& p, const Vocabulary& vocab) {
  if (static_cast<std::size_t>(p.cols()) != vocab.size()) {
    throw Error(ErrorKind::kShape, "log-prob columns do not match the vocabulary");
  }
  const LabelSequence labels = best_path(p);
  return vocab.render(labels);
}

void check_lm_compatibility(const Vocabulary& vocab, const lm::NgramModel& model) {
  for (int id = 1; id < static_cast<int>(vocab.size()); ++id) {
    const tagcodec::Unit& u = vocab.unit(id);
    if (u.kind == tagcodec::UnitKind::kGrapheme) continue;
    if (!model.find(utf8::encode(u.symbol))) {
      throw Error(ErrorKind::kDecodeConfig, "language model lacks vocabulary symbol " +
                                                utf8::code_point_label(u.symbol));
    }
  }
  for (std::size_t i = 0; i < model.vocabulary_size(); ++i) {
    const std::string& token = model.token(static_cast<int>(i));
    std::u32string decoded;
    try {
      decoded = utf8::decode(token);
    } catch (const Error&) {
      continue;
    }
    if (is_symbol_token(decoded) && !vocab.index_of(decoded[0])) {
      throw Error(ErrorKind::kDecodeConfig, "language model symbol " +
                                                utf8::code_point_label(decoded[0]) +
                                                " is not in the vocabulary");
    }
  }
}

std::vector<Hypothesis> beam_search(const LogProbMatrix& p, const Vocabulary& vocab,
                                    const lm::NgramModel* model, const BeamConfig& cfg,
                                    bool* pruned) {
  cfg.validate();
  if (pruned) *pruned = false;
  if (static_cast<std::size_t>(p.cols()) != vocab.size()) {
    throw Error(ErrorKind::kShape, "log-prob columns do not match the vocabulary");
  }
  if (model) check_lm_compatibility(vocab, *model);
  const Scorer scorer(vocab, model, cfg);
  const int units = static_cast<int>(p.cols());
  const std::size_t width = static_cast<std::size_t>(cfg.width);

  std::vector<Hypothesis> beam(1);
  beam[0].log_pb = 0.0;
  scorer.start(beam[0]);

  for (Eigen::Index t = 0; t < p.rows(); ++t) {
    std::vector<Hypothesis> next;
    std::unordered_map<LabelSequence, std::size_t, PrefixHash> where;
    auto slot = [&](const LabelSequence& prefix, const Hypothesis& parent, int unit) -> Hypothesis& {
      auto [it, inserted] = where.try_emplace(prefix, next.size());
      if (inserted) {
        Hypothesis h;
        h.prefix = prefix;
        h.lm_context = parent.lm_context;
        h.lm_score = parent.lm_score;
        h.tokens = parent.tokens;
        h.pending = parent.pending;
        if (unit >= 0) scorer.advance(h, unit);
        next.push_back(std::move(h));
      }
      return next[it->second];
    };
    for (const Hypothesis& h : beam) {
      const double mass = h.log_mass();
      {
        Hypothesis& same = slot(h.prefix, h, -1);
        same.log_pb = ctc::log_add(same.log_pb, mass + p(t, 0));
        if (!h.prefix.empty()) {
          same.log_pnb = ctc::log_add(same.log_pnb, h.log_pnb + p(t, h.prefix.back()));
        }
      }
      LabelSequence extended = h.prefix;
      extended.push_back(0);
      for (int c = 1; c < units; ++c) {
        extended.back() = c;
        const double from = (!h.prefix.empty() && h.prefix.back() == c) ? h.log_pb : mass;
        if (from == ctc::kLogZero) continue;
        Hypothesis& child = slot(extended, h, c);
        child.log_pnb = ctc::log_add(child.log_pnb, from + p(t, c));
      }
    }
    for (Hypothesis& h : next) h.score = scorer.score(h);
    if (next.size() > width) {
      if (pruned) *pruned = true;
      std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(width), next.end(),
                        better);
      next.resize(width);
    }
    beam = std::move(next);
  }
  for (Hypothesis& h : beam) {
    scorer.finish(h);
    h.score = scorer.score(h);
  }
  std::sort(beam.begin(), beam.end(), better);
  return beam;
}

DecodeResult beam_decode(const LogProbMatrix& p, const Vocabulary& vocab,
                         const lm::NgramModel* model, const BeamConfig& cfg) {
  cfg.validate();
  Hypothesis best;
  if (!cfg.monotone) {
    best = beam_search(p, vocab, model, cfg).front();
  } else {
    BeamConfig run = cfg;
    for (run.width = 1; run.width <= cfg.width; ++run.width) {
      bool pruned = false;
      Hypothesis h = std::move(beam_search(p, vocab, model, run, &pruned).front());
      if (run.width == 1 || better(h, best)) best = std::move(h);
      if (!pruned) break;
    }
  }
  DecodeResult out;
  out.labels = best.prefix;
  out.text = vocab.render(out.labels);
  out.score = best.score;
  return out;
}

LabelSequence brute_force_decode(const LogProbMatrix& p) {
  const int labels = static_cast<int>(p.cols()) - 1;
  const int frames = static_cast<int>(p.rows());
  double candidates = 0.0;
  for (int len = 0; len <= frames; ++len) candidates += std::pow(labels, len);
  if (candidates > 1e6) throw Error(ErrorKind::kOracleTooLarge, "too many label sequences");
  LabelSequence best;
  double best_loss = std::numeric_limits<double>::infinity();
  LabelSequence current;
  // Depth-first in lexicographic order so the first strict improvement wins ties.
  auto visit = [&](auto&& self) -> void {
    if (ctc::min_frames(current) <= frames) {
      const double loss = ctc::ctc_loss(p, current).loss;
      if (loss < best_loss) {
        best_loss = loss;
        best = current;
      }
    }
    if (static_cast<int>(current.size()) == frames) return;
    for (int c = 1; c <= labels; ++c) {
      current.push_back(c);
      self(self);
      current.pop_back();
    }
  };
  visit(visit);
  return best;
}

void write_hypotheses(const std::filesystem::path& path,
                      const std::vector<HypothesisRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["text"] = r.text;
    j["score"] = r.score;
    out << j.dump() << "\n";
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

std::vector<HypothesisRecord> read_hypotheses(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<HypothesisRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      HypothesisRecord r;
      r.id = j.at("id").get<std::string>();
      r.text = j.at("text").get<std::string>();
      const auto& score = j.at("score");
      r.score = score.is_null() ? ctc::kLogZero : score.get<double>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ctcslu::decode
