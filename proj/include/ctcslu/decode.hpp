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


#ifndef CTCSLU_DECODE_HPP_
#define CTCSLU_DECODE_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "ctcslu/ctc.hpp"
#include "ctcslu/lm.hpp"
#include "ctcslu/tagcodec.hpp"

namespace ctcslu::decode {

using ctc::LogProbMatrix;
using tagcodec::LabelSequence;
using tagcodec::Vocabulary;

struct BeamConfig {
  int width = 8;
  double lm_weight = 0.0;         // alpha
  double insertion_bonus = 0.0;   // beta, per emitted token
  // Best result over widths 1..width, so the score never drops as width grows.
  bool monotone = true;
  void validate() const;          // throws kDecodeConfig
};

struct Hypothesis {
  LabelSequence prefix;
  double log_pb = ctc::kLogZero;
  double log_pnb = ctc::kLogZero;
  std::vector<int> lm_context;
  double lm_score = 0.0;  // natural-log LM sum over completed tokens
  int tokens = 0;
  std::u32string pending;  // word not yet closed by a boundary symbol
  double score = ctc::kLogZero;

  double log_mass() const { return ctc::log_add(log_pb, log_pnb); }
};

struct DecodeResult {
  LabelSequence labels;
  std::u32string text;
  double score = 0.0;
};

// Per-frame argmax (ties go to the lowest index), then collapse.
LabelSequence best_path(const LogProbMatrix& p);
std::u32string greedy_decode(const LogProbMatrix& p, const Vocabulary& vocab);

// Throws kDecodeConfig unless every tag/star unit of `vocab` is an LM token
// and every tag/star token of the LM is a unit of `vocab`.
void check_lm_compatibility(const Vocabulary& vocab, const lm::NgramModel& model);

// CTC prefix beam search. Tokens are separator-delimited words plus each
// opening, closing and star symbol; LM scores are added when a token is
// completed and once more for </s> at the end. `model` may be null.
// Returns the final beam of a single run at cfg.width, best first, scores
// including the end closure. `pruned` reports whether any frame dropped
// hypotheses.
std::vector<Hypothesis> beam_search(const LogProbMatrix& p, const Vocabulary& vocab,
                                    const lm::NgramModel* model, const BeamConfig& cfg,
                                    bool* pruned = nullptr);
DecodeResult beam_decode(const LogProbMatrix& p, const Vocabulary& vocab,
                         const lm::NgramModel* model, const BeamConfig& cfg);

// Exhaustive argmax over label sequences of exp(-ctc_loss). Ties go to the
// lexicographically smallest sequence. Throws kOracleTooLarge past 1e6
// candidates.
LabelSequence brute_force_decode(const LogProbMatrix& p);

struct HypothesisRecord {
  std::string id;
  std::string text;  // UTF-8 chunked text
  double score = 0.0;
  friend bool operator==(const HypothesisRecord&, const HypothesisRecord&) = default;
};

// One JSON object per line.
void write_hypotheses(const std::filesystem::path& path,
                      const std::vector<HypothesisRecord>& records);
std::vector<HypothesisRecord> read_hypotheses(const std::filesystem::path& path);

}  // namespace ctcslu::decode

#endif  // CTCSLU_DECODE_HPP_
