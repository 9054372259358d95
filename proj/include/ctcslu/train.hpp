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


#ifndef CTCSLU_TRAIN_HPP_
#define CTCSLU_TRAIN_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctcslu/corpus.hpp"
#include "ctcslu/model.hpp"
#include "json.hpp"

namespace ctcslu::train {

enum class LossMode { kPlain, kStar };
enum class SpeakerMode { kNone, kZeroPretrain, kAdapted };

const char* loss_mode_name(LossMode m);
const char* speaker_mode_name(SpeakerMode m);

struct TrainConfig {
  int batch_size = 16;
  int epochs = 10;
  double learning_rate = 1e-2;
  double lr_decay = 0.85;  // multiplier applied after every epoch
  double momentum = 0.9;
  double clip_norm = 5.0;
  double bn_momentum = 0.1;
  std::uint64_t seed = 1;
  LossMode loss = LossMode::kPlain;
  SpeakerMode speaker = SpeakerMode::kNone;
  int speaker_vector_dim = 0;
  int adapt_epochs = -1;             // phase 2 of speaker adaptation; -1 means `epochs`
  double adapt_learning_rate = 0.0;  // 0 means `learning_rate`
  std::vector<std::string> frozen_layers;
  int jobs = 1;

  // Throws kConfiguration; star mode needs a star unit in `vocab`.
  void validate(const tagcodec::Vocabulary& vocab) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Dataset {
  std::vector<corpus::Utterance> train;
  std::vector<corpus::Utterance> dev;
  corpus::SpeakerTable speakers;
};

struct EpochRecord {
  std::string stage;
  int epoch = 0;  // 0 is the model before any update
  double train_loss = 0.0;
  double dev_cer = 0.0;
  double dev_loss = 0.0;
  double learning_rate = 0.0;
  long skipped = 0;
  double wall_seconds = 0.0;
};

nlohmann::ordered_json to_json(const EpochRecord& r);

using EpochCallback = std::function<void(const EpochRecord&)>;

struct StageResult {
  model::Checkpoint checkpoint;  // best dev character error rate
  model::Checkpoint last;        // after the final epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  long skipped = 0;  // infeasible training utterances
};

struct DevMetrics {
  double cer = 0.0;   // label edit distance over reference length
  double loss = 0.0;  // mean CTC loss over feasible utterances
  long feasible = 0;
  long total = 0;
};

// Greedy character error rate and mean CTC loss of `ckpt` on `utterances`,
// targets built for its vocabulary under `loss`. Speaker vectors are zero
// unless `speaker` is kAdapted.
DevMetrics evaluate(const model::Checkpoint& ckpt, const std::vector<corpus::Utterance>& utterances,
                    const corpus::SpeakerTable& speakers, LossMode loss, SpeakerMode speaker,
                    int batch_size = 32);

// Scales `grads` so that its global norm is at most `bound`; returns the norm
// before clipping.
double clip_gradients(model::ParameterSet& grads, double bound);

// Target labels of `utt` for `vocab`, star-mapped in star mode.
tagcodec::LabelSequence make_target(const corpus::Utterance& utt,
                                    const tagcodec::Vocabulary& vocab, LossMode loss);

// Momentum SGD over length-sorted batches. Returns the lowest dev character
// error rate checkpoint (ties broken by dev loss, then earlier epoch).
StageResult train_stage(const model::Checkpoint& ckpt, const Dataset& data,
                        const TrainConfig& cfg, const std::string& stage = "stage",
                        const EpochCallback& on_epoch = {});

struct SatResult {
  StageResult phase1;
  StageResult phase2;
  model::Checkpoint checkpoint;
};

// Zero-vector pretraining, then attach_speaker_input and fine-tuning with the
// table's vectors.
SatResult sat_protocol(const model::Checkpoint& ckpt, const Dataset& data,
                       const TrainConfig& cfg, const std::string& stage = "sat",
                       const EpochCallback& on_epoch = {});

struct StageSpec {
  std::string name;
  Dataset data;
  tagcodec::Vocabulary vocabulary;
  TrainConfig config;
};

struct ChainSpec {
  model::NetworkConfig network;  // output_units is taken from each stage
  std::uint64_t seed = 1;
  std::vector<StageSpec> stages;
  // When set, the first stage starts from this checkpoint (its output layer
  // replaced unless the vocabulary already matches) instead of a fresh one.
  std::optional<model::Checkpoint> init;
};

// Throws kTransferMismatch unless each stage's grapheme block extends the
// previous one.
void check_chain(const ChainSpec& spec);

struct ChainResult {
  std::vector<StageResult> stages;
};

// Stage i+1 starts from replace_output_layer of stage i's result. With an
// output directory, every stage checkpoint is written as
// "<index>_<name>.ckpt" and every epoch record appended to train_log.jsonl.
ChainResult run_chain(const ChainSpec& spec,
                      const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                      const EpochCallback& on_epoch = {});

}  // namespace ctcslu::train

#endif  // CTCSLU_TRAIN_HPP_
