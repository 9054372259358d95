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


#ifndef CTCSLU_EXPERIMENT_HPP_
#define CTCSLU_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctcslu/decode.hpp"
#include "ctcslu/model.hpp"
#include "ctcslu/train.hpp"
#include "json.hpp"

namespace ctcslu::experiment {

namespace fs = std::filesystem;

struct StageConfig {
  std::string name;
  fs::path corpus;      // directory holding train.jsonl, dev.jsonl and optionally speakers.csv
  fs::path vocabulary;  // vocabulary file
  train::TrainConfig train;

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct DecodeSettings {
  int beam = 0;  // 0 selects greedy decoding
  std::optional<fs::path> lm;
  double alpha = 0.0;
  double beta = 0.0;
  bool monotone = true;

  friend bool operator==(const DecodeSettings&, const DecodeSettings&) = default;
};

// Relative paths are resolved against `base_dir`, the directory of the
// config file.
struct ExperimentConfig {
  fs::path base_dir;
  model::NetworkConfig network;  // output_units comes from each stage's vocabulary
  std::uint64_t seed = 1;
  std::optional<fs::path> init_checkpoint;
  std::vector<StageConfig> chain;
  DecodeSettings decode;
  fs::path output_dir = "out";

  // Throws kConfiguration on unknown keys, wrong types or missing fields.
  static ExperimentConfig from_json(const nlohmann::json& j, const fs::path& base_dir = {});
  nlohmann::ordered_json to_json() const;
  static ExperimentConfig read(const fs::path& path);
  void write(const fs::path& path) const;

  fs::path resolve(const fs::path& p) const;
  // Throws kConfiguration unless every referenced input exists and every
  // stage config is valid for its vocabulary.
  void validate() const;

  // Every stage seed becomes `seed + stage index`.
  void override_seed(std::uint64_t seed);
  void override_jobs(int jobs);

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// train.jsonl, dev.jsonl and speakers.csv (when present) of a corpus
// directory.
train::Dataset load_dataset(const fs::path& corpus_dir);

// Loads every stage's corpus and vocabulary.
train::ChainSpec load_chain(const ExperimentConfig& config);

}  // namespace ctcslu::experiment

#endif  // CTCSLU_EXPERIMENT_HPP_
