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


#ifndef CTCSLU_SYNTHCORPUS_HPP_
#define CTCSLU_SYNTHCORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "ctcslu/corpus.hpp"
#include "ctcslu/tagcodec.hpp"

namespace ctcslu::synth {

// Words separated by single spaces; "{tag}" marks a slot filled from the
// lexicon.
struct Template {
  std::string pattern;
  double weight = 1.0;
  std::string task = "primary";  // "primary" or "auxiliary"
};

struct GeneratorSpec {
  std::uint64_t seed = 1;
  std::string alphabet = " abcdefghijklmnopqrstuvwxyz";
  std::vector<std::string> primary_tags;
  std::vector<std::string> auxiliary_tags;
  std::map<std::string, std::vector<std::string>> lexicon;
  std::vector<Template> templates;
  int frames_per_char = 2;
  int feature_dim = 16;
  double prototype_scale = 1.0;
  int speakers = 12;
  int heldout_speakers = 4;  // used only for dev and test
  double speaker_offset_scale = 0.25;
  double noise_std = 0.3;

  static GeneratorSpec desk_default();
  // Throws kSpec on unknown slot tags, empty lexicon entries, characters
  // outside the alphabet or invalid sizes.
  void validate() const;

  tagcodec::TagInventory primary() const;
  tagcodec::TagInventory auxiliary() const;
  tagcodec::TagInventory combined() const;

  nlohmann::ordered_json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
  static GeneratorSpec read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

struct SplitSizes {
  int train = 2000;
  int dev = 200;
  int test = 200;
};

struct GeneratedCorpus {
  std::vector<corpus::Utterance> train;
  std::vector<corpus::Utterance> dev;
  std::vector<corpus::Utterance> test;
  corpus::SpeakerTable speakers;
  Eigen::MatrixXd prototypes;  // one row per alphabet character
  std::u32string alphabet;
  std::vector<int> train_templates;  // template index per training utterance
};

GeneratedCorpus generate(const GeneratorSpec& spec, const SplitSizes& sizes);

// Writes spec.json, tags_{primary,auxiliary,combined}.txt, the three splits,
// speakers.csv and prototypes.csv under `dir`.
void write_corpus(const std::filesystem::path& dir, const GeneratorSpec& spec,
                  const GeneratedCorpus& corpus);

struct Prototypes {
  std::u32string alphabet;
  Eigen::MatrixXd vectors;
};
Prototypes read_prototypes(const std::filesystem::path& path);

struct SeparabilityResult {
  double frame_accuracy = 0.0;
  double transcript_accuracy = 0.0;
};

// Idealized decoder: removes each speaker's offset, classifies every frame by
// its nearest prototype and reads one character per block of
// `frames_per_char` frames by majority vote.
SeparabilityResult separability_oracle(const std::vector<corpus::Utterance>& utterances,
                                       const Prototypes& prototypes,
                                       const corpus::SpeakerTable& speakers,
                                       int frames_per_char);

}  // namespace ctcslu::synth

#endif  // CTCSLU_SYNTHCORPUS_HPP_
