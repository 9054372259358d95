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


#ifndef CTCSLU_CORPUS_HPP_
#define CTCSLU_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ctcslu/tagcodec.hpp"

namespace ctcslu::corpus {

struct Utterance {
  std::string id;
  std::string speaker;
  std::u32string transcript;
  tagcodec::BioTranscript bio;
  Eigen::MatrixXd features;  // frames x dim
};

// Speaker id -> adaptation vector, ordered by id.
using SpeakerTable = std::map<std::string, Eigen::VectorXd>;

// Feature archive: per matrix a little-endian uint32 row count and column
// count, then rows*cols float32 values in row-major order.
std::uint64_t append_matrix(std::ostream& out, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(std::istream& in, std::uint64_t offset);

// Writes `<dir>/<split>.jsonl` and `<dir>/<split>.features`. The chunked
// field of each record is rendered with `inventory`.
void write_split(const std::filesystem::path& dir, std::string_view split,
                 const std::vector<Utterance>& utterances,
                 const tagcodec::TagInventory& inventory);
// Reads a split written by write_split; feature files resolve relative to
// the JSONL file. Throws kParse naming the line of a malformed record.
std::vector<Utterance> read_split(const std::filesystem::path& jsonl);

void write_speakers(const std::filesystem::path& path, const SpeakerTable& table);
SpeakerTable read_speakers(const std::filesystem::path& path);

// Labels for tags outside `inventory` become O.
tagcodec::BioTranscript restrict_bio(const tagcodec::BioTranscript& bio,
                                     const tagcodec::TagInventory& inventory);

// Training target: the chunked transcript restricted to the vocabulary's tags
// when it has any, the plain transcript otherwise.
std::u32string target_text(const Utterance& utt, const tagcodec::Vocabulary& vocab);

// Separator first, then every other transcript character in code-point order.
std::u32string grapheme_inventory(const std::vector<Utterance>& utterances);

struct CorpusStats {
  long utterances = 0;
  long frames = 0;
  long chunks = 0;
  long speakers = 0;
  std::map<std::string, long> concept_counts;
};

CorpusStats corpus_stats(const std::vector<Utterance>& utterances);

}  // namespace ctcslu::corpus

#endif  // CTCSLU_CORPUS_HPP_
