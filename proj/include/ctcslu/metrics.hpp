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


#ifndef CTCSLU_METRICS_HPP_
#define CTCSLU_METRICS_HPP_

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "ctcslu/tagcodec.hpp"

namespace ctcslu::metrics {

using tagcodec::ConceptChunk;

enum class OpKind { kMatch, kSubstitution, kDeletion, kInsertion };
enum class MatchMode { kTag, kTagValue };

const char* op_kind_name(OpKind kind);

struct AlignmentOp {
  OpKind kind = OpKind::kMatch;
  std::optional<ConceptChunk> ref;
  std::optional<ConceptChunk> hyp;
};

using Alignment = std::vector<AlignmentOp>;

// Case-folds a chunk value and normalizes its separators.
std::string normalize_value(std::string_view value);
bool chunks_equal(const ConceptChunk& a, const ConceptChunk& b, MatchMode mode);

// Minimum edit distance alignment with unit costs. Among optimal alignments
// the backtrace prefers match, then substitution, deletion, insertion.
Alignment align_concepts(const std::vector<ConceptChunk>& ref,
                         const std::vector<ConceptChunk>& hyp, MatchMode mode);

struct ErrorCounts {
  long matches = 0;
  long substitutions = 0;
  long deletions = 0;
  long insertions = 0;

  long ref() const { return matches + substitutions + deletions; }
  long hyp() const { return matches + substitutions + insertions; }
  long errors() const { return substitutions + deletions + insertions; }
  ErrorCounts& operator+=(const ErrorCounts& o);
  friend bool operator==(const ErrorCounts&, const ErrorCounts&) = default;
};

ErrorCounts count_ops(const Alignment& alignment);

// (S + D + I) / N_ref. An empty reference gives 0 with no errors and
// +infinity otherwise.
double error_rate(const ErrorCounts& counts);
double concept_error_rate(const Alignment& tag_alignment);
double concept_value_error_rate(const Alignment& value_alignment);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
  long correct = 0;
  long ref = 0;
  long hyp = 0;
  bool both_empty = false;  // (1, 1, 1) by convention
};

Prf prf_from_counts(long correct, long ref, long hyp);
Prf entity_prf(const std::vector<ConceptChunk>& ref, const std::vector<ConceptChunk>& hyp,
               MatchMode mode = MatchMode::kTagValue);

long edit_distance(std::u32string_view a, std::u32string_view b);
// Levenshtein distance / |ref|; +infinity for an empty reference with a
// non-empty hypothesis.
double char_error_rate(std::u32string_view ref, std::u32string_view hyp);

// Rows: reference concepts by descending error count (ties by descending
// reference count, then name), truncated to top_k, plus a final insertion
// row. Columns: the row concepts in the same order, then any other
// hypothesis concept, plus a final deletion column.
struct ConfusionMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  Eigen::MatrixXd counts;

  Eigen::MatrixXd normalized() const;  // rows with no events stay zero
};

ConfusionMatrix confusion_matrix(const std::vector<Alignment>& tag_alignments, int top_k = 0);
void write_confusion_tsv(std::ostream& out, const ConfusionMatrix& matrix, bool normalized);

struct FrequencyRecord {
  std::string tag;
  long training_count = 0;
  long test_count = 0;
  long errors = 0;
  double rate = 0.0;
};

struct FrequencyTable {
  std::vector<FrequencyRecord> records;  // sorted by training count, then name
  std::vector<std::string> omitted;      // trained concepts absent from the test references
  long unattributed_insertions = 0;      // inserted tags never seen in the references
};

// Errors per concept: substitutions and deletions of reference chunks with
// that tag plus insertions of hypothesis chunks with that tag.
FrequencyTable cer_by_frequency(const std::vector<Alignment>& tag_alignments,
                                const std::map<std::string, long>& training_counts);
void write_frequency_tsv(std::ostream& out, const FrequencyTable& table);

struct MetricsReport {
  long utterances = 0;
  Prf prf;
  double concept_error_rate = 0.0;
  double concept_value_error_rate = 0.0;
  double char_error_rate = 0.0;
  ErrorCounts tag_counts;
  ErrorCounts value_counts;
  long char_errors = 0;
  long char_ref = 0;
  long parse_repairs = 0;
};

// Accumulates corpus-level metrics over (reference, hypothesis) pairs of
// chunked text.
class Evaluator {
 public:
  explicit Evaluator(tagcodec::TagInventory inventory, MatchMode prf_mode = MatchMode::kTagValue);

  void add(std::u32string_view ref_chunked, std::u32string_view hyp_chunked);
  MetricsReport report() const;
  const std::vector<Alignment>& tag_alignments() const { return tag_alignments_; }

 private:
  tagcodec::TagInventory inventory_;
  MatchMode prf_mode_;
  std::vector<Alignment> tag_alignments_;
  MetricsReport acc_;
  long prf_correct_ = 0;
};

nlohmann::ordered_json to_json(const MetricsReport& report);
// Human-readable table including the error-kind proportions.
std::string render(const MetricsReport& report);

}  // namespace ctcslu::metrics

#endif  // CTCSLU_METRICS_HPP_
