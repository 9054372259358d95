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


#include "ctcslu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "ctcslu/utf8.hpp"

namespace ctcslu::metrics {
namespace {

constexpr double kInfinity = std::numeric_limits<double>::infinity();

char32_t fold(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 0x20;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
  if (c == 0x152 || c == 0x178) return c == 0x152 ? 0x153 : 0xFF;
  return c;
}

double ratio(long num, long den) {
  if (den > 0) return static_cast<double>(num) / static_cast<double>(den);
  return num > 0 ? kInfinity : 0.0;
}

std::string format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatch: return "match";
    case OpKind::kSubstitution: return "substitution";
    case OpKind::kDeletion: return "deletion";
    case OpKind::kInsertion: return "insertion";
  }
  return "unknown";
}

std::string normalize_value(std::string_view value) {
  std::u32string v = tagcodec::normalize_separators(utf8::decode(value));
  for (char32_t& c : v) c = fold(c);
  return utf8::encode(v);
}

bool chunks_equal(const ConceptChunk& a, const ConceptChunk& b, MatchMode mode) {
  if (a.tag != b.tag) return false;
  return mode == MatchMode::kTag || normalize_value(a.value) == normalize_value(b.value);
}

Alignment align_concepts(const std::vector<ConceptChunk>& ref,
                         const std::vector<ConceptChunk>& hyp, MatchMode mode) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::vector<long>> d(n + 1, std::vector<long>(m + 1, 0));
  std::vector<std::vector<char>> eq(n + 1, std::vector<char>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<long>(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<long>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      eq[i][j] = chunks_equal(ref[i - 1], hyp[j - 1], mode);
      d[i][j] = std::min({d[i - 1][j - 1] + (eq[i][j] ? 0 : 1), d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  Alignment ops;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (eq[i][j] ? 0 : 1)) {
      ops.push_back({eq[i][j] ? OpKind::kMatch : OpKind::kSubstitution, ref[i - 1], hyp[j - 1]});
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ops.push_back({OpKind::kDeletion, ref[i - 1], std::nullopt});
      --i;
    } else {
      ops.push_back({OpKind::kInsertion, std::nullopt, hyp[j - 1]});
      --j;
    }
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  matches += o.matches;
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  return *this;
}

ErrorCounts count_ops(const Alignment& alignment) {
  ErrorCounts c;
  for (const auto& op : alignment) {
    switch (op.kind) {
      case OpKind::kMatch: ++c.matches; break;
      case OpKind::kSubstitution: ++c.substitutions; break;
      case OpKind::kDeletion: ++c.deletions; break;
      case OpKind::kInsertion: ++c.insertions; break;
    }
  }
  return c;
}

double error_rate(const ErrorCounts& counts) { return ratio(counts.errors(), counts.ref()); }

double concept_error_rate(const Alignment& tag_alignment) {
  return error_rate(count_ops(tag_alignment));
}

double concept_value_error_rate(const Alignment& value_alignment) {
  return error_rate(count_ops(value_alignment));
}

Prf prf_from_counts(long correct, long ref, long hyp) {
  Prf p;
  p.correct = correct;
  p.ref = ref;
  p.hyp = hyp;
  if (ref == 0 && hyp == 0) {
    p.precision = p.recall = p.f = 1.0;
    p.both_empty = true;
    return p;
  }
  p.precision = hyp > 0 ? static_cast<double>(correct) / static_cast<double>(hyp) : 0.0;
  p.recall = ref > 0 ? static_cast<double>(correct) / static_cast<double>(ref) : 0.0;
  p.f = p.precision + p.recall > 0.0
            ? 2.0 * p.precision * p.recall / (p.precision + p.recall)
            : 0.0;
  return p;
}

Prf entity_prf(const std::vector<ConceptChunk>& ref, const std::vector<ConceptChunk>& hyp,
               MatchMode mode) {
  const ErrorCounts c = count_ops(align_concepts(ref, hyp, mode));
  return prf_from_counts(c.matches, static_cast<long>(ref.size()), static_cast<long>(hyp.size()));
}

long edit_distance(std::u32string_view a, std::u32string_view b) {
  std::vector<long> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = static_cast<long>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    long diag = row[0];
    row[0] = static_cast<long>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const long up = row[j];
      row[j] = std::min({diag + (a[i - 1] == b[j - 1] ? 0 : 1), up + 1, row[j - 1] + 1});
      diag = up;
    }
  }
  return row[b.size()];
}

double char_error_rate(std::u32string_view ref, std::u32string_view hyp) {
  return ratio(edit_distance(ref, hyp), static_cast<long>(ref.size()));
}

Eigen::MatrixXd ConfusionMatrix::normalized() const {
  Eigen::MatrixXd out = counts;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double total = out.row(r).sum();
    if (total > 0.0) out.row(r) /= total;
  }
  return out;
}

ConfusionMatrix confusion_matrix(const std::vector<Alignment>& tag_alignments, int top_k) {
  struct RowStats {
    long errors = 0;
    long total = 0;
  };
  std::map<std::string, RowStats> stats;
  for (const auto& a : tag_alignments) {
    for (const auto& op : a) {
      if (!op.ref) continue;
      RowStats& s = stats[op.ref->tag];
      ++s.total;
      if (op.kind != OpKind::kMatch) ++s.errors;
    }
  }
  std::vector<std::string> rows;
  for (const auto& [tag, s] : stats) rows.push_back(tag);
  std::stable_sort(rows.begin(), rows.end(), [&](const std::string& a, const std::string& b) {
    const RowStats& x = stats.at(a);
    const RowStats& y = stats.at(b);
    if (x.errors != y.errors) return x.errors > y.errors;
    return x.total > y.total;
  });
  if (top_k > 0 && rows.size() > static_cast<std::size_t>(top_k)) {
    rows.resize(static_cast<std::size_t>(top_k));
  }
  std::map<std::string, std::size_t> row_index;
  for (std::size_t i = 0; i < rows.size(); ++i) row_index.emplace(rows[i], i);

  std::vector<std::string> columns = rows;
  std::set<std::string> extra;
  for (const auto& a : tag_alignments) {
    for (const auto& op : a) {
      if (!op.hyp || row_index.contains(op.hyp->tag)) continue;
      if (op.kind == OpKind::kInsertion || (op.ref && row_index.contains(op.ref->tag))) {
        extra.insert(op.hyp->tag);
      }
    }
  }
  columns.insert(columns.end(), extra.begin(), extra.end());
  std::map<std::string, std::size_t> col_index;
  for (std::size_t i = 0; i < columns.size(); ++i) col_index.emplace(columns[i], i);

  ConfusionMatrix cm;
  cm.rows = rows;
  cm.columns = columns;
  const auto R = static_cast<Eigen::Index>(rows.size());
  const auto C = static_cast<Eigen::Index>(columns.size());
  cm.counts = Eigen::MatrixXd::Zero(R + 1, C + 1);
  for (const auto& a : tag_alignments) {
    for (const auto& op : a) {
      if (op.kind == OpKind::kInsertion) {
        cm.counts(R, static_cast<Eigen::Index>(col_index.at(op.hyp->tag))) += 1.0;
        continue;
      }
      const auto r = row_index.find(op.ref->tag);
      if (r == row_index.end()) continue;
      const auto row = static_cast<Eigen::Index>(r->second);
      if (op.kind == OpKind::kDeletion) {
        cm.counts(row, C) += 1.0;
      } else {
        cm.counts(row, static_cast<Eigen::Index>(col_index.at(op.hyp->tag))) += 1.0;
      }
    }
  }
  return cm;
}

void write_confusion_tsv(std::ostream& out, const ConfusionMatrix& matrix, bool normalized) {
  const Eigen::MatrixXd m = normalized ? matrix.normalized() : matrix.counts;
  out << "reference";
  for (const auto& c : matrix.columns) out << '\t' << c;
  out << "\t<deletion>\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << (r < static_cast<Eigen::Index>(matrix.rows.size())
                ? matrix.rows[static_cast<std::size_t>(r)]
                : std::string("<insertion>"));
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << '\t' << format(m(r, c));
    out << '\n';
  }
}

FrequencyTable cer_by_frequency(const std::vector<Alignment>& tag_alignments,
                                const std::map<std::string, long>& training_counts) {
  std::map<std::string, FrequencyRecord> per;
  for (const auto& a : tag_alignments) {
    for (const auto& op : a) {
      if (op.ref) {
        FrequencyRecord& r = per[op.ref->tag];
        ++r.test_count;
        if (op.kind != OpKind::kMatch) ++r.errors;
      } else {
        ++per[op.hyp->tag].errors;
      }
    }
  }
  FrequencyTable table;
  for (auto& [tag, r] : per) {
    if (r.test_count == 0) {
      table.unattributed_insertions += r.errors;
      continue;
    }
    r.tag = tag;
    const auto it = training_counts.find(tag);
    r.training_count = it == training_counts.end() ? 0 : it->second;
    r.rate = ratio(r.errors, r.test_count);
    table.records.push_back(r);
  }
  for (const auto& [tag, count] : training_counts) {
    const auto it = per.find(tag);
    if (it == per.end() || it->second.test_count == 0) table.omitted.push_back(tag);
  }
  std::stable_sort(table.records.begin(), table.records.end(),
                   [](const FrequencyRecord& a, const FrequencyRecord& b) {
                     return a.training_count < b.training_count;
                   });
  return table;
}

void write_frequency_tsv(std::ostream& out, const FrequencyTable& table) {
  out << "concept\ttraining_count\ttest_count\terrors\tconcept_error_rate\n";
  for (const auto& r : table.records) {
    out << r.tag << '\t' << r.training_count << '\t' << r.test_count << '\t' << r.errors
        << '\t' << format(r.rate) << '\n';
  }
  for (const auto& tag : table.omitted) out << "# omitted (absent from test): " << tag << '\n';
  if (table.unattributed_insertions > 0) {
    out << "# insertions of concepts absent from test: " << table.unattributed_insertions << '\n';
  }
}

Evaluator::Evaluator(tagcodec::TagInventory inventory, MatchMode prf_mode)
    : inventory_(std::move(inventory)), prf_mode_(prf_mode) {}

void Evaluator::add(std::u32string_view ref_chunked, std::u32string_view hyp_chunked) {
  tagcodec::ChunkParseStats stats;
  const auto ref = tagcodec::parse_chunks(ref_chunked, inventory_, &stats);
  const auto hyp = tagcodec::parse_chunks(hyp_chunked, inventory_, &stats);
  acc_.parse_repairs += stats.repairs();
  Alignment tags = align_concepts(ref, hyp, MatchMode::kTag);
  const Alignment values = align_concepts(ref, hyp, MatchMode::kTagValue);
  const ErrorCounts tc = count_ops(tags);
  const ErrorCounts vc = count_ops(values);
  acc_.tag_counts += tc;
  acc_.value_counts += vc;
  prf_correct_ += prf_mode_ == MatchMode::kTag ? tc.matches : vc.matches;
  const std::u32string ref_plain = tagcodec::strip_tags(ref_chunked, inventory_);
  const std::u32string hyp_plain = tagcodec::strip_tags(hyp_chunked, inventory_);
  acc_.char_errors += edit_distance(ref_plain, hyp_plain);
  acc_.char_ref += static_cast<long>(ref_plain.size());
  ++acc_.utterances;
  tag_alignments_.push_back(std::move(tags));
}

MetricsReport Evaluator::report() const {
  MetricsReport r = acc_;
  r.concept_error_rate = error_rate(r.tag_counts);
  r.concept_value_error_rate = error_rate(r.value_counts);
  r.char_error_rate = ratio(r.char_errors, r.char_ref);
  r.prf = prf_from_counts(prf_correct_, r.value_counts.ref(), r.value_counts.hyp());
  return r;
}

nlohmann::ordered_json to_json(const MetricsReport& report) {
  auto counts = [](const ErrorCounts& c) {
    nlohmann::ordered_json j;
    j["matches"] = c.matches;
    j["substitutions"] = c.substitutions;
    j["deletions"] = c.deletions;
    j["insertions"] = c.insertions;
    j["reference"] = c.ref();
    j["hypothesis"] = c.hyp();
    return j;
  };
  auto number = [](double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json("inf");
  };
  const ErrorCounts& t = report.tag_counts;
  const double errors = static_cast<double>(t.errors());
  nlohmann::ordered_json j;
  j["utterances"] = report.utterances;
  j["precision"] = report.prf.precision;
  j["recall"] = report.prf.recall;
  j["f_measure"] = report.prf.f;
  j["concept_error_rate"] = number(report.concept_error_rate);
  j["concept_value_error_rate"] = number(report.concept_value_error_rate);
  j["char_error_rate"] = number(report.char_error_rate);
  j["concept_counts"] = counts(t);
  j["value_counts"] = counts(report.value_counts);
  j["error_proportions"] = {
      {"deletion", errors > 0 ? static_cast<double>(t.deletions) / errors : 0.0},
      {"substitution", errors > 0 ? static_cast<double>(t.substitutions) / errors : 0.0},
      {"insertion", errors > 0 ? static_cast<double>(t.insertions) / errors : 0.0}};
  j["char_errors"] = report.char_errors;
  j["char_reference"] = report.char_ref;
  j["parse_repairs"] = report.parse_repairs;
  return j;
}

std::string render(const MetricsReport& report) {
  const ErrorCounts& t = report.tag_counts;
  const double errors = static_cast<double>(t.errors());
  auto share = [&](long n) { return format(errors > 0 ? static_cast<double>(n) / errors : 0.0); };
  std::ostringstream out;
  auto line = [&](const std::string& name, const std::string& value) {
    out << name << std::string(name.size() < 28 ? 28 - name.size() : 1, ' ') << value << '\n';
  };
  line("utterances", std::to_string(report.utterances));
  line("precision", format(report.prf.precision));
  line("recall", format(report.prf.recall));
  line("F-measure", format(report.prf.f));
  line("concept error rate", format(report.concept_error_rate));
  line("concept value error rate", format(report.concept_value_error_rate));
  line("character error rate", format(report.char_error_rate));
  line("reference concepts", std::to_string(t.ref()));
  line("substitutions", std::to_string(t.substitutions) + " (" + share(t.substitutions) + ")");
  line("deletions", std::to_string(t.deletions) + " (" + share(t.deletions) + ")");
  line("insertions", std::to_string(t.insertions) + " (" + share(t.insertions) + ")");
  return out.str();
}

}  // namespace ctcslu::metrics
