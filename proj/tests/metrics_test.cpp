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

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "ctcslu/metrics.hpp"
#include "doctest.h"
#include "test_util.hpp"

namespace ctcslu::metrics {
namespace {

ConceptChunk chunk(std::string tag, std::string value = "v") {
  return ConceptChunk{std::move(tag), std::move(value), 0};
}

std::vector<ConceptChunk> tags(const std::string& letters) {
  std::vector<ConceptChunk> out;
  for (char c : letters) out.push_back(chunk(std::string(1, c)));
  return out;
}

std::vector<OpKind> kinds(const Alignment& a) {
  std::vector<OpKind> out;
  for (const auto& op : a) out.push_back(op.kind);
  return out;
}

long recursive_distance(const std::vector<ConceptChunk>& a, std::size_t i,
                        const std::vector<ConceptChunk>& b, std::size_t j, MatchMode mode) {
  if (i == a.size()) return static_cast<long>(b.size() - j);
  if (j == b.size()) return static_cast<long>(a.size() - i);
  return std::min({recursive_distance(a, i + 1, b, j + 1, mode) + (chunks_equal(a[i], b[j], mode) ? 0 : 1),
                   recursive_distance(a, i + 1, b, j, mode) + 1,
                   recursive_distance(a, i, b, j + 1, mode) + 1});
}

TEST_CASE("alignment fixtures") {
  using K = OpKind;
  CHECK(kinds(align_concepts(tags("AB"), tags("AB"), MatchMode::kTag)) ==
        std::vector<K>{K::kMatch, K::kMatch});
  CHECK(kinds(align_concepts(tags("AB"), tags("A"), MatchMode::kTag)) ==
        std::vector<K>{K::kMatch, K::kDeletion});
  const auto sub = align_concepts(tags("ABC"), tags("AXC"), MatchMode::kTag);
  CHECK(kinds(sub) == std::vector<K>{K::kMatch, K::kSubstitution, K::kMatch});
  CHECK(sub[1].ref->tag == "B");
  CHECK(sub[1].hyp->tag == "X");
  CHECK(kinds(align_concepts({}, tags("A"), MatchMode::kTag)) == std::vector<K>{K::kInsertion});
  CHECK(align_concepts({}, {}, MatchMode::kTag).empty());
  // Substitution is preferred over a deletion/insertion pair of equal cost.
  CHECK(kinds(align_concepts(tags("A"), tags("B"), MatchMode::kTag)) ==
        std::vector<K>{K::kSubstitution});
}

TEST_CASE("concept error rate fixtures") {
  CHECK(concept_error_rate(align_concepts(tags("ABCD"), tags("ABCD"), MatchMode::kTag)) == 0.0);
  CHECK(concept_error_rate(align_concepts(tags("ABCD"), tags("AXC"), MatchMode::kTag)) == 0.5);
  CHECK(concept_error_rate(align_concepts(tags("ABC"), {}, MatchMode::kTag)) == 1.0);
  CHECK(std::isinf(concept_error_rate(align_concepts({}, tags("A"), MatchMode::kTag))));
  CHECK(concept_error_rate(align_concepts({}, {}, MatchMode::kTag)) == 0.0);
}

TEST_CASE("concept value error rate fixtures") {
  const std::vector<ConceptChunk> ref{chunk("a", "one"), chunk("b", "two"), chunk("c", "three"),
                                      chunk("d", "four")};
  auto hyp = ref;
  hyp[2].value = "tree";
  CHECK(concept_value_error_rate(align_concepts(ref, hyp, MatchMode::kTagValue)) == 0.25);
  CHECK(concept_error_rate(align_concepts(ref, hyp, MatchMode::kTag)) == 0.0);
  CHECK(concept_value_error_rate(align_concepts(ref, ref, MatchMode::kTagValue)) == 0.0);
  hyp[2].value = "  THREE ";
  CHECK(concept_value_error_rate(align_concepts(ref, hyp, MatchMode::kTagValue)) == 0.0);
  CHECK(normalize_value("  New   York ") == "new york");
  CHECK(normalize_value("\xc3\x89T\xc3\x89") == "\xc3\xa9t\xc3\xa9");
}

TEST_CASE("precision, recall and F-measure fixtures") {
  const std::vector<ConceptChunk> ref{chunk("a", "1"), chunk("b", "2"), chunk("c", "3"),
                                      chunk("d", "4")};
  const std::vector<ConceptChunk> hyp{chunk("a", "1"), chunk("c", "3"), chunk("e", "5")};
  const Prf p = entity_prf(ref, hyp);
  CHECK(p.precision == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(p.recall == 0.5);
  CHECK(p.f == doctest::Approx(4.0 / 7).epsilon(1e-15));
  const Prf perfect = entity_prf(ref, ref);
  CHECK((perfect.precision == 1.0 && perfect.recall == 1.0 && perfect.f == 1.0));
  const Prf empty = entity_prf({}, {});
  CHECK((empty.precision == 1.0 && empty.recall == 1.0 && empty.f == 1.0));
  CHECK(empty.both_empty);
  const Prf none = entity_prf(ref, {});
  CHECK((none.precision == 0.0 && none.recall == 0.0 && none.f == 0.0));
  // Tag-only mode ignores values.
  auto wrong_values = ref;
  for (auto& c : wrong_values) c.value = "x";
  CHECK(entity_prf(ref, wrong_values, MatchMode::kTag).f == 1.0);
  CHECK(entity_prf(ref, wrong_values, MatchMode::kTagValue).f == 0.0);
}

TEST_CASE("character error rate fixtures") {
  CHECK(char_error_rate(U"abc", U"abc") == 0.0);
  CHECK(char_error_rate(U"abc", U"axc") == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(std::isinf(char_error_rate(U"", U"a")));
  CHECK(char_error_rate(U"", U"") == 0.0);
  CHECK(edit_distance(U"kitten", U"sitting") == 3);
}

TEST_CASE("alignment cost is minimal and counts are consistent") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> len(0, 6);
  std::uniform_int_distribution<int> sym(0, 3);
  std::uniform_int_distribution<int> val(0, 1);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<ConceptChunk> a, b;
    for (int i = len(rng); i > 0; --i) a.push_back(chunk(std::string(1, 'A' + sym(rng)), std::to_string(val(rng))));
    for (int i = len(rng); i > 0; --i) b.push_back(chunk(std::string(1, 'A' + sym(rng)), std::to_string(val(rng))));
    for (MatchMode mode : {MatchMode::kTag, MatchMode::kTagValue}) {
      const ErrorCounts c = count_ops(align_concepts(a, b, mode));
      CHECK(c.errors() == recursive_distance(a, 0, b, 0, mode));
      CHECK(c.ref() == static_cast<long>(a.size()));
      CHECK(c.hyp() == static_cast<long>(b.size()));
    }
    if (!a.empty()) {
      CHECK(concept_value_error_rate(align_concepts(a, b, MatchMode::kTagValue)) >=
            concept_error_rate(align_concepts(a, b, MatchMode::kTag)));
    }
  }
}

TEST_CASE("F-measure equals set intersection when the hypothesis only drops or replaces") {
  std::mt19937_64 rng(32);
  std::uniform_int_distribution<int> action(0, 2);
  for (int trial = 0; trial < 500; ++trial) {
    const auto ref = tags("ABCDEFGH");
    std::vector<ConceptChunk> hyp;
    long shared = 0;
    for (const auto& c : ref) {
      switch (action(rng)) {
        case 0:
          hyp.push_back(c);
          ++shared;
          break;
        case 1:
          hyp.push_back(chunk(std::string(1, static_cast<char>('a' + hyp.size()))));
          break;
        default:
          break;
      }
    }
    const Prf p = entity_prf(ref, hyp);
    CHECK(p.correct == shared);
    CHECK(p.recall == doctest::Approx(shared / 8.0));
  }
}

TEST_CASE("confusion matrix on a constructed fixture") {
  // Reference/hypothesis tag sequences per utterance.
  std::vector<Alignment> alignments{
      align_concepts(tags("AB"), tags("AB"), MatchMode::kTag),
      align_concepts(tags("ABC"), tags("ACC"), MatchMode::kTag),  // B -> C
      align_concepts(tags("CC"), tags("C"), MatchMode::kTag),     // C deleted
      align_concepts(tags("A"), tags("AD"), MatchMode::kTag),     // D inserted
  };
  const ConfusionMatrix cm = confusion_matrix(alignments);
  // Errors: B 1 (of 2), C 1 (of 3), A 0 (of 3).
  CHECK(cm.rows == std::vector<std::string>{"C", "B", "A"});
  CHECK(cm.columns == std::vector<std::string>{"C", "B", "A", "D"});
  Eigen::MatrixXd expected(4, 5);
  expected << 2, 0, 0, 0, 1,  //
      1, 1, 0, 0, 0,          //
      0, 0, 3, 0, 0,          //
      0, 0, 0, 1, 0;
  CHECK(cm.counts == expected);
  const Eigen::MatrixXd n = cm.normalized();
  for (Eigen::Index r = 0; r < n.rows(); ++r) CHECK(n.row(r).sum() == doctest::Approx(1.0));
  CHECK(n(0, 4) == doctest::Approx(1.0 / 3));

  const ConfusionMatrix top = confusion_matrix(alignments, 1);
  CHECK(top.rows == std::vector<std::string>{"C"});
  CHECK(top.counts.rows() == 2);

  std::ostringstream tsv;
  write_confusion_tsv(tsv, cm, false);
  CHECK(tsv.str().rfind("reference\tC\tB\tA\tD\t<deletion>\nC\t2\t0\t0\t0\t1\n", 0) == 0);
  CHECK(tsv.str().find("<insertion>\t0\t0\t0\t1\t0\n") != std::string::npos);
}

TEST_CASE("perfect utterance gives a diagonal confusion matrix") {
  const ConfusionMatrix cm = confusion_matrix({align_concepts(tags("ABCA"), tags("ABCA"), MatchMode::kTag)});
  const Eigen::Index k = static_cast<Eigen::Index>(cm.rows.size());
  CHECK(k == 3);
  CHECK(cm.counts.topLeftCorner(k, k).isDiagonal());
  CHECK(cm.counts.col(k).isZero());
  CHECK(cm.counts.row(k).isZero());
}

TEST_CASE("error rate by training frequency") {
  std::vector<Alignment> alignments{
      align_concepts(tags("ABC"), tags("AXC"), MatchMode::kTag),
      align_concepts(tags("AA"), tags("A"), MatchMode::kTag),
      align_concepts(tags("C"), tags("CY"), MatchMode::kTag),
  };
  const std::map<std::string, long> training{{"A", 50}, {"B", 3}, {"C", 10}, {"Z", 7}};
  const FrequencyTable table = cer_by_frequency(alignments, training);
  REQUIRE(table.records.size() == 3);
  CHECK(table.records[0].tag == "B");
  CHECK(table.records[0].rate == 1.0);
  CHECK(table.records[1].tag == "C");
  CHECK(table.records[1].rate == 0.0);
  CHECK(table.records[2].tag == "A");
  CHECK(table.records[2].rate == doctest::Approx(1.0 / 3));
  CHECK(table.omitted == std::vector<std::string>{"Z"});
  CHECK(table.unattributed_insertions == 1);
  ErrorCounts total;
  for (const auto& a : alignments) total += count_ops(a);
  long events = table.unattributed_insertions;
  for (const auto& r : table.records) events += r.errors;
  CHECK(events == total.errors());
  std::ostringstream tsv;
  write_frequency_tsv(tsv, table);
  CHECK(tsv.str().find("B\t3\t1\t1\t1\n") != std::string::npos);
}

TEST_CASE("evaluator on identical and constructed pairs") {
  const auto inv = testing::booking_inventory();
  Evaluator same(inv);
  same.add(U"book \uE001three\uE000 rooms in \uE002Paris\uE000", U"book \uE001three\uE000 rooms in \uE002Paris\uE000");
  const MetricsReport r = same.report();
  CHECK(r.concept_error_rate == 0.0);
  CHECK(r.concept_value_error_rate == 0.0);
  CHECK(r.prf.f == 1.0);
  CHECK(r.char_error_rate == 0.0);

  Evaluator ev(inv);
  ev.add(U"\uE001three\uE000 in \uE002Paris\uE000 \uE003tomorrow\uE000 for \uE004Anna\uE000",
         U"\uE001tree\uE000 in \uE003Paris\uE000 \uE003tomorrow\uE000 \uE005Acme\uE000");
  const MetricsReport e = ev.report();
  // Tags: amount ok, location->time, time ok, person->organization.
  CHECK(e.tag_counts == ErrorCounts{2, 2, 0, 0});
  CHECK(e.concept_error_rate == 0.5);
  CHECK(e.concept_value_error_rate == 0.75);
  CHECK(e.prf.precision == 0.25);
  const auto j = to_json(e);
  CHECK(j["error_proportions"]["substitution"] == 1.0);
  CHECK(j["concept_counts"]["reference"] == 4);
  const std::string text = render(e);
  CHECK(text.find("substitutions") != std::string::npos);
  CHECK(text.find("insertions") != std::string::npos);
}

}  // namespace
}  // namespace ctcslu::metrics
