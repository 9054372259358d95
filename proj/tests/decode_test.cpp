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
#include <filesystem>
#include <random>

#include "ctcslu/decode.hpp"
#include "ctcslu/error.hpp"
#include "doctest.h"
#include "test_util.hpp"

namespace ctcslu::decode {
namespace {

using testing::random_log_probs;

LogProbMatrix from_probs(const std::vector<std::vector<double>>& rows) {
  LogProbMatrix p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t v = 0; v < rows[t].size(); ++v) {
      p(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v)) = std::log(rows[t][v]);
    }
  }
  return p;
}

// Frames whose argmax beats every other unit by more than a factor of two.
LogProbMatrix peaked(std::mt19937_64& rng, int frames, int units) {
  std::uniform_int_distribution<int> pick(0, units - 1);
  std::uniform_real_distribution<double> rest(0.0, 1.0);
  LogProbMatrix p(frames, units);
  for (int t = 0; t < frames; ++t) {
    const int top = pick(rng);
    Eigen::VectorXd w(units);
    for (int v = 0; v < units; ++v) w(v) = rest(rng);
    w /= w.sum();
    w *= 0.25;
    w(top) += 0.75;
    for (int v = 0; v < units; ++v) p(t, v) = std::log(w(v));
  }
  return p;
}

TEST_CASE("greedy decoding collapses the best path") {
  const Vocabulary v = Vocabulary::build(U"ab", {}, false);
  const auto p = from_probs({{0.1, 0.8, 0.1}, {0.1, 0.8, 0.1}, {0.8, 0.1, 0.1}, {0.1, 0.1, 0.8}});
  CHECK(greedy_decode(p, v) == U"ab");
  CHECK(greedy_decode(from_probs({{0.9, 0.05, 0.05}, {0.6, 0.2, 0.2}}), v).empty());
  CHECK(best_path(from_probs({{0.2, 0.4, 0.4}})) == LabelSequence{1});
  CHECK(best_path(from_probs({{0.4, 0.4, 0.2}})).empty());
  CHECK_THROWS_AS(greedy_decode(LogProbMatrix::Zero(2, 5), v), Error);
}

TEST_CASE("exhaustive beam equals the posterior argmax") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> frames(1, 5);
  std::uniform_int_distribution<int> units(2, 3);
  const Vocabulary v2 = Vocabulary::build(U"a", {}, false);
  const Vocabulary v3 = Vocabulary::build(U"ab", {}, false);
  BeamConfig cfg;
  cfg.width = 100000;
  for (int trial = 0; trial < 200; ++trial) {
    const int u = units(rng);
    const auto p = random_log_probs(rng, frames(rng), u, 1.5);
    const auto result = beam_decode(p, u == 2 ? v2 : v3, nullptr, cfg);
    const auto oracle = brute_force_decode(p);
    CHECK(result.labels == oracle);
    CHECK(result.score == doctest::Approx(-ctc::ctc_loss(p, oracle).loss).epsilon(1e-12));
  }
}

TEST_CASE("width one matches greedy when every frame has a clear winner") {
  std::mt19937_64 rng(22);
  const Vocabulary v = testing::booking_vocabulary(false);
  BeamConfig cfg;
  cfg.width = 1;
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = peaked(rng, 12, static_cast<int>(v.size()));
    CHECK(beam_decode(p, v, nullptr, cfg).text == greedy_decode(p, v));
  }
}

TEST_CASE("best score does not decrease with beam width") {
  std::mt19937_64 rng(23);
  const Vocabulary v = Vocabulary::build(U"ab ", {}, false);
  const lm::NgramModel model =
      lm::NgramModel::estimate({{"ab", "b"}, {"a", "ab"}, {"b", "b", "a"}}, 3);
  for (int trial = 0; trial < 40; ++trial) {
    const auto p = random_log_probs(rng, 8, static_cast<int>(v.size()), 2.0);
    for (const lm::NgramModel* m : {static_cast<const lm::NgramModel*>(nullptr), &model}) {
      double last = -std::numeric_limits<double>::infinity();
      for (int width : {1, 2, 4, 8, 16}) {
        BeamConfig cfg{width, m ? 0.5 : 0.0, 0.2};
        const double s = beam_decode(p, v, m, cfg).score;
        CHECK(s >= last - 1e-12);
        last = s;
      }
    }
  }
}

TEST_CASE("retained path mass never exceeds one") {
  std::mt19937_64 rng(24);
  const Vocabulary v = testing::booking_vocabulary(true);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_log_probs(rng, 10, static_cast<int>(v.size()), 3.0);
    BeamConfig cfg;
    cfg.width = 32;
    const auto beam = beam_search(p, v, nullptr, cfg);
    double total = 0.0;
    for (const auto& h : beam) total += std::exp(h.log_mass());
    CHECK(total <= 1.0 + 1e-12);
    for (std::size_t i = 0; i < beam.size(); ++i) {
      for (std::size_t j = i + 1; j < beam.size(); ++j) CHECK(beam[i].prefix != beam[j].prefix);
    }
    tagcodec::ChunkParseStats stats;
    CHECK_NOTHROW(tagcodec::parse_chunks(v.render(beam.front().prefix), v.tag_inventory(), &stats));
  }
}

TEST_CASE("a heavily weighted LM overrides the acoustics") {
  const Vocabulary v = Vocabulary::build(U"ab ", {}, false);
  // Units: blank, a, b, separator. Acoustics prefer "a b".
  const auto p = from_probs({{0.1, 0.6, 0.2, 0.1},
                             {0.6, 0.1, 0.2, 0.1},
                             {0.1, 0.1, 0.2, 0.6},
                             {0.1, 0.2, 0.6, 0.1},
                             {0.6, 0.2, 0.1, 0.1}});
  std::vector<lm::Sentence> corpus(100, lm::Sentence{"b", "a"});
  const lm::NgramModel model = lm::NgramModel::estimate(corpus, 2);
  BeamConfig plain;
  plain.width = 16;
  CHECK(beam_decode(p, v, &model, plain).text == U"a b");
  BeamConfig fused = plain;
  fused.lm_weight = 50.0;
  CHECK(beam_decode(p, v, &model, fused).text == U"b a");
}

TEST_CASE("tag symbols are single LM tokens") {
  const Vocabulary v = testing::booking_vocabulary(false);
  const lm::NgramModel model = lm::NgramModel::estimate(
      {lm::tokenize(U"book \uE001three\uE000 rooms")}, 3);
  CHECK_NOTHROW(check_lm_compatibility(v.without_star(), lm::NgramModel::estimate(
                                                             {lm::tokenize(U"\uE001 \uE002 \uE003 "
                                                                           U"\uE004 \uE005 \uE000")},
                                                             2)));
  try {
    check_lm_compatibility(v, model);
    FAIL("expected decode-config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDecodeConfig);
    CHECK(e.exit_code() == 1);
  }
  const Vocabulary plain = Vocabulary::build(U"abc", {}, false);
  CHECK_THROWS_AS(check_lm_compatibility(plain, model), Error);
  const Vocabulary starred = testing::booking_vocabulary(true);
  const lm::NgramModel full = lm::NgramModel::estimate(
      {lm::tokenize(U"\uE001 \uE002 \uE003 \uE004 \uE005 \uE000")}, 2);
  CHECK_THROWS_AS(check_lm_compatibility(starred, full), Error);
}

TEST_CASE("beam configuration validation") {
  const Vocabulary v = Vocabulary::build(U"a", {}, false);
  const auto p = from_probs({{0.5, 0.5}});
  CHECK_THROWS_AS(beam_decode(p, v, nullptr, BeamConfig{0, 0.0, 0.0}), Error);
  CHECK_THROWS_AS(beam_decode(p, v, nullptr, BeamConfig{2, -1.0, 0.0}), Error);
  CHECK_THROWS_AS(beam_decode(p, v, nullptr, BeamConfig{2, 0.0, std::nan("")}), Error);
}

TEST_CASE("hypothesis files") {
  const auto path = std::filesystem::temp_directory_path() / "ctcslu_hyp_test.jsonl";
  const std::vector<HypothesisRecord> records{{"u1", "book \xee\x80\x81three\xee\x80\x80", -1.5},
                                              {"u2", "", -0.25}};
  write_hypotheses(path, records);
  CHECK(read_hypotheses(path) == records);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace ctcslu::decode
