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
#include <map>
#include <random>
#include <sstream>

#include "ctcslu/error.hpp"
#include "ctcslu/lm.hpp"
#include "doctest.h"

namespace ctcslu::lm {
namespace {

double prob(const NgramModel& m, const Sentence& ctx, std::string_view w) {
  return std::exp(m.log_prob(ctx, w));
}

std::vector<Sentence> random_corpus(std::mt19937_64& rng, int sentences, int alphabet) {
  std::uniform_int_distribution<int> len(0, 7);
  std::uniform_int_distribution<int> tok(0, alphabet - 1);
  std::vector<Sentence> corpus;
  for (int i = 0; i < sentences; ++i) {
    Sentence s;
    const int n = len(rng);
    for (int j = 0; j < n; ++j) {
      const int t = tok(rng);
      s.push_back(t == 0 ? "\xe2\x98\x85" : std::string(1, static_cast<char>('a' + t)));
    }
    corpus.push_back(s);
  }
  return corpus;
}

double context_mass(const NgramModel& m, const std::vector<int>& ctx) {
  double total = 0.0;
  for (int t : m.predictable_tokens()) total += std::exp(m.log_prob(ctx, t));
  return total;
}

TEST_CASE("Witten-Bell on a two-token corpus") {
  const NgramModel m = NgramModel::estimate({{"a", "b"}}, 2);
  CHECK(prob(m, {}, "a") == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(prob(m, {}, "b") == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(prob(m, {}, "</s>") == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(prob(m, {}, "<unk>") == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(prob(m, {"a"}, "b") == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(prob(m, {"<s>"}, "a") == doctest::Approx(0.5).epsilon(1e-12));
  // Unseen continuation of a seen context: bow(a) * P(</s>) = 0.6 / 6.
  CHECK(prob(m, {"a"}, "</s>") == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(prob(m, {"a"}, "zzz") == doctest::Approx(0.3).epsilon(1e-12));
  const auto uni = m.entries(1);
  for (const auto& e : uni) {
    if (m.token(e.tokens[0]) == "a") CHECK(std::exp(e.backoff) == doctest::Approx(0.6));
  }
  CHECK(m.sentence_log_prob({"a", "b"}) == doctest::Approx(std::log(0.5 * 0.5 * 0.5)));
}

TEST_CASE("unigram model is discounted relative frequency") {
  const NgramModel m = NgramModel::estimate({{"a", "a", "b"}}, 1);
  CHECK(prob(m, {}, "a") == doctest::Approx(2.0 / 7).epsilon(1e-12));
  CHECK(prob(m, {"b", "a"}, "a") == doctest::Approx(2.0 / 7).epsilon(1e-12));
  CHECK(prob(m, {}, "<unk>") == doctest::Approx(3.0 / 7).epsilon(1e-12));
  CHECK(m.ngram_count(1) == 5);
}

TEST_CASE("star and tag symbols are ordinary tokens") {
  const auto tokens = tokenize(U"book \uE001three\uE000 ★ double");
  const Sentence expected{"book", "\xee\x80\x81", "three", "\xee\x80\x80", "\xe2\x98\x85",
                          "double"};
  CHECK(tokens == expected);
  CHECK(tokenize(U"  ").empty());
  CHECK(tokenize(U"★★") == Sentence{"\xe2\x98\x85", "\xe2\x98\x85"});
  const NgramModel m = NgramModel::estimate({tokens}, 3);
  CHECK(m.find("\xe2\x98\x85").has_value());
  CHECK(prob(m, {}, "\xe2\x98\x85") > 0.0);
}

TEST_CASE("seen 4-gram uses the discounted maximum-likelihood estimate") {
  std::mt19937_64 rng(4);
  const auto corpus = random_corpus(rng, 300, 4);
  const NgramModel m = NgramModel::estimate(corpus, 4);
  std::map<Sentence, std::map<std::string, int>> follow;
  for (const auto& s : corpus) {
    Sentence padded{"<s>"};
    padded.insert(padded.end(), s.begin(), s.end());
    padded.push_back("</s>");
    for (std::size_t i = 3; i < padded.size(); ++i) {
      follow[Sentence(padded.begin() + i - 3, padded.begin() + i)][padded[i]]++;
    }
  }
  int checked = 0;
  for (const auto& [ctx, next] : follow) {
    int total = 0;
    for (const auto& [w, c] : next) total += c;
    const double types = static_cast<double>(next.size());
    for (const auto& [w, c] : next) {
      CHECK(prob(m, ctx, w) == doctest::Approx(c / (total + types)).epsilon(1e-12));
      ++checked;
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("unseen contexts back off without penalty") {
  const NgramModel m = NgramModel::estimate({{"a", "b", "c"}, {"b", "c", "a"}, {"d", "c", "d"}}, 3);
  CHECK(m.log_prob(Sentence{"q", "c"}, "a") == doctest::Approx(m.log_prob(Sentence{"c"}, "a")));
  CHECK(m.log_prob(Sentence{"c", "c"}, "b") == doctest::Approx(m.log_prob(Sentence{"c"}, "b")));
  // Seen context, unseen word: the lower-order estimate times the back-off weight.
  const auto bc = m.entries(2);
  double bow = 0.0;
  for (const auto& e : bc) {
    if (m.token(e.tokens[0]) == "b" && m.token(e.tokens[1]) == "c") bow = e.backoff;
  }
  CHECK(std::exp(bow) == doctest::Approx(0.75));
  CHECK(m.log_prob(Sentence{"b", "c"}, "b") ==
        doctest::Approx(bow + m.log_prob(Sentence{"c"}, "b")));
}

TEST_CASE("every context distribution sums to one") {
  std::mt19937_64 rng(5);
  for (int order : {1, 2, 3, 4}) {
    const NgramModel m = NgramModel::estimate(random_corpus(rng, 200, 6), order);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(m.vocabulary_size()) - 1);
    std::uniform_int_distribution<int> len(0, 4);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<int> ctx;
      const int n = len(rng);
      for (int i = 0; i < n; ++i) ctx.push_back(pick(rng));
      CHECK(std::abs(context_mass(m, ctx) - 1.0) <= 1e-6);
    }
    for (int e = 1; e < order; ++e) {
      for (const auto& entry : m.entries(e)) {
        CHECK(std::abs(context_mass(m, entry.tokens) - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("more evidence for a seen n-gram never lowers its probability") {
  std::mt19937_64 rng(6);
  auto corpus = random_corpus(rng, 80, 4);
  const NgramModel before = NgramModel::estimate(corpus, 3);
  int checked = 0;
  for (const auto& e : before.entries(3)) {
    Sentence h{before.token(e.tokens[0]), before.token(e.tokens[1])};
    const std::string w = before.token(e.tokens[2]);
    if (h[0] == "<s>") continue;
    Sentence extra = h;
    if (w != "</s>") extra.push_back(w);
    Sentence padded{"<s>"};
    padded.insert(padded.end(), extra.begin(), extra.end());
    padded.push_back("</s>");
    int occurrences = 0;
    for (std::size_t i = 0; i + 2 < padded.size(); ++i) {
      occurrences += padded[i] == h[0] && padded[i + 1] == h[1];
    }
    if (occurrences != 1) continue;
    auto grown = corpus;
    grown.push_back(extra);
    const NgramModel after = NgramModel::estimate(grown, 3);
    CHECK(after.log_prob(h, w) > before.log_prob(h, w));
    if (++checked == 40) break;
  }
  CHECK(checked >= 20);
}

TEST_CASE("ARPA text round trip") {
  std::mt19937_64 rng(7);
  const NgramModel m = NgramModel::estimate(random_corpus(rng, 150, 5), 4);
  std::stringstream first;
  m.write_arpa(first);
  const std::string text = first.str();
  CHECK(text.rfind("\\data\\\nngram 1=", 0) == 0);
  std::istringstream in(text);
  const NgramModel back = NgramModel::read_arpa(in);
  CHECK(back.order() == 4);
  for (int n = 1; n <= 4; ++n) {
    const auto a = m.entries(n);
    const auto b = back.entries(n);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(std::exp(a[i].log_prob) - std::exp(b[i].log_prob)) <= 1e-6);
      CHECK(std::abs(std::exp(a[i].backoff) - std::exp(b[i].backoff)) <= 1e-6);
    }
  }
  std::stringstream second;
  back.write_arpa(second);
  CHECK(second.str() == text);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(back.vocabulary_size()) - 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<int> ctx{pick(rng), pick(rng), pick(rng)};
    CHECK(std::abs(context_mass(back, ctx) - 1.0) <= 1e-6);
  }
}

ErrorKind parse_error(const std::string& text, std::string* message = nullptr) {
  std::istringstream in(text);
  try {
    NgramModel::read_arpa(in);
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  return ErrorKind::kUsage;
}

TEST_CASE("malformed ARPA files") {
  const std::string good =
      "\\data\\\nngram 1=3\n\n\\1-grams:\n-0.5\t<s>\n-0.3\ta\n-0.4\t</s>\n\n\\end\\\n";
  std::istringstream in(good);
  CHECK(NgramModel::read_arpa(in).find("a").has_value());
  std::string message;
  CHECK(parse_error("\\data\\\nngram 1=4\n\n\\1-grams:\n-0.5\t<s>\n-0.3\ta\n-0.4\t</s>\n\n\\end\\\n",
                    &message) == ErrorKind::kParse);
  CHECK(message.find("line 8") != std::string::npos);
  CHECK(parse_error("\\dada\\\n") == ErrorKind::kParse);
  CHECK(parse_error("\\data\\\nngram 2=1\n") == ErrorKind::kParse);
  CHECK(parse_error("\\data\\\nngram 1=1\n\n\\2-grams:\n-1\ta\n\\end\\\n") == ErrorKind::kParse);
  CHECK(parse_error("\\data\\\nngram 1=1\n\n\\1-grams:\n-1\ta\tb\tc\n\n\\end\\\n") ==
        ErrorKind::kParse);
  CHECK(parse_error("\\data\\\nngram 1=1\n\n\\1-grams:\nxyz\ta\n\n\\end\\\n") == ErrorKind::kParse);
  CHECK(parse_error("\\data\\\nngram 1=1\n\n\\1-grams:\n-1\ta\n") == ErrorKind::kParse);
  CHECK(parse_error("\\data\\\nngram 1=1\nngram 2=1\n\n\\1-grams:\n-1\ta\n\n\\2-grams:\n-1\ta\tq\n"
                    "\n\\end\\\n") == ErrorKind::kParse);
}

TEST_CASE("estimation errors and unknown words") {
  CHECK_THROWS_AS(NgramModel::estimate({}, 3), Error);
  try {
    NgramModel::estimate({}, 3);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
  }
  CHECK_THROWS_AS(NgramModel::estimate({{"a"}}, 0), Error);
  CHECK_THROWS_AS(NgramModel::estimate({{"a b"}}, 2), Error);
  const NgramModel m = NgramModel::estimate({{"a"}}, 2);
  CHECK(m.token_id("never-seen") == m.unknown());
  CHECK(std::isfinite(m.log_prob(Sentence{"never"}, "seen")));
  const NgramModel empty_sentence = NgramModel::estimate({{}}, 2);
  CHECK(prob(empty_sentence, {"<s>"}, "</s>") == doctest::Approx(0.5));
}

}  // namespace
}  // namespace ctcslu::lm
