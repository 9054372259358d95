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
#include <set>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctcslu/corpus.hpp"
#include "ctcslu/error.hpp"
#include "ctcslu/synthcorpus.hpp"
#include "doctest.h"

namespace ctcslu::synth {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctcslu_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kUsage;
}

TEST_CASE("noiseless single-speaker corpus repeats prototypes exactly") {
  GeneratorSpec spec = GeneratorSpec::desk_default();
  spec.noise_std = 0.0;
  spec.speakers = 1;
  spec.heldout_speakers = 0;
  spec.speaker_offset_scale = 0.0;
  spec.frames_per_char = 3;
  const GeneratedCorpus c = generate(spec, {20, 2, 2});
  for (const auto& u : c.train) {
    REQUIRE(u.features.rows() == static_cast<Eigen::Index>(u.transcript.size()) * 3);
    for (Eigen::Index t = 0; t < u.features.rows(); ++t) {
      const auto k = c.alphabet.find(u.transcript[static_cast<std::size_t>(t / 3)]);
      CHECK(u.features.row(t) == c.prototypes.row(static_cast<Eigen::Index>(k)));
    }
  }
}

TEST_CASE("same seed gives byte-identical files") {
  const GeneratorSpec spec = GeneratorSpec::desk_default();
  const fs::path a = scratch("a");
  const fs::path b = scratch("b");
  write_corpus(a, spec, generate(spec, {50, 10, 10}));
  write_corpus(b, spec, generate(spec, {50, 10, 10}));
  for (const char* f : {"spec.json", "train.jsonl", "train.features", "dev.jsonl", "test.features",
                        "speakers.csv", "prototypes.csv", "tags_combined.txt"}) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  GeneratorSpec other = spec;
  other.seed = 2;
  const fs::path c = scratch("c");
  write_corpus(c, other, generate(other, {50, 10, 10}));
  CHECK(slurp(a / "train.features") != slurp(c / "train.features"));
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("per-speaker feature means differ by the speaker offsets") {
  GeneratorSpec spec = GeneratorSpec::desk_default();
  spec.speakers = 2;
  spec.heldout_speakers = 0;
  spec.speaker_offset_scale = 1.0;
  const GeneratedCorpus c = generate(spec, {400, 1, 1});
  std::map<std::string, Eigen::VectorXd> sum;
  std::map<std::string, long> n;
  for (const auto& u : c.train) {
    auto& s = sum.try_emplace(u.speaker, Eigen::VectorXd::Zero(spec.feature_dim)).first->second;
    for (Eigen::Index t = 0; t < u.features.rows(); ++t) {
      const auto k = static_cast<Eigen::Index>(c.alphabet.find(u.transcript[static_cast<std::size_t>(t / spec.frames_per_char)]));
      s += (u.features.row(t) - c.prototypes.row(k)).transpose();
      ++n[u.speaker];
    }
  }
  REQUIRE(sum.size() == 2);
  const Eigen::VectorXd m0 = sum["spk000"] / static_cast<double>(n["spk000"]);
  const Eigen::VectorXd m1 = sum["spk001"] / static_cast<double>(n["spk001"]);
  const Eigen::VectorXd expected = c.speakers.at("spk000") - c.speakers.at("spk001");
  CHECK((m0 - m1 - expected).cwiseAbs().maxCoeff() < 0.02);
  CHECK(expected.norm() > 1.0);
}

TEST_CASE("generated sentences parse without repairs") {
  const GeneratorSpec spec = GeneratorSpec::desk_default();
  const auto inv = spec.combined();
  const GeneratedCorpus c = generate(spec, {1000, 50, 50});
  for (const auto& u : c.train) {
    const auto chunked = tagcodec::bio_to_chunk(u.bio, inv);
    tagcodec::ChunkParseStats stats;
    const auto chunks = tagcodec::parse_chunks(chunked.text, inv, &stats);
    CHECK(stats.repairs() == 0);
    CHECK(tagcodec::chunk_to_bio(chunked, inv) == u.bio);
    CHECK(tagcodec::strip_tags(chunked.text, inv) == u.transcript);
  }
}

TEST_CASE("held-out speakers only appear in dev and test") {
  const GeneratorSpec spec = GeneratorSpec::desk_default();
  const GeneratedCorpus c = generate(spec, {300, 60, 60});
  std::set<std::string> train, held;
  for (const auto& u : c.train) train.insert(u.speaker);
  for (const auto& u : c.dev) held.insert(u.speaker);
  for (const auto& u : c.test) held.insert(u.speaker);
  CHECK(train.size() == static_cast<std::size_t>(spec.speakers - spec.heldout_speakers));
  CHECK(held.size() == static_cast<std::size_t>(spec.heldout_speakers));
  for (const auto& s : held) CHECK_FALSE(train.contains(s));
}

TEST_CASE("corpus statistics") {
  CHECK(corpus::corpus_stats({}).utterances == 0);
  CHECK(corpus::corpus_stats({}).concept_counts.empty());
  const GeneratorSpec spec = GeneratorSpec::desk_default();
  const GeneratedCorpus c = generate(spec, {100, 30, 30});
  const auto s = corpus::corpus_stats(c.train);
  CHECK(s.utterances == 100);
  long emitted = 0;
  for (const auto& u : c.train) {
    emitted += static_cast<long>(tagcodec::parse_chunks(
                                     tagcodec::bio_to_chunk(u.bio, spec.combined()).text, spec.combined())
                                     .size());
  }
  long total = 0;
  for (const auto& [tag, n] : s.concept_counts) total += n;
  CHECK(total == emitted);
  CHECK(s.chunks == emitted);
  auto all = c.train;
  all.insert(all.end(), c.dev.begin(), c.dev.end());
  all.insert(all.end(), c.test.begin(), c.test.end());
  CHECK(corpus::corpus_stats(all).speakers == spec.speakers);
}

TEST_CASE("template mixture matches the weights") {
  const GeneratorSpec spec = GeneratorSpec::desk_default();
  const GeneratedCorpus c = generate(spec, {4000, 1, 1});
  double total_weight = 0.0;
  for (const auto& t : spec.templates) total_weight += t.weight;
  std::vector<long> counts(spec.templates.size(), 0);
  for (int t : c.train_templates) ++counts[static_cast<std::size_t>(t)];
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double p = spec.templates[i].weight / total_weight;
    const double mean = 4000 * p;
    CHECK(std::abs(static_cast<double>(counts[i]) - mean) <= 4.0 * std::sqrt(mean * (1 - p)));
  }
}

TEST_CASE("separability oracle at the default noise level") {
  const GeneratorSpec spec = GeneratorSpec::desk_default();
  const GeneratedCorpus c = generate(spec, {300, 100, 100});
  const Prototypes p{c.alphabet, c.prototypes};
  const auto r = separability_oracle(c.test, p, c.speakers, spec.frames_per_char);
  CHECK(r.frame_accuracy >= 0.999);
  CHECK(r.transcript_accuracy >= 0.99);
  GeneratorSpec clean = spec;
  clean.noise_std = 0.0;
  const GeneratedCorpus cc = generate(clean, {10, 10, 10});
  const auto exact = separability_oracle(cc.test, {cc.alphabet, cc.prototypes}, cc.speakers, 2);
  CHECK(exact.frame_accuracy == 1.0);
  CHECK(exact.transcript_accuracy == 1.0);
}

TEST_CASE("files round trip through the readers") {
  const GeneratorSpec spec = GeneratorSpec::desk_default();
  const GeneratedCorpus c = generate(spec, {30, 5, 5});
  const fs::path dir = scratch("io");
  write_corpus(dir, spec, c);
  const auto train = corpus::read_split(dir / "train.jsonl");
  REQUIRE(train.size() == 30);
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(train[i].id == c.train[i].id);
    CHECK(train[i].bio == c.train[i].bio);
    CHECK(train[i].transcript == c.train[i].transcript);
    CHECK(train[i].features == c.train[i].features.cast<float>().cast<double>());
  }
  const auto speakers = corpus::read_speakers(dir / "speakers.csv");
  CHECK(speakers.size() == c.speakers.size());
  CHECK((speakers.at("spk003") - c.speakers.at("spk003")).cwiseAbs().maxCoeff() < 1e-8);
  const Prototypes p = read_prototypes(dir / "prototypes.csv");
  CHECK(p.alphabet == c.alphabet);
  CHECK((p.vectors - c.prototypes).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(GeneratorSpec::read(dir / "spec.json").to_json() == spec.to_json());
  CHECK(tagcodec::TagInventory::read(dir / "tags_primary.txt").tags() == spec.primary_tags);

  std::ofstream(dir / "bad.jsonl") << slurp(dir / "dev.jsonl") << "{\"id\": 3}\n";
  fs::copy_file(dir / "dev.features", dir / "bad.features");
  std::string message;
  try {
    corpus::read_split(dir / "bad.jsonl");
  } catch (const Error& e) {
    message = e.what();
    CHECK(e.kind() == ErrorKind::kParse);
  }
  CHECK(message.find("bad.jsonl:6:") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("targets follow the vocabulary") {
  const GeneratorSpec spec = GeneratorSpec::desk_default();
  const GeneratedCorpus c = generate(spec, {40, 1, 1});
  const std::u32string graphemes = corpus::grapheme_inventory(c.train);
  CHECK(graphemes.front() == U' ');
  const auto asr = tagcodec::Vocabulary::build(graphemes, {}, false);
  const auto sf = tagcodec::Vocabulary::build(graphemes, spec.primary(), false);
  for (const auto& u : c.train) {
    CHECK(corpus::target_text(u, asr) == u.transcript);
    const std::u32string t = corpus::target_text(u, sf);
    CHECK(tagcodec::strip_tags(t, spec.primary()) == u.transcript);
    for (const auto& chunk : tagcodec::parse_chunks(t, spec.primary())) {
      CHECK(spec.primary().contains(chunk.tag));
    }
  }
}

TEST_CASE("invalid generator specs") {
  GeneratorSpec s = GeneratorSpec::desk_default();
  s.templates.push_back({"see {nothing}", 1.0, "primary"});
  CHECK(kind_of([&] { s.validate(); }) == ErrorKind::kSpec);
  s = GeneratorSpec::desk_default();
  s.lexicon["city"].push_back("s\xc3\xa8te");
  CHECK(kind_of([&] { s.validate(); }) == ErrorKind::kSpec);
  s = GeneratorSpec::desk_default();
  s.auxiliary_tags.push_back("city");
  CHECK(kind_of([&] { s.validate(); }) == ErrorKind::kSpec);
  s = GeneratorSpec::desk_default();
  s.heldout_speakers = s.speakers;
  CHECK(kind_of([&] { s.validate(); }) == ErrorKind::kSpec);
  auto j = GeneratorSpec::desk_default().to_json();
  j["colour"] = "blue";
  CHECK(kind_of([&] { GeneratorSpec::from_json(j); }) == ErrorKind::kSpec);
  CHECK(kind_of([&] { generate(GeneratorSpec::desk_default(), {0, 1, 1}); }) == ErrorKind::kUsage);
}

}  // namespace
}  // namespace ctcslu::synth
