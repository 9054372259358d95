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

#include <filesystem>
#include <fstream>
#include <functional>

#include "ctcslu/error.hpp"
#include "ctcslu/experiment.hpp"
#include "ctcslu/synthcorpus.hpp"
#include "doctest.h"

namespace ctcslu::experiment {
namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kUsage;
}

struct Workspace {
  fs::path dir = fs::temp_directory_path() / "ctcslu_experiment_test";
  synth::GeneratorSpec spec = synth::GeneratorSpec::desk_default();

  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto c = synth::generate(spec, {10, 4, 2});
    synth::write_corpus(dir / "corpus", spec, c);
    const auto g = corpus::grapheme_inventory(c.train);
    tagcodec::Vocabulary::build(g, {}, false).write_file(dir / "asr.vocab");
    tagcodec::Vocabulary::build(g, spec.primary(), true).write_file(dir / "sf.vocab");
  }
  ~Workspace() { fs::remove_all(dir); }

  nlohmann::json config() const {
    return nlohmann::json::parse(R"({
      "network": {"input_dim": 16, "recurrent_layers": 1, "hidden_size": 8},
      "seed": 3,
      "chain": [
        {"name": "asr", "corpus": "corpus", "vocabulary": "asr.vocab", "train": {"epochs": 1}},
        {"name": "sfstar", "corpus": "corpus", "vocabulary": "sf.vocab",
         "train": {"epochs": 2, "loss": "star", "speaker": "none"}}
      ],
      "decode": {"beam": 4, "alpha": 0.5},
      "output_dir": "runs/a"
    })");
  }
};

TEST_CASE("config round trips losslessly") {
  const Workspace ws;
  const ExperimentConfig c = ExperimentConfig::from_json(ws.config(), ws.dir);
  CHECK(c.seed == 3);
  REQUIRE(c.chain.size() == 2);
  CHECK(c.chain[1].train.loss == train::LossMode::kStar);
  CHECK(c.chain[1].train.epochs == 2);
  CHECK(c.decode.beam == 4);
  CHECK_FALSE(c.decode.lm.has_value());
  CHECK(c.resolve(c.output_dir) == ws.dir / "runs/a");
  const auto j = c.to_json();
  const ExperimentConfig again = ExperimentConfig::from_json(nlohmann::json::parse(j.dump()), ws.dir);
  CHECK(again == c);
  CHECK(again.to_json().dump() == j.dump());
  c.write(ws.dir / "exp.json");
  CHECK(ExperimentConfig::read(ws.dir / "exp.json") == c);
}

TEST_CASE("config validation") {
  const Workspace ws;
  ExperimentConfig c = ExperimentConfig::from_json(ws.config(), ws.dir);
  c.validate();
  const train::ChainSpec spec = load_chain(c);
  REQUIRE(spec.stages.size() == 2);
  CHECK(spec.stages[0].data.train.size() == 10);
  CHECK(spec.stages[0].data.dev.size() == 4);
  CHECK(spec.stages[1].vocabulary.has_star());
  CHECK_FALSE(spec.stages[0].data.speakers.empty());

  c.override_seed(10);
  CHECK(c.seed == 10);
  CHECK(c.chain[1].train.seed == 11);
  c.override_jobs(2);
  CHECK(c.chain[0].train.jobs == 2);

  ExperimentConfig missing = c;
  missing.chain[0].vocabulary = "nope.vocab";
  CHECK(kind_of([&] { missing.validate(); }) == ErrorKind::kConfiguration);
  missing = c;
  missing.decode.lm = "lm.arpa";
  CHECK(kind_of([&] { missing.validate(); }) == ErrorKind::kConfiguration);
  missing = c;
  missing.chain[1].name = "asr";
  CHECK(kind_of([&] { missing.validate(); }) == ErrorKind::kConfiguration);
  missing = c;
  missing.chain[1].vocabulary = "asr.vocab";
  CHECK(kind_of([&] { missing.validate(); }) == ErrorKind::kConfiguration);
  missing = c;
  missing.chain.clear();
  CHECK(kind_of([&] { missing.validate(); }) == ErrorKind::kConfiguration);
}

TEST_CASE("malformed configs") {
  const Workspace ws;
  for (auto mutate : std::vector<std::function<void(nlohmann::json&)>>{
           [](nlohmann::json& j) { j["extra"] = 1; },
           [](nlohmann::json& j) { j.erase("network"); },
           [](nlohmann::json& j) { j["chain"][0].erase("name"); },
           [](nlohmann::json& j) { j["chain"][0]["name"] = "a/b"; },
           [](nlohmann::json& j) { j["chain"][0]["train"]["epoch"] = 3; },
           [](nlohmann::json& j) { j["chain"][0]["corpus"] = 5; },
           [](nlohmann::json& j) { j["decode"]["beam"] = -1; },
           [](nlohmann::json& j) { j["decode"]["width"] = 2; },
           [](nlohmann::json& j) { j["chain"] = "x"; }}) {
    nlohmann::json j = ws.config();
    mutate(j);
    CHECK(kind_of([&] { ExperimentConfig::from_json(j, ws.dir); }) == ErrorKind::kConfiguration);
  }
  std::ofstream(ws.dir / "broken.json") << "{\"network\": ";
  CHECK(kind_of([&] { ExperimentConfig::read(ws.dir / "broken.json"); }) == ErrorKind::kParse);
  CHECK(kind_of([&] { ExperimentConfig::read(ws.dir / "absent.json"); }) == ErrorKind::kIo);
}

}  // namespace
}  // namespace ctcslu::experiment
