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


#include "ctcslu/experiment.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ctcslu/corpus.hpp"
#include "ctcslu/error.hpp"

namespace ctcslu::experiment {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorKind::kConfiguration, "experiment config: " + message);
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) config_error("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) config_error(where + " needs '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(where + "." + key + ": " + e.what());
  }
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) config_error(what + " not found: " + p.string());
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  reject_unknown(j, {"network", "seed", "init_checkpoint", "chain", "decode", "output_dir"},
                 "config");
  ExperimentConfig c;
  c.base_dir = base_dir;
  if (!j.contains("network")) config_error("config needs 'network'");
  try {
    c.network = j.at("network").get<model::NetworkConfig>();
  } catch (const json::exception& e) {
    config_error(std::string("network: ") + e.what());
  }
  if (j.contains("seed")) c.seed = field<std::uint64_t>(j, "seed", "config");
  if (j.contains("init_checkpoint")) {
    c.init_checkpoint = fs::path(field<std::string>(j, "init_checkpoint", "config"));
  }
  if (j.contains("output_dir")) c.output_dir = field<std::string>(j, "output_dir", "config");
  const json chain = j.value("chain", json::array());
  if (!chain.is_array()) config_error("chain must be an array");
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const std::string where = "chain[" + std::to_string(i) + "]";
    reject_unknown(chain[i], {"name", "corpus", "vocabulary", "train"}, where);
    StageConfig s;
    s.name = field<std::string>(chain[i], "name", where);
    if (s.name.empty() || s.name.find_first_of("/\\") != std::string::npos) {
      config_error(where + ".name must be a non-empty file name");
    }
    s.corpus = field<std::string>(chain[i], "corpus", where);
    s.vocabulary = field<std::string>(chain[i], "vocabulary", where);
    if (chain[i].contains("train")) s.train = chain[i].at("train").get<train::TrainConfig>();
    c.chain.push_back(std::move(s));
  }
  if (j.contains("decode")) {
    const json& d = j.at("decode");
    reject_unknown(d, {"beam", "lm", "alpha", "beta", "monotone"}, "decode");
    if (d.contains("beam")) c.decode.beam = field<int>(d, "beam", "decode");
    if (d.contains("lm")) c.decode.lm = fs::path(field<std::string>(d, "lm", "decode"));
    if (d.contains("alpha")) c.decode.alpha = field<double>(d, "alpha", "decode");
    if (d.contains("beta")) c.decode.beta = field<double>(d, "beta", "decode");
    if (d.contains("monotone")) c.decode.monotone = field<bool>(d, "monotone", "decode");
    if (c.decode.beam < 0) config_error("decode.beam must be >= 0");
  }
  return c;
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["network"] = json(network);
  j["seed"] = seed;
  if (init_checkpoint) j["init_checkpoint"] = init_checkpoint->generic_string();
  j["chain"] = nlohmann::ordered_json::array();
  for (const auto& s : chain) {
    nlohmann::ordered_json stage;
    stage["name"] = s.name;
    stage["corpus"] = s.corpus.generic_string();
    stage["vocabulary"] = s.vocabulary.generic_string();
    stage["train"] = json(s.train);
    j["chain"].push_back(std::move(stage));
  }
  nlohmann::ordered_json d;
  d["beam"] = decode.beam;
  if (decode.lm) d["lm"] = decode.lm->generic_string();
  d["alpha"] = decode.alpha;
  d["beta"] = decode.beta;
  d["monotone"] = decode.monotone;
  j["decode"] = std::move(d);
  j["output_dir"] = output_dir.generic_string();
  return j;
}

ExperimentConfig ExperimentConfig::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

void ExperimentConfig::write(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

fs::path ExperimentConfig::resolve(const fs::path& p) const {
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

void ExperimentConfig::validate() const {
  if (chain.empty()) config_error("chain has no stages");
  if (network.input_dim < 1) config_error("network.input_dim must be >= 1");
  std::set<std::string> names;
  for (const auto& s : chain) {
    if (!names.insert(s.name).second) config_error("duplicate stage name '" + s.name + "'");
    require_exists(resolve(s.corpus) / "train.jsonl", "stage " + s.name + " training split");
    require_exists(resolve(s.corpus) / "dev.jsonl", "stage " + s.name + " dev split");
    require_exists(resolve(s.vocabulary), "stage " + s.name + " vocabulary");
    s.train.validate(tagcodec::Vocabulary::read_file(resolve(s.vocabulary)));
  }
  if (init_checkpoint) require_exists(resolve(*init_checkpoint), "init checkpoint");
  if (decode.lm) require_exists(resolve(*decode.lm), "decode LM");
}

void ExperimentConfig::override_seed(std::uint64_t value) {
  seed = value;
  for (std::size_t i = 0; i < chain.size(); ++i) chain[i].train.seed = value + i;
}

void ExperimentConfig::override_jobs(int jobs) {
  for (auto& s : chain) s.train.jobs = jobs;
}

train::Dataset load_dataset(const fs::path& corpus_dir) {
  train::Dataset d;
  d.train = corpus::read_split(corpus_dir / "train.jsonl");
  d.dev = corpus::read_split(corpus_dir / "dev.jsonl");
  if (fs::exists(corpus_dir / "speakers.csv")) {
    d.speakers = corpus::read_speakers(corpus_dir / "speakers.csv");
  }
  return d;
}

train::ChainSpec load_chain(const ExperimentConfig& config) {
  config.validate();
  train::ChainSpec spec;
  spec.network = config.network;
  spec.seed = config.seed;
  for (const auto& s : config.chain) {
    spec.stages.push_back({s.name, load_dataset(config.resolve(s.corpus)),
                           tagcodec::Vocabulary::read_file(config.resolve(s.vocabulary)), s.train});
  }
  return spec;
}

}  // namespace ctcslu::experiment
