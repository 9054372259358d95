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


#include "ctcslu/synthcorpus.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ctcslu/error.hpp"
#include "ctcslu/utf8.hpp"

namespace ctcslu::synth {
namespace {

Error spec_error(const std::string& what) { return Error(ErrorKind::kSpec, "generator spec: " + what); }

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

bool is_slot(const std::string& w) { return w.size() > 2 && w.front() == '{' && w.back() == '}'; }

std::string slot_tag(const std::string& w) { return w.substr(1, w.size() - 2); }

// One rendered sentence with its BIO annotation.
tagcodec::BioTranscript fill(const Template& t, const GeneratorSpec& spec, std::mt19937_64& rng) {
  tagcodec::BioTranscript bio;
  for (const std::string& w : split_words(t.pattern)) {
    if (!is_slot(w)) {
      bio.push_back({w, tagcodec::BioPrefix::kOutside, {}});
      continue;
    }
    const std::string tag = slot_tag(w);
    const auto& values = spec.lexicon.at(tag);
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    const auto words = split_words(values[pick(rng)]);
    for (std::size_t i = 0; i < words.size(); ++i) {
      bio.push_back({words[i], i == 0 ? tagcodec::BioPrefix::kBegin : tagcodec::BioPrefix::kInside, tag});
    }
  }
  return bio;
}

std::string format(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

GeneratorSpec GeneratorSpec::desk_default() {
  GeneratorSpec s;
  s.primary_tags = {"nb_room", "room_type", "city", "date", "price", "hotel"};
  s.auxiliary_tags = {"show", "seats", "time", "person"};
  s.lexicon = {
      {"nb_room", {"one", "two", "three", "four", "five"}},
      {"room_type", {"single", "double", "twin", "suite"}},
      {"city", {"paris", "lyon", "nice", "lille", "nantes", "le mans"}},
      {"date", {"monday", "friday", "sunday", "tomorrow", "next week"}},
      {"price", {"cheap", "low cost", "expensive"}},
      {"hotel", {"ibis", "hilton", "ritz", "novotel"}},
      {"show", {"hamlet", "carmen", "tosca", "faust"}},
      {"seats", {"two", "four", "six", "ten"}},
      {"time", {"tonight", "at eight", "at nine", "this evening"}},
      {"person", {"anna", "marc", "julie", "paul"}},
  };
  s.templates = {
      {"book {nb_room} {room_type} rooms in {city}", 1.0, "primary"},
      {"a {room_type} room in {city} for {date}", 1.0, "primary"},
      {"a {price} hotel in {city}", 1.0, "primary"},
      {"reserve {nb_room} rooms at the {hotel} {date}", 1.0, "primary"},
      {"is the {hotel} in {city} {price}", 1.0, "primary"},
      {"{nb_room} {room_type} rooms please", 1.0, "primary"},
      {"i need a room {date}", 1.0, "primary"},
      {"what about the {hotel}", 0.5, "primary"},
      {"yes that is fine", 0.3, "primary"},
      {"tickets for {show} {time}", 1.0, "auxiliary"},
      {"{seats} seats for {show}", 1.0, "auxiliary"},
      {"book {show} for {person}", 1.0, "auxiliary"},
      {"can {person} see {show} {time}", 0.7, "auxiliary"},
  };
  return s;
}

void GeneratorSpec::validate() const {
  if (frames_per_char < 1) throw spec_error("frames_per_char must be at least 1");
  if (feature_dim < 1) throw spec_error("feature_dim must be at least 1");
  if (speakers < 1) throw spec_error("speakers must be at least 1");
  if (heldout_speakers < 0 || heldout_speakers >= speakers) {
    throw spec_error("heldout_speakers must leave at least one training speaker");
  }
  if (!(noise_std >= 0.0) || !(speaker_offset_scale >= 0.0) || !(prototype_scale > 0.0)) {
    throw spec_error("scales must be non-negative (prototype_scale positive)");
  }
  if (templates.empty()) throw spec_error("no templates");
  const std::u32string chars = utf8::decode(alphabet);
  if (chars.find(tagcodec::kSeparator) == std::u32string::npos) {
    throw spec_error("alphabet must contain the space separator");
  }
  const std::set<char32_t> allowed(chars.begin(), chars.end());
  if (allowed.size() != chars.size()) throw spec_error("alphabet has duplicate characters");
  auto check_text = [&](const std::string& text, const std::string& where) {
    for (char32_t c : utf8::decode(text)) {
      if (!allowed.contains(c)) {
        throw spec_error(where + " uses " + utf8::code_point_label(c) + " outside the alphabet");
      }
    }
  };
  std::set<std::string> known(primary_tags.begin(), primary_tags.end());
  known.insert(auxiliary_tags.begin(), auxiliary_tags.end());
  (void)combined();  // rejects duplicate tags across tasks
  for (const auto& t : templates) {
    if (!(t.weight > 0.0)) throw spec_error("template weights must be positive");
    if (t.task != "primary" && t.task != "auxiliary") throw spec_error("unknown task '" + t.task + "'");
    if (split_words(t.pattern).empty()) throw spec_error("empty template");
    for (const std::string& w : split_words(t.pattern)) {
      if (is_slot(w)) {
        const std::string tag = slot_tag(w);
        if (!known.contains(tag)) throw spec_error("template slot {" + tag + "} is not a declared tag");
        const auto it = lexicon.find(tag);
        if (it == lexicon.end() || it->second.empty()) {
          throw spec_error("no lexicon values for tag " + tag);
        }
      } else {
        check_text(w, "template word '" + w + "'");
      }
    }
  }
  for (const auto& [tag, values] : lexicon) {
    for (const auto& v : values) {
      if (split_words(v).empty()) throw spec_error("empty lexicon value for " + tag);
      check_text(v, "lexicon value '" + v + "'");
    }
  }
}

tagcodec::TagInventory GeneratorSpec::primary() const { return tagcodec::TagInventory(primary_tags); }
tagcodec::TagInventory GeneratorSpec::auxiliary() const { return tagcodec::TagInventory(auxiliary_tags); }
tagcodec::TagInventory GeneratorSpec::combined() const {
  std::vector<std::string> all = primary_tags;
  all.insert(all.end(), auxiliary_tags.begin(), auxiliary_tags.end());
  try {
    return tagcodec::TagInventory(all);
  } catch (const Error& e) {
    throw spec_error(e.what());
  }
}

nlohmann::ordered_json GeneratorSpec::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["alphabet"] = alphabet;
  j["primary_tags"] = primary_tags;
  j["auxiliary_tags"] = auxiliary_tags;
  nlohmann::ordered_json lex = nlohmann::ordered_json::object();
  for (const auto& [tag, values] : lexicon) lex[tag] = values;
  j["lexicon"] = std::move(lex);
  nlohmann::ordered_json ts = nlohmann::ordered_json::array();
  for (const auto& t : templates) ts.push_back({{"pattern", t.pattern}, {"weight", t.weight}, {"task", t.task}});
  j["templates"] = std::move(ts);
  j["frames_per_char"] = frames_per_char;
  j["feature_dim"] = feature_dim;
  j["prototype_scale"] = prototype_scale;
  j["speakers"] = speakers;
  j["heldout_speakers"] = heldout_speakers;
  j["speaker_offset_scale"] = speaker_offset_scale;
  j["noise_std"] = noise_std;
  return j;
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  try {
    static const std::set<std::string> keys{
        "seed", "alphabet", "primary_tags", "auxiliary_tags", "lexicon", "templates",
        "frames_per_char", "feature_dim", "prototype_scale", "speakers", "heldout_speakers",
        "speaker_offset_scale", "noise_std"};
    for (const auto& [k, v] : j.items()) {
      if (!keys.contains(k)) throw spec_error("unknown key '" + k + "'");
    }
    s.seed = j.value("seed", s.seed);
    s.alphabet = j.value("alphabet", s.alphabet);
    s.primary_tags = j.at("primary_tags").get<std::vector<std::string>>();
    s.auxiliary_tags = j.value("auxiliary_tags", std::vector<std::string>{});
    s.lexicon = j.at("lexicon").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& t : j.at("templates")) {
      s.templates.push_back({t.at("pattern").get<std::string>(), t.value("weight", 1.0),
                             t.value("task", std::string("primary"))});
    }
    s.frames_per_char = j.value("frames_per_char", s.frames_per_char);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.prototype_scale = j.value("prototype_scale", s.prototype_scale);
    s.speakers = j.value("speakers", s.speakers);
    s.heldout_speakers = j.value("heldout_speakers", s.heldout_speakers);
    s.speaker_offset_scale = j.value("speaker_offset_scale", s.speaker_offset_scale);
    s.noise_std = j.value("noise_std", s.noise_std);
  } catch (const nlohmann::json::exception& e) {
    throw spec_error(e.what());
  }
  s.validate();
  return s;
}

GeneratorSpec GeneratorSpec::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

void GeneratorSpec::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

GeneratedCorpus generate(const GeneratorSpec& spec, const SplitSizes& sizes) {
  spec.validate();
  if (sizes.train < 1 || sizes.dev < 1 || sizes.test < 1) {
    throw Error(ErrorKind::kUsage, "split sizes must be at least 1");
  }
  GeneratedCorpus out;
  out.alphabet = utf8::decode(spec.alphabet);
  const int dim = spec.feature_dim;
  std::normal_distribution<double> normal(0.0, 1.0);

  std::mt19937_64 proto_rng(splitmix(spec.seed ^ 0x70726f746fULL));
  out.prototypes.resize(static_cast<Eigen::Index>(out.alphabet.size()), dim);
  for (Eigen::Index r = 0; r < out.prototypes.rows(); ++r) {
    for (int c = 0; c < dim; ++c) out.prototypes(r, c) = spec.prototype_scale * normal(proto_rng);
  }
  std::map<char32_t, Eigen::Index> row_of;
  for (std::size_t i = 0; i < out.alphabet.size(); ++i) row_of[out.alphabet[i]] = static_cast<Eigen::Index>(i);

  std::mt19937_64 speaker_rng(splitmix(spec.seed ^ 0x737065616bULL));
  std::vector<std::string> speaker_ids;
  for (int s = 0; s < spec.speakers; ++s) {
    char id[16];
    std::snprintf(id, sizeof(id), "spk%03d", s);
    Eigen::VectorXd offset(dim);
    for (int c = 0; c < dim; ++c) offset(c) = spec.speaker_offset_scale * normal(speaker_rng);
    out.speakers.emplace(id, std::move(offset));
    speaker_ids.emplace_back(id);
  }
  const int train_speakers = spec.speakers - spec.heldout_speakers;

  std::vector<double> weights;
  for (const auto& t : spec.templates) weights.push_back(t.weight);

  auto make_split = [&](const char* name, int count, std::uint64_t stream, bool heldout,
                        std::vector<int>* template_ids) {
    std::mt19937_64 rng(splitmix(spec.seed ^ stream));
    std::discrete_distribution<int> pick_template(weights.begin(), weights.end());
    const int lo = heldout && spec.heldout_speakers > 0 ? train_speakers : 0;
    const int hi = heldout && spec.heldout_speakers > 0 ? spec.speakers - 1 : train_speakers - 1;
    std::uniform_int_distribution<int> pick_speaker(lo, hi);
    std::vector<corpus::Utterance> utts;
    for (int i = 0; i < count; ++i) {
      const int t = pick_template(rng);
      if (template_ids) template_ids->push_back(t);
      corpus::Utterance u;
      char id[32];
      std::snprintf(id, sizeof(id), "%s-%05d", name, i);
      u.id = id;
      u.speaker = speaker_ids[static_cast<std::size_t>(pick_speaker(rng))];
      u.bio = fill(spec.templates[static_cast<std::size_t>(t)], spec, rng);
      for (std::size_t w = 0; w < u.bio.size(); ++w) {
        if (w > 0) u.transcript.push_back(tagcodec::kSeparator);
        u.transcript += utf8::decode(u.bio[w].word);
      }
      const Eigen::VectorXd& offset = out.speakers.at(u.speaker);
      const int F = spec.frames_per_char;
      u.features.resize(static_cast<Eigen::Index>(u.transcript.size()) * F, dim);
      for (std::size_t k = 0; k < u.transcript.size(); ++k) {
        const Eigen::Index proto = row_of.at(u.transcript[k]);
        for (int f = 0; f < F; ++f) {
          const Eigen::Index row = static_cast<Eigen::Index>(k) * F + f;
          for (int c = 0; c < dim; ++c) {
            u.features(row, c) = out.prototypes(proto, c) + offset(c) + spec.noise_std * normal(rng);
          }
        }
      }
      utts.push_back(std::move(u));
    }
    return utts;
  };
  out.train = make_split("train", sizes.train, 0x747261696eULL, false, &out.train_templates);
  out.dev = make_split("dev", sizes.dev, 0x646576ULL, true, nullptr);
  out.test = make_split("test", sizes.test, 0x74657374ULL, true, nullptr);
  return out;
}

void write_corpus(const std::filesystem::path& dir, const GeneratorSpec& spec,
                  const GeneratedCorpus& corpus) {
  std::filesystem::create_directories(dir);
  spec.write(dir / "spec.json");
  spec.primary().write(dir / "tags_primary.txt");
  spec.auxiliary().write(dir / "tags_auxiliary.txt");
  const tagcodec::TagInventory combined = spec.combined();
  combined.write(dir / "tags_combined.txt");
  corpus::write_split(dir, "train", corpus.train, combined);
  corpus::write_split(dir, "dev", corpus.dev, combined);
  corpus::write_split(dir, "test", corpus.test, combined);
  corpus::write_speakers(dir / "speakers.csv", corpus.speakers);
  std::ofstream out(dir / "prototypes.csv", std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write prototypes.csv");
  out << "symbol";
  for (Eigen::Index c = 0; c < corpus.prototypes.cols(); ++c) out << ",v" << c;
  out << '\n';
  for (std::size_t i = 0; i < corpus.alphabet.size(); ++i) {
    out << tagcodec::escape_symbol(corpus.alphabet[i]);
    for (Eigen::Index c = 0; c < corpus.prototypes.cols(); ++c) {
      out << ',' << format(corpus.prototypes(static_cast<Eigen::Index>(i), c));
    }
    out << '\n';
  }
}

Prototypes read_prototypes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  Prototypes p;
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (++line_no == 1 || line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    p.alphabet.push_back(tagcodec::unescape_symbol(cell));
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  p.vectors.resize(static_cast<Eigen::Index>(rows.size()),
                   rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      p.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return p;
}

SeparabilityResult separability_oracle(const std::vector<corpus::Utterance>& utterances,
                                       const Prototypes& prototypes,
                                       const corpus::SpeakerTable& speakers,
                                       int frames_per_char) {
  long frames = 0;
  long correct_frames = 0;
  long exact = 0;
  std::map<char32_t, Eigen::Index> row_of;
  for (std::size_t i = 0; i < prototypes.alphabet.size(); ++i) {
    row_of[prototypes.alphabet[i]] = static_cast<Eigen::Index>(i);
  }
  for (const auto& u : utterances) {
    const Eigen::VectorXd& offset = speakers.at(u.speaker);
    std::vector<Eigen::Index> labels(static_cast<std::size_t>(u.features.rows()));
    for (Eigen::Index t = 0; t < u.features.rows(); ++t) {
      const Eigen::RowVectorXd x = u.features.row(t) - offset.transpose();
      Eigen::Index best = 0;
      (prototypes.vectors.rowwise() - x).rowwise().squaredNorm().minCoeff(&best);
      labels[static_cast<std::size_t>(t)] = best;
      const std::size_t k = static_cast<std::size_t>(t / frames_per_char);
      ++frames;
      if (k < u.transcript.size() && row_of.at(u.transcript[k]) == best) ++correct_frames;
    }
    std::u32string decoded;
    for (std::size_t k = 0; k * static_cast<std::size_t>(frames_per_char) < labels.size(); ++k) {
      std::map<Eigen::Index, int> votes;
      for (int f = 0; f < frames_per_char; ++f) ++votes[labels[k * static_cast<std::size_t>(frames_per_char) + static_cast<std::size_t>(f)]];
      Eigen::Index winner = votes.begin()->first;
      for (const auto& [label, n] : votes) {
        if (n > votes[winner]) winner = label;
      }
      decoded.push_back(prototypes.alphabet[static_cast<std::size_t>(winner)]);
    }
    if (decoded == u.transcript) ++exact;
  }
  SeparabilityResult r;
  r.frame_accuracy = frames ? static_cast<double>(correct_frames) / static_cast<double>(frames) : 1.0;
  r.transcript_accuracy = utterances.empty() ? 1.0 : static_cast<double>(exact) / static_cast<double>(utterances.size());
  return r;
}

}  // namespace ctcslu::synth
