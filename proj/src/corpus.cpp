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


#include "ctcslu/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ctcslu/error.hpp"
#include "ctcslu/utf8.hpp"

namespace ctcslu::corpus {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

Error io_error(const std::filesystem::path& path, const std::string& what) {
  return Error(ErrorKind::kIo, what + " " + path.string());
}

}  // namespace

std::uint64_t append_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  const auto offset = static_cast<std::uint64_t>(out.tellp());
  const std::uint32_t shape[2] = {static_cast<std::uint32_t>(m.rows()),
                                  static_cast<std::uint32_t>(m.cols())};
  out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) buf[k++] = static_cast<float>(m(r, c));
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  return offset;
}

Eigen::MatrixXd read_matrix(std::istream& in, std::uint64_t offset) {
  in.clear();
  in.seekg(static_cast<std::streamoff>(offset));
  std::uint32_t shape[2] = {0, 0};
  in.read(reinterpret_cast<char*>(shape), sizeof(shape));
  if (!in) throw Error(ErrorKind::kParse, "feature archive: truncated header");
  std::vector<float> buf(static_cast<std::size_t>(shape[0]) * shape[1]);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw Error(ErrorKind::kParse, "feature archive: truncated matrix");
  Eigen::MatrixXd m(shape[0], shape[1]);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = buf[k++];
  }
  return m;
}

void write_split(const std::filesystem::path& dir, std::string_view split,
                 const std::vector<Utterance>& utterances,
                 const tagcodec::TagInventory& inventory) {
  const std::string feature_name = std::string(split) + ".features";
  const auto jsonl_path = dir / (std::string(split) + ".jsonl");
  std::ofstream features(dir / feature_name, std::ios::binary);
  std::ofstream records(jsonl_path, std::ios::binary);
  if (!features || !records) throw io_error(jsonl_path, "cannot write");
  for (const Utterance& u : utterances) {
    const std::uint64_t offset = append_matrix(features, u.features);
    nlohmann::ordered_json j;
    j["id"] = u.id;
    j["speaker"] = u.speaker;
    j["transcript"] = utf8::encode(u.transcript);
    j["chunked"] = utf8::encode(tagcodec::bio_to_chunk(restrict_bio(u.bio, inventory), inventory).text);
    nlohmann::ordered_json bio = nlohmann::ordered_json::array();
    for (const auto& t : u.bio) bio.push_back({t.word, t.label()});
    j["bio"] = std::move(bio);
    j["features"] = {{"file", feature_name},
                     {"offset", offset},
                     {"frames", u.features.rows()},
                     {"dim", u.features.cols()}};
    records << j.dump() << '\n';
  }
  if (!features || !records) throw io_error(jsonl_path, "write failed for");
}

std::vector<Utterance> read_split(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl, std::ios::binary);
  if (!in) throw io_error(jsonl, "cannot open");
  std::map<std::string, std::ifstream> archives;
  std::vector<Utterance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = jsonl.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      Utterance u;
      u.id = j.at("id").get<std::string>();
      u.speaker = j.at("speaker").get<std::string>();
      u.transcript = utf8::decode(j.at("transcript").get<std::string>());
      for (const auto& pair : j.at("bio")) {
        u.bio.push_back(tagcodec::make_bio_token(pair.at(0).get<std::string>(),
                                                 pair.at(1).get<std::string>()));
      }
      const auto& f = j.at("features");
      const std::string file = f.at("file").get<std::string>();
      auto it = archives.find(file);
      if (it == archives.end()) {
        it = archives.emplace(file, std::ifstream(jsonl.parent_path() / file, std::ios::binary)).first;
        if (!it->second) throw io_error(jsonl.parent_path() / file, "cannot open");
      }
      u.features = read_matrix(it->second, f.at("offset").get<std::uint64_t>());
      if (u.features.rows() != f.at("frames").get<long>() ||
          u.features.cols() != f.at("dim").get<long>()) {
        throw Error(ErrorKind::kParse, "feature shape disagrees with the record");
      }
      out.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, where + e.what());
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kIo) throw;
      throw Error(ErrorKind::kParse, where + e.what());
    }
  }
  return out;
}

void write_speakers(const std::filesystem::path& path, const SpeakerTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(path, "cannot write");
  const Eigen::Index dim = table.empty() ? 0 : table.begin()->second.size();
  out << "speaker";
  for (Eigen::Index d = 0; d < dim; ++d) out << ",v" << d;
  out << '\n';
  char buf[40];
  for (const auto& [id, v] : table) {
    if (v.size() != dim) throw Error(ErrorKind::kData, "speaker vectors differ in size");
    out << id;
    for (Eigen::Index d = 0; d < dim; ++d) {
      std::snprintf(buf, sizeof(buf), ",%.9g", v(d));
      out << buf;
    }
    out << '\n';
  }
}

SpeakerTable read_speakers(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path, "cannot open");
  SpeakerTable table;
  std::string line;
  int line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (line_no == 1) {
      if (cells.empty() || cells[0] != "speaker") throw Error(ErrorKind::kParse, where + "missing header");
      columns = cells.size();
      continue;
    }
    if (cells.size() != columns) throw Error(ErrorKind::kParse, where + "wrong number of columns");
    Eigen::VectorXd v(static_cast<Eigen::Index>(columns - 1));
    for (std::size_t i = 1; i < cells.size(); ++i) {
      char* end = nullptr;
      v(static_cast<Eigen::Index>(i - 1)) = std::strtod(cells[i].c_str(), &end);
      if (cells[i].empty() || *end != '\0') throw Error(ErrorKind::kParse, where + "bad number");
    }
    if (!table.emplace(cells[0], std::move(v)).second) {
      throw Error(ErrorKind::kParse, where + "duplicate speaker " + cells[0]);
    }
  }
  return table;
}

tagcodec::BioTranscript restrict_bio(const tagcodec::BioTranscript& bio,
                                     const tagcodec::TagInventory& inventory) {
  tagcodec::BioTranscript out = bio;
  for (auto& t : out) {
    if (t.prefix != tagcodec::BioPrefix::kOutside && !inventory.contains(t.tag)) {
      t.prefix = tagcodec::BioPrefix::kOutside;
      t.tag.clear();
    }
  }
  return out;
}

std::u32string target_text(const Utterance& utt, const tagcodec::Vocabulary& vocab) {
  if (!vocab.has_tags()) return utt.transcript;
  const tagcodec::TagInventory inventory = vocab.tag_inventory();
  return tagcodec::bio_to_chunk(restrict_bio(utt.bio, inventory), inventory).text;
}

std::u32string grapheme_inventory(const std::vector<Utterance>& utterances) {
  std::set<char32_t> chars;
  for (const auto& u : utterances) chars.insert(u.transcript.begin(), u.transcript.end());
  chars.erase(tagcodec::kSeparator);
  std::u32string out(1, tagcodec::kSeparator);
  out.append(chars.begin(), chars.end());
  return out;
}

CorpusStats corpus_stats(const std::vector<Utterance>& utterances) {
  CorpusStats s;
  std::set<std::string> speakers;
  for (const auto& u : utterances) {
    ++s.utterances;
    s.frames += u.features.rows();
    speakers.insert(u.speaker);
    for (const auto& t : u.bio) {
      if (t.prefix == tagcodec::BioPrefix::kBegin) {
        ++s.chunks;
        ++s.concept_counts[t.tag];
      }
    }
  }
  s.speakers = static_cast<long>(speakers.size());
  return s;
}

}  // namespace ctcslu::corpus
