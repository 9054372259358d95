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

#include <cstring>
#include <fstream>
#include <sstream>

#include "ctcslu/error.hpp"
#include "ctcslu/model.hpp"

namespace ctcslu::model {

namespace {

constexpr char kMagic[] = "CTCSLU-CHECKPOINT";
constexpr int kFormatVersion = 1;

void put_f32(std::string& out, double value) {
  const float f = static_cast<float>(value);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof(bits));
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
}

double get_f32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  float f = 0.0f;
  std::memcpy(&f, &bits, sizeof(f));
  return static_cast<double>(f);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["blob_layout"] = "float32 little-endian, row-major, manifest order";
  header["config"] = ckpt.config;
  std::ostringstream vocab;
  ckpt.vocabulary.write(vocab);
  header["vocabulary"] = vocab.str();
  header["meta"] = ckpt.meta;
  nlohmann::json manifest = nlohmann::json::array();
  std::string blobs;
  for (const Tensor& t : ckpt.parameters.tensors()) {
    manifest.push_back({{"name", t.name},
                        {"rows", t.value.rows()},
                        {"cols", t.value.cols()},
                        {"trainable", t.trainable}});
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) put_f32(blobs, t.value(r, c));
  }
  header["tensors"] = manifest;
  const std::string text = header.dump(1);
  std::string out = std::string(kMagic) + " " + std::to_string(kFormatVersion) + "\n" +
                    std::to_string(text.size()) + "\n" + text;
  out += blobs;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kParse, "checkpoint: " + msg); };
  const std::size_t eol1 = bytes.find('\n');
  if (eol1 == std::string::npos) fail("missing magic line");
  std::istringstream magic(bytes.substr(0, eol1));
  std::string word;
  int version = 0;
  if (!(magic >> word >> version) || word != kMagic) fail("bad magic");
  if (version != kFormatVersion) fail("unsupported format version " + std::to_string(version));
  const std::size_t eol2 = bytes.find('\n', eol1 + 1);
  if (eol2 == std::string::npos) fail("missing header length");
  std::size_t header_len = 0;
  try {
    header_len = std::stoull(bytes.substr(eol1 + 1, eol2 - eol1 - 1));
  } catch (const std::exception&) {
    fail("bad header length");
  }
  if (eol2 + 1 + header_len > bytes.size()) fail("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(eol2 + 1, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("header is not valid JSON: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = header.at("config").get<NetworkConfig>();
    std::istringstream vocab(header.at("vocabulary").get<std::string>());
    ckpt.vocabulary = Vocabulary::parse(vocab);
    ckpt.meta = header.value("meta", nlohmann::json::object()).get<TrainingMeta>();
    std::size_t offset = eol2 + 1 + header_len;
    for (const auto& entry : header.at("tensors")) {
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) fail("negative tensor shape");
      const std::size_t need = static_cast<std::size_t>(rows * cols) * 4;
      if (offset + need > bytes.size()) fail("truncated tensor data");
      Eigen::MatrixXd& m = ckpt.parameters.add(entry.at("name").get<std::string>(), rows, cols,
                                               entry.value("trainable", true));
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c, p += 4) m(r, c) = get_f32(p);
      offset += need;
    }
    if (offset != bytes.size()) fail("trailing bytes after tensor data");
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad header field: ") + e.what());
  }
  validate(ckpt);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace ctcslu::model
