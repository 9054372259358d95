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

#include "ctcslu/tagcodec.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "ctcslu/error.hpp"
#include "ctcslu/utf8.hpp"

namespace ctcslu::tagcodec {

namespace {

bool is_blank_line(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

void validate_tag_name(const std::string& tag) {
  if (tag.empty()) throw Error(ErrorKind::kInventoryMismatch, "empty tag name");
  for (unsigned char c : tag) {
    if (std::isspace(c)) {
      throw Error(ErrorKind::kInventoryMismatch,
                  "tag name contains whitespace: '" + tag + "'");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// TagInventory

TagInventory::TagInventory(std::vector<std::string> tags)
    : tags_(std::move(tags)) {
  if (tags_.size() > kLastOpeningSymbol - kFirstOpeningSymbol + 1) {
    throw Error(ErrorKind::kInventoryMismatch, "too many tags");
  }
  opening_.reserve(tags_.size());
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    opening_.push_back(kFirstOpeningSymbol + static_cast<char32_t>(i));
  }
  index();
}

TagInventory::TagInventory(std::vector<std::string> tags,
                           std::vector<char32_t> opening, char32_t closing)
    : tags_(std::move(tags)), opening_(std::move(opening)), closing_(closing) {
  if (tags_.size() != opening_.size()) {
    throw Error(ErrorKind::kInventoryMismatch,
                "tag count and opening symbol count differ");
  }
  index();
}

void TagInventory::index() {
  by_name_.clear();
  by_symbol_.clear();
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    validate_tag_name(tags_[i]);
    if (!by_name_.emplace(tags_[i], i).second) {
      throw Error(ErrorKind::kInventoryMismatch, "duplicate tag '" + tags_[i] + "'");
    }
    if (opening_[i] == closing_ || opening_[i] == kSeparator ||
        opening_[i] == kStarSymbol || opening_[i] == 0) {
      throw Error(ErrorKind::kInventoryMismatch,
                  "opening symbol of '" + tags_[i] + "' collides with a reserved symbol");
    }
    if (!by_symbol_.emplace(opening_[i], i).second) {
      throw Error(ErrorKind::kInventoryMismatch,
                  "duplicate opening symbol " + utf8::code_point_label(opening_[i]));
    }
  }
}

bool TagInventory::contains(std::string_view tag) const {
  return by_name_.count(std::string(tag)) != 0;
}

char32_t TagInventory::opening_symbol(std::string_view tag) const {
  auto it = by_name_.find(std::string(tag));
  if (it == by_name_.end()) {
    throw Error(ErrorKind::kInventoryMismatch,
                "tag '" + std::string(tag) + "' is not in the inventory");
  }
  return opening_[it->second];
}

const std::string* TagInventory::tag_for(char32_t symbol) const {
  auto it = by_symbol_.find(symbol);
  return it == by_symbol_.end() ? nullptr : &tags_[it->second];
}

TagInventory TagInventory::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open tag inventory " + path.string());
  std::vector<std::string> tags;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    tags.push_back(t);
  }
  return TagInventory(std::move(tags));
}

void TagInventory::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& t : tags_) out << t << '\n';
}

TagInventory union_of(const TagInventory& a, const TagInventory& b) {
  std::vector<std::string> tags = a.tags();
  for (const auto& t : b.tags()) {
    if (!a.contains(t)) tags.push_back(t);
  }
  return TagInventory(std::move(tags));
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary Vocabulary::build(std::u32string_view graphemes,
                             const TagInventory& tags, bool with_star) {
  std::vector<Unit> units;
  units.push_back({UnitKind::kBlank, 0, {}});
  for (char32_t g : graphemes) units.push_back({UnitKind::kGrapheme, g, {}});
  for (std::size_t i = 0; i < tags.size(); ++i) {
    units.push_back({UnitKind::kOpening, tags.opening_symbols()[i], tags.tags()[i]});
  }
  if (!tags.empty()) units.push_back({UnitKind::kClosing, tags.closing_symbol(), {}});
  if (with_star) units.push_back({UnitKind::kStar, kStarSymbol, {}});
  return Vocabulary(std::move(units));
}

Vocabulary::Vocabulary(std::vector<Unit> units) : units_(std::move(units)) {
  if (units_.size() < 2) {
    throw Error(ErrorKind::kConfiguration, "vocabulary needs blank and at least one label");
  }
  if (units_[0].kind != UnitKind::kBlank) {
    throw Error(ErrorKind::kConfiguration, "blank must be unit 0");
  }
  // Section order: graphemes < opening < closing < star.
  auto rank = [](UnitKind k) {
    switch (k) {
      case UnitKind::kBlank: return 0;
      case UnitKind::kGrapheme: return 1;
      case UnitKind::kOpening: return 2;
      case UnitKind::kClosing: return 3;
      case UnitKind::kStar: return 4;
    }
    return 5;
  };
  int prev = 0;
  for (std::size_t i = 1; i < units_.size(); ++i) {
    const Unit& u = units_[i];
    const int r = rank(u.kind);
    if (r == 0) throw Error(ErrorKind::kConfiguration, "blank appears more than once");
    if (r < prev || ((r == 3 || r == 4) && r == prev)) {
      throw Error(ErrorKind::kConfiguration,
                  "vocabulary units out of order at index " + std::to_string(i));
    }
    prev = r;
    if (!index_.emplace(u.symbol, static_cast<int>(i)).second) {
      throw Error(ErrorKind::kConfiguration,
                  "duplicate unit " + utf8::code_point_label(u.symbol));
    }
    const int id = static_cast<int>(i);
    switch (u.kind) {
      case UnitKind::kGrapheme:
        if (u.symbol == kSeparator) separator_ = id;
        break;
      case UnitKind::kOpening:
        if (first_opening_ < 0) first_opening_ = id;
        validate_tag_name(u.tag);
        break;
      case UnitKind::kClosing: closing_ = id; break;
      case UnitKind::kStar: star_ = id; break;
      case UnitKind::kBlank: break;
    }
  }
  if (first_opening_ >= 0 && closing_ < 0) {
    throw Error(ErrorKind::kConfiguration, "opening tag units without a closing unit");
  }
}

std::optional<int> Vocabulary::index_of(char32_t symbol) const {
  auto it = index_.find(symbol);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Vocabulary::is_opening(int id) const {
  return id >= 0 && static_cast<std::size_t>(id) < units_.size() &&
         units_[static_cast<std::size_t>(id)].kind == UnitKind::kOpening;
}

std::u32string Vocabulary::base_graphemes() const {
  std::u32string out;
  for (const Unit& u : units_) {
    if (u.kind == UnitKind::kGrapheme) out.push_back(u.symbol);
  }
  return out;
}

TagInventory Vocabulary::tag_inventory() const {
  std::vector<std::string> tags;
  std::vector<char32_t> opening;
  for (const Unit& u : units_) {
    if (u.kind == UnitKind::kOpening) {
      tags.push_back(u.tag);
      opening.push_back(u.symbol);
    }
  }
  const char32_t closing =
      closing_ >= 0 ? units_[static_cast<std::size_t>(closing_)].symbol : kClosingSymbol;
  return TagInventory(std::move(tags), std::move(opening), closing);
}

Vocabulary Vocabulary::with_star() const {
  if (has_star()) return *this;
  std::vector<Unit> units = units_;
  units.push_back({UnitKind::kStar, kStarSymbol, {}});
  return Vocabulary(std::move(units));
}

Vocabulary Vocabulary::without_star() const {
  if (!has_star()) return *this;
  std::vector<Unit> units = units_;
  units.erase(units.begin() + star_);
  return Vocabulary(std::move(units));
}

std::u32string Vocabulary::render(std::span<const int> ids) const {
  std::u32string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == blank()) continue;
    out.push_back(unit(id).symbol);
  }
  return out;
}

std::string escape_symbol(char32_t cp) {
  const bool plain = (cp > 0x20 && cp < 0x7F && cp != '\\') ||
                     (cp >= 0xA1 && !(cp >= 0xE000 && cp <= 0xF8FF) &&
                      cp != 0x2028 && cp != 0x2029 && cp != 0xFEFF &&
                      !(cp >= 0x2000 && cp <= 0x200F));
  if (plain) return utf8::encode(cp);
  char buf[16];
  if (cp <= 0xFFFF) {
    std::snprintf(buf, sizeof(buf), "\\u%04X", static_cast<unsigned>(cp));
  } else {
    std::snprintf(buf, sizeof(buf), "\\U%08X", static_cast<unsigned>(cp));
  }
  return buf;
}

char32_t unescape_symbol(std::string_view token) {
  if (token.size() >= 2 && token[0] == '\\') {
    const std::size_t digits = token[1] == 'u' ? 4 : token[1] == 'U' ? 8 : 0;
    if (digits == 0 || token.size() != digits + 2) {
      throw Error(ErrorKind::kParse, "bad escape '" + std::string(token) + "'");
    }
    char32_t cp = 0;
    for (std::size_t i = 2; i < token.size(); ++i) {
      const char c = token[i];
      int v = 0;
      if (c >= '0' && c <= '9') v = c - '0';
      else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
      else throw Error(ErrorKind::kParse, "bad escape '" + std::string(token) + "'");
      cp = cp * 16 + static_cast<char32_t>(v);
    }
    return cp;
  }
  std::u32string decoded = utf8::decode(token);
  if (decoded.size() != 1) {
    throw Error(ErrorKind::kParse, "expected one symbol, got '" + std::string(token) + "'");
  }
  return decoded[0];
}

void Vocabulary::write(std::ostream& out) const {
  out << "# ctcslu vocabulary v1\n";
  for (const Unit& u : units_) {
    switch (u.kind) {
      case UnitKind::kBlank: out << "blank\n"; break;
      case UnitKind::kGrapheme: out << "grapheme " << escape_symbol(u.symbol) << '\n'; break;
      case UnitKind::kOpening:
        out << "opening " << escape_symbol(u.symbol) << ' ' << u.tag << '\n';
        break;
      case UnitKind::kClosing: out << "closing " << escape_symbol(u.symbol) << '\n'; break;
      case UnitKind::kStar: out << "star " << escape_symbol(u.symbol) << '\n'; break;
    }
  }
}

Vocabulary Vocabulary::parse(std::istream& in) {
  std::vector<Unit> units;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank_line(line) || line[0] == '#') continue;
    const auto fields = split_ws(line);
    auto need = [&](std::size_t n) {
      if (fields.size() != n) {
        throw Error(ErrorKind::kParse, "vocabulary line " + std::to_string(line_no) +
                                           ": expected " + std::to_string(n) + " fields");
      }
    };
    const std::string& kind = fields[0];
    try {
      if (kind == "blank") {
        need(1);
        units.push_back({UnitKind::kBlank, 0, {}});
      } else if (kind == "grapheme") {
        need(2);
        units.push_back({UnitKind::kGrapheme, unescape_symbol(fields[1]), {}});
      } else if (kind == "opening") {
        need(3);
        units.push_back({UnitKind::kOpening, unescape_symbol(fields[1]), fields[2]});
      } else if (kind == "closing") {
        need(2);
        units.push_back({UnitKind::kClosing, unescape_symbol(fields[1]), {}});
      } else if (kind == "star") {
        need(2);
        units.push_back({UnitKind::kStar, unescape_symbol(fields[1]), {}});
      } else {
        throw Error(ErrorKind::kParse, "unknown unit kind '" + kind + "'");
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kParse) throw;
      throw Error(ErrorKind::kParse,
                  "vocabulary line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return Vocabulary(std::move(units));
}

void Vocabulary::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  write(out);
}

Vocabulary Vocabulary::read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open vocabulary " + path.string());
  return parse(in);
}

// ---------------------------------------------------------------------------
// BIO / chunk codec

std::string BioToken::label() const {
  switch (prefix) {
    case BioPrefix::kOutside: return "O";
    case BioPrefix::kBegin: return "B-" + tag;
    case BioPrefix::kInside: return "I-" + tag;
  }
  return "O";
}

BioToken make_bio_token(std::string word, std::string_view label) {
  if (label == "O") return {std::move(word), BioPrefix::kOutside, {}};
  if (label.size() > 2 && label[1] == '-' && (label[0] == 'B' || label[0] == 'I')) {
    return {std::move(word), label[0] == 'B' ? BioPrefix::kBegin : BioPrefix::kInside,
            std::string(label.substr(2))};
  }
  throw Error(ErrorKind::kParse, "bad BIO label '" + std::string(label) + "'");
}

ChunkedTranscript bio_to_chunk(const BioTranscript& bio, const TagInventory& inventory) {
  std::u32string out;
  bool open = false;
  std::string open_tag;
  for (std::size_t i = 0; i < bio.size(); ++i) {
    const BioToken& tok = bio[i];
    const std::u32string word = utf8::decode(tok.word);
    if (word.empty() || word.find(kSeparator) != std::u32string::npos) {
      throw Error(ErrorKind::kMalformedChunk,
                  "token " + std::to_string(i) + " is empty or contains a separator");
    }
    if (tok.prefix == BioPrefix::kInside && (!open || open_tag != tok.tag)) {
      throw Error(ErrorKind::kMalformedChunk,
                  "I-" + tok.tag + " at token " + std::to_string(i) +
                      " does not continue a chunk of the same tag");
    }
    const bool continues = tok.prefix == BioPrefix::kInside;
    if (open && !continues) {
      out.push_back(inventory.closing_symbol());
      open = false;
    }
    if (i > 0) out.push_back(kSeparator);
    if (tok.prefix == BioPrefix::kBegin) {
      out.push_back(inventory.opening_symbol(tok.tag));
      open = true;
      open_tag = tok.tag;
    }
    out += word;
  }
  if (open) out.push_back(inventory.closing_symbol());
  return {std::move(out)};
}

BioTranscript chunk_to_bio(const ChunkedTranscript& chunked, const TagInventory& inventory) {
  BioTranscript out;
  const std::u32string& text = chunked.text;
  const std::string* open_tag = nullptr;
  bool chunk_has_word = false;
  std::u32string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (open_tag != nullptr) {
      out.push_back({utf8::encode(word),
                     chunk_has_word ? BioPrefix::kInside : BioPrefix::kBegin, *open_tag});
      chunk_has_word = true;
    } else {
      out.push_back({utf8::encode(word), BioPrefix::kOutside, {}});
    }
    word.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char32_t c = text[i];
    if (c == kSeparator) {
      flush();
    } else if (const std::string* tag = inventory.tag_for(c)) {
      flush();
      if (open_tag != nullptr) {
        throw Error(ErrorKind::kMalformedChunk,
                    "opening symbol inside an open chunk at offset " + std::to_string(i));
      }
      open_tag = tag;
      chunk_has_word = false;
    } else if (inventory.is_closing(c)) {
      flush();
      if (open_tag == nullptr) {
        throw Error(ErrorKind::kMalformedChunk,
                    "closing symbol without an open chunk at offset " + std::to_string(i));
      }
      if (!chunk_has_word) {
        throw Error(ErrorKind::kMalformedChunk, "empty chunk at offset " + std::to_string(i));
      }
      open_tag = nullptr;
    } else {
      word.push_back(c);
    }
  }
  flush();
  if (open_tag != nullptr) {
    throw Error(ErrorKind::kMalformedChunk, "unclosed chunk '" + *open_tag + "'");
  }
  return out;
}

std::u32string normalize_separators(std::u32string_view text) {
  std::u32string out;
  bool pending = false;
  for (char32_t c : text) {
    if (c == kSeparator) {
      pending = !out.empty();
    } else {
      if (pending) out.push_back(kSeparator);
      pending = false;
      out.push_back(c);
    }
  }
  return out;
}

std::u32string strip_tags(std::u32string_view text, const TagInventory& inventory) {
  std::u32string out;
  for (char32_t c : text) {
    if (inventory.is_opening(c) || inventory.is_closing(c) || c == kStarSymbol) {
      out.push_back(kSeparator);
    } else {
      out.push_back(c);
    }
  }
  return normalize_separators(out);
}

LabelSequence encode(std::u32string_view text, const Vocabulary& vocab) {
  LabelSequence out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto id = vocab.index_of(text[i]);
    if (!id) {
      throw Error(ErrorKind::kEncoding, "character '" + escape_symbol(text[i]) + "' (" +
                                            utf8::code_point_label(text[i]) +
                                            ") at offset " + std::to_string(i) +
                                            " is not in the vocabulary");
    }
    out.push_back(*id);
  }
  return out;
}

LabelSequence encode(const ChunkedTranscript& chunked, const Vocabulary& vocab) {
  return encode(chunked.text, vocab);
}

LabelSequence star_map(std::span<const int> labels, const Vocabulary& vocab) {
  if (!vocab.has_star()) {
    throw Error(ErrorKind::kConfiguration, "star mapping needs a vocabulary with a star unit");
  }
  LabelSequence out;
  bool inside = false;
  bool outside_run = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int id = labels[i];
    if (id <= Vocabulary::blank() || static_cast<std::size_t>(id) >= vocab.size()) {
      throw Error(ErrorKind::kEncoding, "label " + std::to_string(id) + " at position " +
                                            std::to_string(i) + " is not a valid unit");
    }
    if (vocab.is_opening(id)) {
      if (inside) {
        throw Error(ErrorKind::kMalformedChunk,
                    "nested opening tag at position " + std::to_string(i));
      }
      if (outside_run) out.push_back(vocab.star());
      outside_run = false;
      inside = true;
      out.push_back(id);
    } else if (vocab.is_closing(id)) {
      if (!inside) {
        throw Error(ErrorKind::kMalformedChunk,
                    "closing tag without opening tag at position " + std::to_string(i));
      }
      inside = false;
      out.push_back(id);
    } else if (inside) {
      out.push_back(id);
    } else {
      outside_run = true;
    }
  }
  if (inside) throw Error(ErrorKind::kMalformedChunk, "unclosed chunk at end of sequence");
  if (outside_run) out.push_back(vocab.star());
  return out;
}

std::vector<ConceptChunk> parse_chunks(std::u32string_view text,
                                       const TagInventory& inventory,
                                       ChunkParseStats* stats) {
  ChunkParseStats local;
  std::vector<ConceptChunk> out;
  const std::string* open_tag = nullptr;
  std::u32string value;
  auto close = [&] {
    out.push_back({*open_tag, utf8::encode(normalize_separators(value)),
                   static_cast<int>(out.size())});
    open_tag = nullptr;
    value.clear();
  };
  for (char32_t c : text) {
    if (const std::string* tag = inventory.tag_for(c)) {
      if (open_tag != nullptr) {
        ++local.forced_closes;
        close();
      }
      open_tag = tag;
    } else if (inventory.is_closing(c)) {
      if (open_tag == nullptr) {
        ++local.orphans_dropped;
      } else {
        close();
      }
    } else if (open_tag != nullptr) {
      value.push_back(c == kStarSymbol ? kSeparator : c);
    }
  }
  if (open_tag != nullptr) {
    ++local.auto_closed;
    close();
  }
  if (stats != nullptr) *stats = local;
  return out;
}

}  // namespace ctcslu::tagcodec
