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

#ifndef CTCSLU_TAGCODEC_HPP_
#define CTCSLU_TAGCODEC_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctcslu::tagcodec {

inline constexpr char32_t kSeparator = U' ';
inline constexpr char32_t kClosingSymbol = 0xE000;
inline constexpr char32_t kFirstOpeningSymbol = 0xE001;
inline constexpr char32_t kLastOpeningSymbol = 0xF8FF;
inline constexpr char32_t kStarSymbol = 0x2605;  // BLACK STAR

// Ordered set of concept tags, each bound to a private-use opening symbol.
// All tags share one closing symbol.
class TagInventory {
 public:
  TagInventory() = default;
  // Assigns opening symbols consecutively from kFirstOpeningSymbol.
  explicit TagInventory(std::vector<std::string> tags);
  // Explicit assignment, as recorded in a vocabulary file.
  TagInventory(std::vector<std::string> tags, std::vector<char32_t> opening,
               char32_t closing);

  std::size_t size() const { return tags_.size(); }
  bool empty() const { return tags_.empty(); }
  const std::vector<std::string>& tags() const { return tags_; }
  const std::vector<char32_t>& opening_symbols() const { return opening_; }
  char32_t closing_symbol() const { return closing_; }

  bool contains(std::string_view tag) const;
  // Throws kInventoryMismatch for an unknown tag.
  char32_t opening_symbol(std::string_view tag) const;
  // Tag whose opening symbol is `symbol`, if any.
  const std::string* tag_for(char32_t symbol) const;
  bool is_opening(char32_t symbol) const { return tag_for(symbol) != nullptr; }
  bool is_closing(char32_t symbol) const { return symbol == closing_; }

  // One tag name per line; blank lines and '#' comments ignored.
  static TagInventory read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  friend bool operator==(const TagInventory&, const TagInventory&) = default;

 private:
  void index();

  std::vector<std::string> tags_;
  std::vector<char32_t> opening_;
  char32_t closing_ = kClosingSymbol;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::unordered_map<char32_t, std::size_t> by_symbol_;
};

TagInventory union_of(const TagInventory& a, const TagInventory& b);

enum class UnitKind { kBlank, kGrapheme, kOpening, kClosing, kStar };

struct Unit {
  UnitKind kind = UnitKind::kGrapheme;
  char32_t symbol = 0;
  std::string tag;  // opening units only

  friend bool operator==(const Unit&, const Unit&) = default;
};

// Output-unit inventory. Index layout: blank, base graphemes (including the
// word separator), opening symbols in inventory order, closing symbol, then
// the star unit when present.
class Vocabulary {
 public:
  Vocabulary() = default;
  static Vocabulary build(std::u32string_view graphemes,
                          const TagInventory& tags, bool with_star);
  // Validates layout and uniqueness.
  explicit Vocabulary(std::vector<Unit> units);

  std::size_t size() const { return units_.size(); }
  const Unit& unit(int id) const { return units_.at(static_cast<std::size_t>(id)); }
  const std::vector<Unit>& units() const { return units_; }

  static constexpr int blank() { return 0; }
  std::optional<int> index_of(char32_t symbol) const;
  bool has_star() const { return star_ >= 0; }
  int star() const { return star_; }
  int separator() const { return separator_; }
  bool has_tags() const { return closing_ >= 0; }
  bool is_opening(int id) const;
  bool is_closing(int id) const { return id == closing_ && id >= 0; }

  std::u32string base_graphemes() const;
  TagInventory tag_inventory() const;
  Vocabulary with_star() const;
  Vocabulary without_star() const;

  std::u32string render(std::span<const int> ids) const;

  void write(std::ostream& out) const;
  static Vocabulary parse(std::istream& in);
  void write_file(const std::filesystem::path& path) const;
  static Vocabulary read_file(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.units_ == b.units_;
  }

 private:
  std::vector<Unit> units_;
  std::unordered_map<char32_t, int> index_;
  int star_ = -1;
  int separator_ = -1;
  int closing_ = -1;
  int first_opening_ = -1;
};

enum class BioPrefix { kOutside, kBegin, kInside };

struct BioToken {
  std::string word;
  BioPrefix prefix = BioPrefix::kOutside;
  std::string tag;

  std::string label() const;  // "O", "B-tag", "I-tag"
  friend bool operator==(const BioToken&, const BioToken&) = default;
};

// Parses "O", "B-tag" or "I-tag"; throws kParse otherwise.
BioToken make_bio_token(std::string word, std::string_view label);

using BioTranscript = std::vector<BioToken>;

struct ChunkedTranscript {
  std::u32string text;
  friend bool operator==(const ChunkedTranscript&,
                         const ChunkedTranscript&) = default;
};

// Vocabulary indices, blank excluded.
using LabelSequence = std::vector<int>;

struct ConceptChunk {
  std::string tag;
  std::string value;  // UTF-8, separators trimmed and collapsed
  int position = 0;
  friend bool operator==(const ConceptChunk&, const ConceptChunk&) = default;
};

struct ChunkParseStats {
  int auto_closed = 0;
  int orphans_dropped = 0;
  int forced_closes = 0;
  int repairs() const { return auto_closed + orphans_dropped + forced_closes; }
};

ChunkedTranscript bio_to_chunk(const BioTranscript& bio,
                               const TagInventory& inventory);
BioTranscript chunk_to_bio(const ChunkedTranscript& chunked,
                           const TagInventory& inventory);

// Plain transcript: tag symbols and star removed, separators normalized.
std::u32string strip_tags(std::u32string_view text,
                          const TagInventory& inventory);

LabelSequence encode(const ChunkedTranscript& chunked, const Vocabulary& vocab);
LabelSequence encode(std::u32string_view text, const Vocabulary& vocab);

// Keeps every chunk (opening symbol through closing symbol) and replaces each
// maximal run of out-of-chunk units with one star unit.
LabelSequence star_map(std::span<const int> labels, const Vocabulary& vocab);

// Total parse of possibly malformed model output. Unclosed chunks are closed
// at end of input, orphan closing symbols are dropped, and an opening symbol
// inside an open chunk closes that chunk first.
std::vector<ConceptChunk> parse_chunks(std::u32string_view text,
                                       const TagInventory& inventory,
                                       ChunkParseStats* stats = nullptr);

// Trims separators at both ends and collapses internal runs to one.
std::u32string normalize_separators(std::u32string_view text);

// Escaping used by the vocabulary file format.
std::string escape_symbol(char32_t symbol);
char32_t unescape_symbol(std::string_view token);

}  // namespace ctcslu::tagcodec

#endif  // CTCSLU_TAGCODEC_HPP_
