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

#include <random>
#include <sstream>

#include "ctcslu/error.hpp"
#include "ctcslu/tagcodec.hpp"
#include "ctcslu/utf8.hpp"
#include "doctest.h"
#include "test_util.hpp"

namespace ctcslu::tagcodec {
namespace {

using testing::booking_inventory;
using testing::booking_ner_bio;
using testing::booking_vocabulary;

// Opening symbols of booking_inventory(): amount, location/city, time/date.
const std::u32string kBookingChunked =
    U"I would like to book \uE001three\uE000 double rooms in \uE002Paris\uE000"
    U" for \uE003tomorrow\uE000";
const std::u32string kBookingStar =
    U"★\uE001three\uE000★\uE002Paris\uE000★\uE003tomorrow\uE000";

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kUsage;
}

TEST_CASE("bio_to_chunk on the booking sentence") {
  const ChunkedTranscript c = bio_to_chunk(booking_ner_bio(), booking_inventory());
  CHECK(c.text == kBookingChunked);
}

TEST_CASE("bio_to_chunk passes outside words through") {
  BioTranscript bio{{"hello", BioPrefix::kOutside, {}}, {"world", BioPrefix::kOutside, {}}};
  CHECK(bio_to_chunk(bio, booking_inventory()).text == U"hello world");
}

TEST_CASE("bio_to_chunk single tagged token") {
  BioTranscript bio{{"Paris", BioPrefix::kBegin, "location/city"}};
  CHECK(bio_to_chunk(bio, booking_inventory()).text == U"\uE002Paris\uE000");
}

TEST_CASE("bio_to_chunk multi-word chunks and adjacent chunks") {
  BioTranscript bio{{"new", BioPrefix::kBegin, "location/city"},
                    {"york", BioPrefix::kInside, "location/city"},
                    {"two", BioPrefix::kBegin, "amount"}};
  CHECK(bio_to_chunk(bio, booking_inventory()).text ==
        U"\uE002new york\uE000 \uE001two\uE000");
}

TEST_CASE("bio_to_chunk errors") {
  BioTranscript unknown{{"x", BioPrefix::kBegin, "weather"}};
  CHECK(kind_of([&] { bio_to_chunk(unknown, booking_inventory()); }) ==
        ErrorKind::kInventoryMismatch);
  BioTranscript dangling{{"x", BioPrefix::kInside, "amount"}};
  CHECK(kind_of([&] { bio_to_chunk(dangling, booking_inventory()); }) ==
        ErrorKind::kMalformedChunk);
  BioTranscript switched{{"x", BioPrefix::kBegin, "amount"},
                         {"y", BioPrefix::kInside, "person"}};
  CHECK(kind_of([&] { bio_to_chunk(switched, booking_inventory()); }) ==
        ErrorKind::kMalformedChunk);
}

TEST_CASE("chunk_to_bio inverts the booking sentence") {
  CHECK(chunk_to_bio({kBookingChunked}, booking_inventory()) == booking_ner_bio());
  const BioTranscript plain = chunk_to_bio({U"hello world"}, booking_inventory());
  REQUIRE(plain.size() == 2);
  CHECK(plain[0].label() == "O");
  CHECK(plain[1].word == "world");
}

TEST_CASE("chunk_to_bio rejects malformed input") {
  const TagInventory inv = booking_inventory();
  CHECK(kind_of([&] { chunk_to_bio({U"go to \uE002Paris"}, inv); }) ==
        ErrorKind::kMalformedChunk);
  CHECK(kind_of([&] { chunk_to_bio({U"Paris\uE000"}, inv); }) ==
        ErrorKind::kMalformedChunk);
  CHECK(kind_of([&] { chunk_to_bio({U"\uE002a \uE001b\uE000"}, inv); }) ==
        ErrorKind::kMalformedChunk);
  CHECK(kind_of([&] { chunk_to_bio({U"\uE002\uE000"}, inv); }) ==
        ErrorKind::kMalformedChunk);
}

TEST_CASE("roundtrip and entity recovery on generated sentences") {
  std::mt19937_64 rng(11);
  const TagInventory inv = booking_inventory();
  for (int i = 0; i < 1000; ++i) {
    const BioTranscript bio = testing::random_bio(rng, inv);
    const ChunkedTranscript c = bio_to_chunk(bio, inv);
    REQUIRE(chunk_to_bio(c, inv) == bio);

    ChunkParseStats stats;
    const auto chunks = parse_chunks(c.text, inv, &stats);
    CHECK(stats.repairs() == 0);
    std::vector<std::pair<std::string, std::string>> expected;
    for (const BioToken& t : bio) {
      if (t.prefix == BioPrefix::kBegin) expected.emplace_back(t.tag, t.word);
      if (t.prefix == BioPrefix::kInside) expected.back().second += " " + t.word;
    }
    REQUIRE(chunks.size() == expected.size());
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      CHECK(chunks[k].tag == expected[k].first);
      CHECK(chunks[k].value == expected[k].second);
      CHECK(chunks[k].position == static_cast<int>(k));
    }
  }
}

TEST_CASE("encode looks up one id per character") {
  const Vocabulary v({{UnitKind::kBlank, 0, {}},
                      {UnitKind::kGrapheme, U'a', {}},
                      {UnitKind::kGrapheme, U'b', {}}});
  CHECK(encode(std::u32string_view(U"ab"), v) == LabelSequence{1, 2});
  CHECK(encode(std::u32string_view(U""), v).empty());
  try {
    encode(std::u32string_view(U"abc"), v);
    FAIL("expected encoding error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEncoding);
    CHECK(std::string(e.what()).find("'c'") != std::string::npos);
  }
}

TEST_CASE("encode then render reproduces generated chunked text") {
  std::mt19937_64 rng(5);
  const TagInventory inv = booking_inventory();
  const Vocabulary v = booking_vocabulary(false);
  for (int i = 0; i < 1000; ++i) {
    const ChunkedTranscript c = bio_to_chunk(testing::random_bio(rng, inv), inv);
    const LabelSequence ids = encode(c, v);
    REQUIRE(ids.size() == c.text.size());
    for (int id : ids) REQUIRE(id != Vocabulary::blank());
    REQUIRE(v.render(ids) == c.text);
  }
}

TEST_CASE("star_map on the booking sentence") {
  const Vocabulary v = booking_vocabulary(true);
  const LabelSequence l = encode(std::u32string_view(kBookingChunked), v);
  CHECK(v.render(star_map(l, v)) == kBookingStar);
}

TEST_CASE("star_map degenerate inputs") {
  const Vocabulary v = booking_vocabulary(true);
  CHECK(star_map(encode(std::u32string_view(U"hello world"), v), v) ==
        LabelSequence{v.star()});
  const LabelSequence chunk = encode(std::u32string_view(U"\uE002new york\uE000"), v);
  CHECK(star_map(chunk, v) == chunk);
  CHECK(star_map(LabelSequence{}, v).empty());
  // Space between two adjacent chunks is an outside run.
  CHECK(v.render(star_map(encode(std::u32string_view(U"\uE001a\uE000 \uE002b\uE000"), v), v)) ==
        U"\uE001a\uE000★\uE002b\uE000");
}

TEST_CASE("star_map errors") {
  const Vocabulary plain = booking_vocabulary(false);
  const LabelSequence l = encode(std::u32string_view(U"ab"), plain);
  CHECK(kind_of([&] { star_map(l, plain); }) == ErrorKind::kConfiguration);
  const Vocabulary v = booking_vocabulary(true);
  CHECK(kind_of([&] { star_map(encode(std::u32string_view(U"\uE001ab"), v), v); }) ==
        ErrorKind::kMalformedChunk);
  CHECK(kind_of([&] { star_map(encode(std::u32string_view(U"ab\uE000"), v), v); }) ==
        ErrorKind::kMalformedChunk);
}

TEST_CASE("star_map properties on generated sentences") {
  std::mt19937_64 rng(99);
  const TagInventory inv = booking_inventory();
  const Vocabulary v = booking_vocabulary(true);
  for (int i = 0; i < 500; ++i) {
    const LabelSequence l = encode(bio_to_chunk(testing::random_bio(rng, inv), inv), v);
    const LabelSequence s = star_map(l, v);
    CHECK(s.size() <= l.size());
    CHECK(star_map(s, v) == s);
    // Count maximal outside runs directly.
    int runs = 0;
    bool inside = false;
    bool in_run = false;
    for (int id : l) {
      if (v.is_opening(id)) {
        inside = true;
        in_run = false;
      } else if (v.is_closing(id)) {
        inside = false;
      } else if (!inside && !in_run) {
        ++runs;
        in_run = true;
      }
    }
    CHECK(std::count(s.begin(), s.end(), v.star()) == runs);
  }
}

TEST_CASE("parse_chunks on well-formed text") {
  const auto chunks = parse_chunks(kBookingChunked, booking_inventory());
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0] == ConceptChunk{"amount", "three", 0});
  CHECK(chunks[1] == ConceptChunk{"location/city", "Paris", 1});
  CHECK(chunks[2] == ConceptChunk{"time/date", "tomorrow", 2});
}

TEST_CASE("parse_chunks repairs malformed text") {
  const TagInventory inv = booking_inventory();
  ChunkParseStats stats;
  auto chunks = parse_chunks(U"go to \uE002 new  york ", inv, &stats);
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0].value == "new york");
  CHECK(stats.auto_closed == 1);

  chunks = parse_chunks(U"paris\uE000 today", inv, &stats);
  CHECK(chunks.empty());
  CHECK(stats.orphans_dropped == 1);

  chunks = parse_chunks(U"\uE001two \uE002rome\uE000", inv, &stats);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0] == ConceptChunk{"amount", "two", 0});
  CHECK(chunks[1] == ConceptChunk{"location/city", "rome", 1});
  CHECK(stats.forced_closes == 1);
}

TEST_CASE("strip_tags recovers the plain transcript") {
  CHECK(strip_tags(kBookingChunked, booking_inventory()) ==
        U"I would like to book three double rooms in Paris for tomorrow");
}

TEST_CASE("vocabulary layout and file round-trip") {
  const Vocabulary v = booking_vocabulary(true);
  CHECK(v.unit(0).kind == UnitKind::kBlank);
  CHECK(v.separator() == 1);
  CHECK(v.star() == static_cast<int>(v.size()) - 1);
  CHECK(v.is_closing(v.star() - 1));
  CHECK(v.tag_inventory() == booking_inventory());
  CHECK(v.without_star().with_star() == v);

  std::stringstream ss;
  v.write(ss);
  CHECK(ss.str().find("grapheme \\u0020") != std::string::npos);
  CHECK(ss.str().find("opening \\uE001 amount") != std::string::npos);
  CHECK(Vocabulary::parse(ss) == v);
}

TEST_CASE("vocabulary rejects bad layouts") {
  CHECK(kind_of([] {
          Vocabulary({{UnitKind::kGrapheme, U'a', {}}, {UnitKind::kBlank, 0, {}}});
        }) == ErrorKind::kConfiguration);
  CHECK(kind_of([] {
          Vocabulary({{UnitKind::kBlank, 0, {}},
                      {UnitKind::kGrapheme, U'a', {}},
                      {UnitKind::kGrapheme, U'a', {}}});
        }) == ErrorKind::kConfiguration);
  std::istringstream bad("blank\ngrapheme ab\n");
  CHECK(kind_of([&] { Vocabulary::parse(bad); }) == ErrorKind::kParse);
}

TEST_CASE("escape_symbol round-trips awkward code points") {
  for (char32_t cp : {U' ', U'\\', U'\t', U'a', U'é', char32_t{0xE005}, char32_t{0x1F600},
                      kStarSymbol}) {
    CHECK(unescape_symbol(escape_symbol(cp)) == cp);
  }
}

TEST_CASE("inventory invariants") {
  CHECK(kind_of([] { TagInventory({"a", "a"}); }) == ErrorKind::kInventoryMismatch);
  CHECK(kind_of([] { TagInventory({"a", "b"}, {0xE001, 0xE001}, 0xE000); }) ==
        ErrorKind::kInventoryMismatch);
  CHECK(kind_of([] { TagInventory({"a"}, {0xE000}, 0xE000); }) ==
        ErrorKind::kInventoryMismatch);
  const TagInventory u = union_of(TagInventory({"a", "b"}), TagInventory({"b", "c"}));
  CHECK(u.tags() == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("utf8 decoding is strict") {
  CHECK(utf8::decode("h\xC3\xA9") == U"hé");
  CHECK(utf8::encode(U"★") == "\xE2\x98\x85");
  CHECK(kind_of([] { utf8::decode("\xC3"); }) == ErrorKind::kEncoding);
  CHECK(kind_of([] { utf8::decode("\xC0\x80"); }) == ErrorKind::kEncoding);
}

}  // namespace
}  // namespace ctcslu::tagcodec
