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


#ifndef CTCSLU_LM_HPP_
#define CTCSLU_LM_HPP_

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctcslu::lm {

inline constexpr std::string_view kSentenceStart = "<s>";
inline constexpr std::string_view kSentenceEnd = "</s>";
inline constexpr std::string_view kUnknown = "<unk>";

using Sentence = std::vector<std::string>;

// Splits chunked text into LM tokens. Words are delimited by whitespace;
// tag symbols (private-use code points) and the star are tokens on their own.
Sentence tokenize(std::u32string_view text);

struct NgramEntry {
  std::vector<int> tokens;
  double log_prob = 0.0;  // natural log
  double backoff = 0.0;   // natural log, 0 when absent
  bool has_backoff = false;
};

// Back-off n-gram model over a closed token vocabulary plus <unk>.
// Probabilities are natural logs in memory and log10 in ARPA files.
class NgramModel {
 public:
  // Witten-Bell discounting with back-off. Unigram leftover mass goes to
  // <unk>. Throws kData on an empty corpus, kUsage when order < 1.
  static NgramModel estimate(const std::vector<Sentence>& corpus, int order);

  int order() const { return order_; }
  std::size_t vocabulary_size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view token) const;
  // Unknown tokens map to <unk>.
  int token_id(std::string_view token) const;
  int sentence_start() const { return start_; }
  int sentence_end() const { return end_; }
  int unknown() const { return unknown_; }

  // Every token that can be predicted (all but <s>).
  std::vector<int> predictable_tokens() const;

  // ln P(token | context). Only the last order-1 context tokens are used.
  double log_prob(std::span<const int> context, int token) const;
  double log_prob(const Sentence& context, std::string_view token) const;
  // Includes the </s> transition.
  double sentence_log_prob(const Sentence& sentence) const;

  std::size_t ngram_count(int n) const;
  // Stored n-grams of length n, sorted by token strings.
  std::vector<NgramEntry> entries(int n) const;

  void write_arpa(std::ostream& out) const;
  void write_arpa(const std::filesystem::path& path) const;
  // Throws kParse naming the offending line.
  static NgramModel read_arpa(std::istream& in);
  static NgramModel read_arpa(const std::filesystem::path& path);

 private:
  struct KeyHash {
    std::size_t operator()(const std::vector<int>& key) const noexcept;
  };
  using Table = std::unordered_map<std::vector<int>, NgramEntry, KeyHash>;

  void intern(std::vector<std::string> tokens);
  const NgramEntry* lookup(std::span<const int> key) const;

  int order_ = 0;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int unknown_ = -1;
  int start_ = -1;
  int end_ = -1;
  std::vector<Table> tables_;
};

}  // namespace ctcslu::lm

#endif  // CTCSLU_LM_HPP_
