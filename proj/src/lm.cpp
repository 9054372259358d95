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


#include "ctcslu/lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "ctcslu/error.hpp"
#include "ctcslu/tagcodec.hpp"
#include "ctcslu/utf8.hpp"

namespace ctcslu::lm {
namespace {

constexpr double kArpaZero = -99.0;

double from_log10(double v) { return v * std::numbers::ln10; }
double to_log10(double v) { return v / std::numbers::ln10; }

bool is_space(char32_t c) { return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r'; }

bool is_standalone(char32_t c) {
  return (c >= tagcodec::kClosingSymbol && c <= tagcodec::kLastOpeningSymbol) ||
         c == tagcodec::kStarSymbol;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_fields(std::string_view s) {
  std::vector<std::string> fields;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) fields.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return fields;
}

bool is_special(std::string_view t) {
  return t == kSentenceStart || t == kSentenceEnd || t == kUnknown;
}

}  // namespace

Sentence tokenize(std::u32string_view text) {
  Sentence out;
  std::u32string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(utf8::encode(word));
    word.clear();
  };
  for (char32_t c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_standalone(c)) {
      flush();
      out.push_back(utf8::encode(c));
    } else {
      word.push_back(c);
    }
  }
  flush();
  return out;
}

std::size_t NgramModel::KeyHash::operator()(const std::vector<int>& key) const noexcept {
  std::size_t h = 0xcbf29ce484222325ULL;
  for (int v : key) {
    h ^= static_cast<std::size_t>(static_cast<unsigned>(v));
    h *= 0x100000001b3ULL;
  }
  return h;
}

void NgramModel::intern(std::vector<std::string> tokens) {
  std::set<std::string> rest;
  for (auto& t : tokens) {
    if (!is_special(t)) rest.insert(std::move(t));
  }
  tokens_ = {std::string(kUnknown), std::string(kSentenceStart), std::string(kSentenceEnd)};
  tokens_.insert(tokens_.end(), rest.begin(), rest.end());
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<int>(i));
  unknown_ = 0;
  start_ = 1;
  end_ = 2;
}

std::optional<int> NgramModel::find(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int NgramModel::token_id(std::string_view token) const { return find(token).value_or(unknown_); }

std::vector<int> NgramModel::predictable_tokens() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
    if (i != start_) out.push_back(i);
  }
  return out;
}

const NgramEntry* NgramModel::lookup(std::span<const int> key) const {
  if (key.empty() || key.size() > tables_.size()) return nullptr;
  const Table& table = tables_[key.size() - 1];
  const auto it = table.find(std::vector<int>(key.begin(), key.end()));
  return it == table.end() ? nullptr : &it->second;
}

double NgramModel::log_prob(std::span<const int> context, int token) const {
  const int vocab = static_cast<int>(tokens_.size());
  if (token < 0 || token >= vocab) throw Error(ErrorKind::kUsage, "lm: token id out of range");
  std::size_t len = std::min(context.size(), static_cast<std::size_t>(order_ - 1));
  std::vector<int> key(context.end() - static_cast<std::ptrdiff_t>(len), context.end());
  for (int& id : key) {
    if (id < 0 || id >= vocab) throw Error(ErrorKind::kUsage, "lm: context id out of range");
  }
  double penalty = 0.0;
  while (true) {
    key.push_back(token);
    if (const NgramEntry* e = lookup(key)) return penalty + e->log_prob;
    key.pop_back();
    if (key.empty()) break;
    if (const NgramEntry* c = lookup(key)) penalty += c->backoff;
    key.erase(key.begin());
  }
  // Only reachable for models read from files lacking a unigram.
  return penalty + from_log10(kArpaZero);
}

double NgramModel::log_prob(const Sentence& context, std::string_view token) const {
  std::vector<int> ids;
  ids.reserve(context.size());
  for (const auto& t : context) ids.push_back(token_id(t));
  return log_prob(ids, token_id(token));
}

double NgramModel::sentence_log_prob(const Sentence& sentence) const {
  std::vector<int> history{start_};
  double total = 0.0;
  for (const auto& t : sentence) {
    const int id = token_id(t);
    total += log_prob(history, id);
    history.push_back(id);
  }
  return total + log_prob(history, end_);
}

std::size_t NgramModel::ngram_count(int n) const {
  if (n < 1 || n > order_) return 0;
  return tables_[static_cast<std::size_t>(n - 1)].size();
}

std::vector<NgramEntry> NgramModel::entries(int n) const {
  std::vector<NgramEntry> out;
  if (n < 1 || n > order_) return out;
  for (const auto& [key, entry] : tables_[static_cast<std::size_t>(n - 1)]) out.push_back(entry);
  auto words = [&](const NgramEntry& e) {
    std::vector<std::string_view> w;
    for (int id : e.tokens) w.push_back(tokens_[static_cast<std::size_t>(id)]);
    return w;
  };
  std::sort(out.begin(), out.end(),
            [&](const NgramEntry& a, const NgramEntry& b) { return words(a) < words(b); });
  return out;
}

NgramModel NgramModel::estimate(const std::vector<Sentence>& corpus, int order) {
  if (order < 1) throw Error(ErrorKind::kUsage, "lm: order must be at least 1");
  if (corpus.empty()) throw Error(ErrorKind::kData, "lm: empty training corpus");
  std::vector<std::string> all;
  for (const auto& s : corpus) {
    for (const auto& t : s) {
      if (t.empty() || t.find_first_of(" \t\r\n") != std::string::npos) {
        throw Error(ErrorKind::kData, "lm: token contains whitespace or is empty");
      }
      if (t == kSentenceStart || t == kSentenceEnd) {
        throw Error(ErrorKind::kData, "lm: sentence boundary token inside a sentence");
      }
      all.push_back(t);
    }
  }
  NgramModel m;
  m.order_ = order;
  m.intern(std::move(all));
  const std::size_t n = static_cast<std::size_t>(order);

  std::vector<std::map<std::vector<int>, long>> counts(n);
  for (const auto& s : corpus) {
    std::vector<int> padded{m.start_};
    for (const auto& t : s) padded.push_back(m.ids_.at(t));
    padded.push_back(m.end_);
    for (std::size_t i = 1; i < padded.size(); ++i) {
      for (std::size_t k = 1; k <= n && k <= i + 1; ++k) {
        counts[k - 1][std::vector<int>(padded.begin() + static_cast<std::ptrdiff_t>(i + 1 - k),
                                       padded.begin() + static_cast<std::ptrdiff_t>(i + 1))]++;
      }
    }
  }

  m.tables_.assign(n, Table{});
  {
    long total = 0;
    for (const auto& [key, c] : counts[0]) total += c;
    const double types = static_cast<double>(counts[0].size());
    const double denom = static_cast<double>(total) + types;
    for (int id = 0; id < static_cast<int>(m.tokens_.size()); ++id) {
      NgramEntry e;
      e.tokens = {id};
      const auto it = counts[0].find(e.tokens);
      const double c = it == counts[0].end() ? 0.0 : static_cast<double>(it->second);
      if (id == m.start_) {
        e.log_prob = from_log10(kArpaZero);
      } else if (id == m.unknown_) {
        e.log_prob = std::log((c + types) / denom);
      } else {
        e.log_prob = std::log(c / denom);
      }
      m.tables_[0].emplace(e.tokens, std::move(e));
    }
  }
  for (std::size_t k = 2; k <= n; ++k) {
    std::map<std::vector<int>, std::pair<long, long>> context_stats;
    for (const auto& [key, c] : counts[k - 1]) {
      auto& st = context_stats[std::vector<int>(key.begin(), key.end() - 1)];
      st.first += c;
      st.second += 1;
    }
    for (const auto& [key, c] : counts[k - 1]) {
      const auto& st = context_stats.at(std::vector<int>(key.begin(), key.end() - 1));
      NgramEntry e;
      e.tokens = key;
      e.log_prob = std::log(static_cast<double>(c) / static_cast<double>(st.first + st.second));
      m.tables_[k - 1].emplace(key, std::move(e));
    }
    // Back-off weights for the contexts of this order, using the now-complete
    // lower-order distributions.
    std::map<std::vector<int>, double> seen_lower;
    for (const auto& [key, c] : counts[k - 1]) {
      const std::vector<int> lower_context(key.begin() + 1, key.end() - 1);
      seen_lower[std::vector<int>(key.begin(), key.end() - 1)] +=
          std::exp(m.log_prob(lower_context, key.back()));
    }
    for (const auto& [context, st] : context_stats) {
      NgramEntry& ce = m.tables_[k - 2].at(context);
      const double leftover =
          static_cast<double>(st.second) / static_cast<double>(st.first + st.second);
      const double remaining = std::max(1.0 - seen_lower.at(context), 1e-300);
      ce.backoff = std::log(leftover) - std::log(remaining);
      ce.has_backoff = true;
    }
  }
  return m;
}

void NgramModel::write_arpa(std::ostream& out) const {
  out << "\\data\\\n";
  for (int k = 1; k <= order_; ++k) out << "ngram " << k << "=" << ngram_count(k) << "\n";
  for (int k = 1; k <= order_; ++k) {
    out << "\n\\" << k << "-grams:\n";
    for (const NgramEntry& e : entries(k)) {
      const double lp = e.tokens.size() == 1 && e.tokens[0] == start_ ? kArpaZero
                                                                      : to_log10(e.log_prob);
      out << format_number(lp);
      for (int id : e.tokens) out << '\t' << tokens_[static_cast<std::size_t>(id)];
      if (e.has_backoff && k < order_) out << '\t' << format_number(to_log10(e.backoff));
      out << '\n';
    }
  }
  out << "\n\\end\\\n";
}

void NgramModel::write_arpa(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "lm: cannot write " + path.string());
  write_arpa(out);
  if (!out) throw Error(ErrorKind::kIo, "lm: write failed for " + path.string());
}

NgramModel NgramModel::read_arpa(std::istream& in) {
  int line_no = 0;
  std::string line;
  bool pending = false;
  auto fail = [&](const std::string& msg) {
    return Error(ErrorKind::kParse, "arpa line " + std::to_string(line_no) + ": " + msg);
  };
  auto next = [&]() -> bool {
    if (pending) {
      pending = false;
      return true;
    }
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  auto next_nonblank = [&]() -> bool {
    while (next()) {
      if (!trim(line).empty()) return true;
    }
    return false;
  };

  if (!next_nonblank() || trim(line) != "\\data\\") throw fail("expected \\data\\ header");
  std::vector<std::size_t> declared;
  while (next() && !trim(line).empty()) {
    const std::string_view t = trim(line);
    const std::string prefix = "ngram " + std::to_string(declared.size() + 1) + "=";
    if (t.substr(0, prefix.size()) != prefix) throw fail("malformed ngram count line");
    const std::string value(t.substr(prefix.size()));
    char* end = nullptr;
    const long long v = std::strtoll(value.c_str(), &end, 10);
    if (value.empty() || *end != '\0' || v < 0) throw fail("malformed ngram count");
    declared.push_back(static_cast<std::size_t>(v));
  }
  if (declared.empty()) throw fail("no ngram counts in header");
  const int order = static_cast<int>(declared.size());

  struct RawEntry {
    std::vector<std::string> words;
    double log10_prob;
    std::optional<double> log10_backoff;
  };
  std::vector<std::vector<RawEntry>> raw(declared.size());
  for (int k = 1; k <= order; ++k) {
    if (!next_nonblank()) throw fail("missing \\" + std::to_string(k) + "-grams: section");
    if (trim(line) != "\\" + std::to_string(k) + "-grams:") {
      throw fail("expected \\" + std::to_string(k) + "-grams: section");
    }
    while (next()) {
      const std::string_view t = trim(line);
      if (t.empty()) break;
      if (t.front() == '\\') {
        pending = true;
        break;
      }
      auto fields = split_fields(t);
      const std::size_t ku = static_cast<std::size_t>(k);
      if (fields.size() != ku + 1 && !(fields.size() == ku + 2 && k < order)) {
        throw fail("wrong number of fields for a " + std::to_string(k) + "-gram");
      }
      auto number = [&](const std::string& s) {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || *end != '\0' || !std::isfinite(v)) throw fail("bad number '" + s + "'");
        return v;
      };
      RawEntry e;
      e.log10_prob = number(fields[0]);
      if (e.log10_prob > 1e-9) throw fail("positive log probability");
      e.words.assign(fields.begin() + 1, fields.begin() + 1 + k);
      if (fields.size() == ku + 2) e.log10_backoff = number(fields.back());
      raw[ku - 1].push_back(std::move(e));
    }
    if (raw[static_cast<std::size_t>(k - 1)].size() != declared[static_cast<std::size_t>(k - 1)]) {
      throw fail(std::to_string(k) + "-gram section has " +
                 std::to_string(raw[static_cast<std::size_t>(k - 1)].size()) +
                 " entries but the header declares " +
                 std::to_string(declared[static_cast<std::size_t>(k - 1)]));
    }
  }
  if (!next_nonblank() || trim(line) != "\\end\\") throw fail("expected \\end\\");

  NgramModel m;
  m.order_ = order;
  std::vector<std::string> vocab;
  for (const auto& e : raw[0]) vocab.push_back(e.words[0]);
  m.intern(vocab);
  m.tables_.assign(declared.size(), Table{});
  for (std::size_t k = 0; k < raw.size(); ++k) {
    for (const auto& r : raw[k]) {
      NgramEntry e;
      for (const auto& w : r.words) {
        const auto id = m.find(w);
        if (!id || (k > 0 && !m.tables_[0].contains(std::vector<int>{*id}))) {
          throw Error(ErrorKind::kParse, "arpa: token '" + w + "' has no unigram entry");
        }
        e.tokens.push_back(*id);
      }
      e.log_prob = from_log10(r.log10_prob);
      if (r.log10_backoff) {
        e.backoff = from_log10(*r.log10_backoff);
        e.has_backoff = true;
      }
      if (!m.tables_[k].emplace(e.tokens, e).second) {
        throw Error(ErrorKind::kParse, "arpa: duplicate " + std::to_string(k + 1) + "-gram");
      }
    }
    if (k == 0) {
      for (int id : {m.unknown_, m.start_, m.end_}) {
        NgramEntry e;
        e.tokens = {id};
        e.log_prob = from_log10(kArpaZero);
        m.tables_[0].emplace(e.tokens, e);
      }
    }
  }
  return m;
}

NgramModel NgramModel::read_arpa(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "lm: cannot open " + path.string());
  return read_arpa(in);
}

}  // namespace ctcslu::lm
