// Copyright 2026 The slidealign Authors.
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

#include "slidealign/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>

#include "slidealign/common.hpp"

namespace slidealign {

WordTokenizer::WordTokenizer() : vocab_{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[DEC]"} {
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_[vocab_[i]] = static_cast<int>(i);
}

WordTokenizer WordTokenizer::from_vocabulary(const std::vector<std::string>& vocab) {
  WordTokenizer t;
  for (const auto& w : vocab) {
    if (std::find(t.vocab_.begin(), t.vocab_.end(), w) == t.vocab_.end()) t.vocab_.push_back(w);
  }
  for (std::size_t i = 0; i < t.vocab_.size(); ++i) t.index_[t.vocab_[i]] = static_cast<int>(i);
  return t;
}

WordTokenizer WordTokenizer::fit(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& s : texts) {
    for (auto& w : split(s)) words.insert(std::move(w));
  }
  return from_vocabulary({words.begin(), words.end()});
}

std::vector<std::string> WordTokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    if (!std::isspace(c)) out.emplace_back(1, ch);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<int> WordTokenizer::encode(std::string_view text, int start_token, int max_len) const {
  std::vector<int> ids{start_token};
  for (const auto& w : split(text)) {
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  if (max_len >= 2 && static_cast<int>(ids.size()) + 1 > max_len) ids.resize(static_cast<std::size_t>(max_len - 1));
  ids.push_back(kSep);
  return ids;
}

std::string WordTokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id <= kDec && id != kUnk) continue;
    if (id < 0 || id >= size()) continue;
    const std::string& w = vocab_[static_cast<std::size_t>(id)];
    const bool word = std::isalnum(static_cast<unsigned char>(w[0]));
    if (!out.empty() && (word || w == ":")) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string WordTokenizer::hash() const {
  std::string joined;
  for (const auto& w : vocab_) joined += w + "\n";
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08x", crc32_of(joined.data(), joined.size()));
  return hex;
}

CharTokenizer::CharTokenizer() { std::fill(std::begin(index_), std::end(index_), kUnk); }

CharTokenizer CharTokenizer::from_alphabet(const std::string& alphabet) {
  CharTokenizer t;
  std::set<char> chars(alphabet.begin(), alphabet.end());
  t.alphabet_.assign(chars.begin(), chars.end());
  for (std::size_t i = 0; i < t.alphabet_.size(); ++i) {
    t.index_[static_cast<unsigned char>(t.alphabet_[i])] = 4 + static_cast<int>(i);
  }
  return t;
}

CharTokenizer CharTokenizer::fit(const std::vector<std::string>& texts) {
  std::string all;
  for (const auto& s : texts) all += s;
  return from_alphabet(all);
}

std::vector<int> CharTokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(index_[static_cast<unsigned char>(c)]);
  return out;
}

std::string CharTokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id >= 4 && id < size()) out.push_back(alphabet_[static_cast<std::size_t>(id - 4)]);
  }
  return out;
}

}  // namespace slidealign
