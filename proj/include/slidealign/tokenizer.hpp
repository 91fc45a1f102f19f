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

#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace slidealign {

/// Lowercase word tokenizer for the Q-Former text stream. Words are runs of
/// letters and digits; every other non-space character is its own token.
class WordTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;  // starts ITC and ITM text
  static constexpr int kSep = 3;  // ends every sequence
  static constexpr int kDec = 4;  // starts ITG text

  WordTokenizer();
  /// Vocabulary = specials followed by the sorted distinct words of `texts`.
  static WordTokenizer fit(const std::vector<std::string>& texts);
  static WordTokenizer from_vocabulary(const std::vector<std::string>& vocab);

  static std::vector<std::string> split(std::string_view text);

  /// [start, words..., SEP], truncated to max_len while keeping SEP.
  std::vector<int> encode(std::string_view text, int start_token, int max_len) const;
  std::string decode(const std::vector<int>& ids) const;

  int size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  /// CRC-32 of the vocabulary joined by newlines, as hex.
  std::string hash() const;

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, int> index_;
};

/// Byte-level character tokenizer for the decoder: PAD, BOS, EOS, UNK, then
/// the sorted distinct characters of the fitted corpus.
class CharTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  CharTokenizer();
  static CharTokenizer fit(const std::vector<std::string>& texts);
  static CharTokenizer from_alphabet(const std::string& alphabet);

  std::vector<int> encode(std::string_view text) const;  // no BOS/EOS
  std::string decode(const std::vector<int>& ids) const;   // specials dropped

  int size() const { return 4 + static_cast<int>(alphabet_.size()); }
  const std::string& alphabet() const { return alphabet_; }

 private:
  std::string alphabet_;
  int index_[256];
};

}  // namespace slidealign
