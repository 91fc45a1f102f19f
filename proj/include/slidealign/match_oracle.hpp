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

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slidealign/common.hpp"

namespace slidealign {

/// Deterministic text-similarity oracle: character 3-5-gram TF-IDF vectors
/// compared by cosine. Texts scoring strictly above the threshold count as
/// the same diagnosis, both for false-negative masking during training and
/// for relevance in retrieval evaluation.
class MatchOracle {
 public:
  static constexpr double kDefaultThreshold = 0.985;

  /// IDF is fitted on `fit_corpus`; with an empty corpus every n-gram has
  /// weight 1.
  explicit MatchOracle(const std::vector<std::string>& fit_corpus = {},
                       double threshold = kDefaultThreshold);

  double similarity(std::string_view a, std::string_view b) const;
  bool matches(std::string_view a, std::string_view b) const {
    return similarity(a, b) > threshold_;
  }

  /// Symmetric similarity table with unit diagonal.
  MatrixD pairwise(const std::vector<std::string>& texts) const;

  double threshold() const { return threshold_; }
  std::size_t fitted_documents() const { return n_docs_; }
  static std::string version() { return "char3-5-tfidf-v1"; }

  using SparseVector = std::vector<std::pair<std::uint64_t, double>>;
  SparseVector embed(std::string_view text) const;

 private:
  double idf(std::uint64_t gram) const;

  std::unordered_map<std::uint64_t, double> idf_;
  double unseen_idf_ = 1.0;
  std::size_t n_docs_ = 0;
  double threshold_;
};

/// mask(i, j) is true iff i != j and the oracle matches texts i and j.
std::vector<std::vector<bool>> fn_mask(const std::vector<std::string>& texts,
                                       const MatchOracle& oracle);

}  // namespace slidealign
