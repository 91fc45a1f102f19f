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

#include "slidealign/match_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace slidealign {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::map<std::uint64_t, double> gram_counts(std::string_view raw) {
  const std::string text = normalize_whitespace_lower(raw);
  std::map<std::uint64_t, double> counts;
  if (text.empty()) return counts;
  if (text.size() < 3) {
    counts[fnv1a(text)] += 1.0;
    return counts;
  }
  for (std::size_t n = 3; n <= 5; ++n) {
    if (text.size() < n) break;
    for (std::size_t i = 0; i + n <= text.size(); ++i) {
      // Mix the gram length in so that different-length grams never share a key.
      counts[fnv1a(std::string_view(text).substr(i, n)) ^ (n * 0x9E3779B97F4A7C15ULL)] += 1.0;
    }
  }
  return counts;
}

}  // namespace

MatchOracle::MatchOracle(const std::vector<std::string>& fit_corpus, double threshold)
    : threshold_(threshold) {
  std::set<std::string> docs;
  for (const auto& t : fit_corpus) docs.insert(normalize_whitespace_lower(t));
  n_docs_ = docs.size();
  if (n_docs_ == 0) return;
  std::unordered_map<std::uint64_t, int> df;
  for (const auto& d : docs) {
    for (const auto& [g, c] : gram_counts(d)) ++df[g];
  }
  const double n = static_cast<double>(n_docs_);
  for (const auto& [g, f] : df) idf_[g] = std::log((1.0 + n) / (1.0 + f)) + 1.0;
  unseen_idf_ = std::log(1.0 + n) + 1.0;
}

double MatchOracle::idf(std::uint64_t gram) const {
  if (n_docs_ == 0) return 1.0;
  auto it = idf_.find(gram);
  return it == idf_.end() ? unseen_idf_ : it->second;
}

MatchOracle::SparseVector MatchOracle::embed(std::string_view text) const {
  SparseVector v;
  double norm2 = 0.0;
  for (const auto& [g, c] : gram_counts(text)) {
    const double w = c * idf(g);
    v.emplace_back(g, w);
    norm2 += w * w;
  }
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& e : v) e.second *= inv;
  }
  return v;
}

namespace {

double sparse_dot(const MatchOracle::SparseVector& a, const MatchOracle::SparseVector& b) {
  double s = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first < b[j].first) {
      ++i;
    } else if (b[j].first < a[i].first) {
      ++j;
    } else {
      s += a[i].second * b[j].second;
      ++i;
      ++j;
    }
  }
  return std::clamp(s, -1.0, 1.0);
}

}  // namespace

double MatchOracle::similarity(std::string_view a, std::string_view b) const {
  if (normalize_whitespace_lower(a) == normalize_whitespace_lower(b)) return 1.0;
  return sparse_dot(embed(a), embed(b));
}

MatrixD MatchOracle::pairwise(const std::vector<std::string>& texts) const {
  std::vector<SparseVector> vecs;
  std::vector<std::string> norm;
  vecs.reserve(texts.size());
  for (const auto& t : texts) {
    vecs.push_back(embed(t));
    norm.push_back(normalize_whitespace_lower(t));
  }
  const auto n = static_cast<Eigen::Index>(texts.size());
  MatrixD sim(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sim(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = norm[i] == norm[j] ? 1.0 : sparse_dot(vecs[i], vecs[j]);
      sim(i, j) = s;
      sim(j, i) = s;
    }
  }
  return sim;
}

std::vector<std::vector<bool>> fn_mask(const std::vector<std::string>& texts,
                                       const MatchOracle& oracle) {
  const MatrixD sim = oracle.pairwise(texts);
  const std::size_t n = texts.size();
  std::vector<std::vector<bool>> mask(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      mask[i][j] = i != j && sim(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) >
                                 oracle.threshold();
    }
  }
  return mask;
}

}  // namespace slidealign
