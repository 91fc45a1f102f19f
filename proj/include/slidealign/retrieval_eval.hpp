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

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "slidealign/common.hpp"
#include "slidealign/match_oracle.hpp"

namespace slidealign {

enum class Modality { Image, Text };
std::string to_string(Modality m);

/// One indexed item. Image items from a multi-query encoder carry one row
/// per query; text items carry a single row.
struct RetrievalItem {
  std::string id;
  MatrixD embedding;
};

/// Similarity between two row sets: the maximum cosine over all row pairs.
double max_row_similarity(const MatrixD& a_unit, const MatrixD& b_unit);

class RetrievalIndex {
 public:
  /// Rows are normalised on the way in. Throws DuplicateId, DimMismatch,
  /// ZeroVector.
  RetrievalIndex(std::vector<RetrievalItem> items, Modality modality);

  /// Descending similarity, ties by id ascending; k is clamped to size().
  std::vector<std::pair<std::string, double>> query(const MatrixD& q, std::size_t k) const;

  /// Every item position, best first.
  std::vector<std::size_t> rank(const MatrixD& q) const;

  std::size_t size() const { return items_.size(); }
  Eigen::Index dim() const { return dim_; }
  Modality modality() const { return modality_; }
  const RetrievalItem& item(std::size_t i) const { return items_[i]; }
  std::optional<std::size_t> position(const std::string& id) const;

 private:
  std::vector<RetrievalItem> items_;
  Modality modality_;
  Eigen::Index dim_ = 0;
};

/// Unit-normalises every row; throws ZeroVector on an all-zero row.
MatrixD normalize_rows(const MatrixD& m);

/// relevant[q][c] = (c == ground_truth[q]) || oracle match of the two texts.
/// Throws MissingGroundTruth when a ground-truth index is out of range.
std::vector<std::vector<bool>> match_sets(const std::vector<std::string>& query_texts,
                                          const std::vector<std::string>& corpus_texts,
                                          const std::vector<int>& ground_truth,
                                          const MatchOracle& oracle);

/// Sorted distinct texts; the retrieval corpus for text targets.
std::vector<std::string> dedup_texts(const std::vector<std::string>& texts);

/// Metrics of one ranked binary relevance list (rank order).
double average_precision(const std::vector<bool>& ranked);
double ndcg(const std::vector<bool>& ranked);
bool hit_at(const std::vector<bool>& ranked, std::size_t k);

struct RetrievalReport {
  std::string dataset;
  std::string direction;
  double map = 0.0;
  double ndcg = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double top10 = 0.0;
  std::size_t n_queries = 0;  // evaluated queries
  std::size_t n_corpus = 0;
  std::vector<std::string> query_ids;
  std::vector<std::vector<std::string>> match_sets;  // relevant ids per evaluated query

  /// Mean of top-1, NDCG and MAP; the stage-1 early-stopping score.
  double selection_score() const { return (top1 + ndcg + map) / 3.0; }
};

/// Ranks the index for each query. relevance[q] is indexed by item position.
/// `exclude[q]`, when set, removes that item from query q's ranking (the
/// query image itself in image-to-image search). Queries without any
/// relevant item are skipped; NoEvaluableQueries if none remain.
RetrievalReport evaluate(const RetrievalIndex& index, const std::vector<std::string>& query_ids,
                         const std::vector<MatrixD>& queries,
                         const std::vector<std::vector<bool>>& relevance,
                         const std::vector<std::optional<std::size_t>>& exclude = {});

/// Image queries against the deduplicated text corpus built from
/// `image_texts`. text_embeddings[i] embeds texts[i] of the deduplicated list.
struct CrossModalCorpus {
  std::vector<std::string> image_ids;
  std::vector<MatrixD> image_embeddings;
  std::vector<std::string> image_texts;    // ground-truth text per image
  std::vector<std::string> texts;          // deduplicated, sorted
  std::vector<MatrixD> text_embeddings;    // one 1 x d row per text
};

CrossModalCorpus make_cross_modal_corpus(std::vector<std::string> image_ids,
                                         std::vector<MatrixD> image_embeddings,
                                         std::vector<std::string> image_texts);

RetrievalReport image_to_text(const CrossModalCorpus& c, const MatchOracle& oracle);
RetrievalReport text_to_image(const CrossModalCorpus& c, const MatchOracle& oracle);
RetrievalReport image_to_image(const CrossModalCorpus& c, const MatchOracle& oracle);

/// Fixed-width table with the columns dataset, direction, MAP, NDCG, top1,
/// top5, top10, n_queries, n_corpus.
std::string format_report_table(const std::vector<RetrievalReport>& reports);
std::string report_to_json_line(const RetrievalReport& r);

}  // namespace slidealign
