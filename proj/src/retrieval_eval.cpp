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

#include "slidealign/retrieval_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace slidealign {

std::string to_string(Modality m) { return m == Modality::Image ? "image" : "text"; }

MatrixD normalize_rows(const MatrixD& m) {
  MatrixD out = m;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw data_error("ZeroVector", "cannot normalise a zero or non-finite row");
    out.row(r) /= n;
  }
  return out;
}

double max_row_similarity(const MatrixD& a, const MatrixD& b) {
  return (a * b.transpose()).maxCoeff();
}

RetrievalIndex::RetrievalIndex(std::vector<RetrievalItem> items, Modality modality)
    : modality_(modality) {
  std::set<std::string> seen;
  for (auto& it : items) {
    if (!seen.insert(it.id).second) throw data_error("DuplicateId", it.id);
    if (it.embedding.rows() == 0) throw data_error("DimMismatch", it.id + " has no rows");
    if (dim_ == 0) dim_ = it.embedding.cols();
    if (it.embedding.cols() != dim_) {
      throw data_error("DimMismatch", it.id + " has dimension " + std::to_string(it.embedding.cols()));
    }
    it.embedding = normalize_rows(it.embedding);
  }
  items_ = std::move(items);
}

std::optional<std::size_t> RetrievalIndex::position(const std::string& id) const {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].id == id) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> RetrievalIndex::rank(const MatrixD& q) const {
  if (q.cols() != dim_) throw data_error("DimMismatch", "query dimension differs from index");
  const MatrixD qn = normalize_rows(q);
  std::vector<double> sim(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) sim[i] = max_row_similarity(items_[i].embedding, qn);
  std::vector<std::size_t> order(items_.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sim[a] != sim[b]) return sim[a] > sim[b];
    return items_[a].id < items_[b].id;
  });
  return order;
}

std::vector<std::pair<std::string, double>> RetrievalIndex::query(const MatrixD& q, std::size_t k) const {
  const MatrixD qn = normalize_rows(q);
  const auto order = rank(q);
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
    out.emplace_back(items_[order[i]].id, max_row_similarity(items_[order[i]].embedding, qn));
  }
  return out;
}

std::vector<std::vector<bool>> match_sets(const std::vector<std::string>& query_texts,
                                          const std::vector<std::string>& corpus_texts,
                                          const std::vector<int>& ground_truth,
                                          const MatchOracle& oracle) {
  if (ground_truth.size() != query_texts.size()) {
    throw data_error("MissingGroundTruth", "one ground-truth index per query is required");
  }
  std::vector<std::vector<bool>> rel(query_texts.size(), std::vector<bool>(corpus_texts.size(), false));
  for (std::size_t q = 0; q < query_texts.size(); ++q) {
    const int gt = ground_truth[q];
    if (gt < 0 || static_cast<std::size_t>(gt) >= corpus_texts.size()) {
      throw data_error("MissingGroundTruth", "query " + std::to_string(q) + " has no ground-truth entry");
    }
    for (std::size_t c = 0; c < corpus_texts.size(); ++c) {
      rel[q][c] = static_cast<int>(c) == gt || oracle.matches(query_texts[q], corpus_texts[c]);
    }
  }
  return rel;
}

std::vector<std::string> dedup_texts(const std::vector<std::string>& texts) {
  std::set<std::string> s(texts.begin(), texts.end());
  return {s.begin(), s.end()};
}

double average_precision(const std::vector<bool>& ranked) {
  double hits = 0, sum = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (!ranked[k]) continue;
    hits += 1;
    sum += hits / static_cast<double>(k + 1);
  }
  return hits > 0 ? sum / hits : 0.0;
}

double ndcg(const std::vector<bool>& ranked) {
  double dcg = 0, idcg = 0;
  std::size_t n_rel = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (ranked[k]) {
      dcg += 1.0 / std::log2(static_cast<double>(k) + 2.0);
      ++n_rel;
    }
  }
  for (std::size_t k = 0; k < n_rel; ++k) idcg += 1.0 / std::log2(static_cast<double>(k) + 2.0);
  return idcg > 0 ? dcg / idcg : 0.0;
}

bool hit_at(const std::vector<bool>& ranked, std::size_t k) {
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    if (ranked[i]) return true;
  }
  return false;
}

RetrievalReport evaluate(const RetrievalIndex& index, const std::vector<std::string>& query_ids,
                         const std::vector<MatrixD>& queries,
                         const std::vector<std::vector<bool>>& relevance,
                         const std::vector<std::optional<std::size_t>>& exclude) {
  if (queries.size() != relevance.size() || queries.size() != query_ids.size()) {
    throw data_error("DimMismatch", "queries, ids and relevance rows differ in count");
  }
  RetrievalReport rep;
  rep.n_corpus = index.size();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    if (relevance[q].size() != index.size()) throw data_error("DimMismatch", "relevance row length");
    const std::size_t skip = q < exclude.size() && exclude[q] ? *exclude[q] : index.size();
    std::vector<bool> ranked;
    std::vector<std::string> matches;
    for (std::size_t pos : index.rank(queries[q])) {
      if (pos == skip) continue;
      ranked.push_back(relevance[q][pos]);
      if (relevance[q][pos]) matches.push_back(index.item(pos).id);
    }
    if (matches.empty()) continue;
    rep.map += average_precision(ranked);
    rep.ndcg += ndcg(ranked);
    rep.top1 += hit_at(ranked, 1);
    rep.top5 += hit_at(ranked, 5);
    rep.top10 += hit_at(ranked, 10);
    rep.query_ids.push_back(query_ids[q]);
    std::sort(matches.begin(), matches.end());
    rep.match_sets.push_back(std::move(matches));
    ++rep.n_queries;
  }
  if (rep.n_queries == 0) throw data_error("NoEvaluableQueries", "every query has an empty match set");
  const double n = static_cast<double>(rep.n_queries);
  rep.map /= n;
  rep.ndcg /= n;
  rep.top1 /= n;
  rep.top5 /= n;
  rep.top10 /= n;
  return rep;
}

CrossModalCorpus make_cross_modal_corpus(std::vector<std::string> image_ids,
                                         std::vector<MatrixD> image_embeddings,
                                         std::vector<std::string> image_texts) {
  CrossModalCorpus c;
  c.image_ids = std::move(image_ids);
  c.image_embeddings = std::move(image_embeddings);
  c.image_texts = std::move(image_texts);
  c.texts = dedup_texts(c.image_texts);
  return c;
}

namespace {

int text_position(const CrossModalCorpus& c, const std::string& t) {
  const auto it = std::lower_bound(c.texts.begin(), c.texts.end(), t);
  if (it == c.texts.end() || *it != t) return -1;
  return static_cast<int>(it - c.texts.begin());
}

std::vector<RetrievalItem> items_of(const std::vector<std::string>& ids, const std::vector<MatrixD>& embs) {
  std::vector<RetrievalItem> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], embs[i]});
  return out;
}

}  // namespace

RetrievalReport image_to_text(const CrossModalCorpus& c, const MatchOracle& oracle) {
  if (c.text_embeddings.size() != c.texts.size()) throw data_error("DimMismatch", "text embeddings missing");
  RetrievalIndex index(items_of(c.texts, c.text_embeddings), Modality::Text);
  std::vector<int> gt;
  for (const auto& t : c.image_texts) gt.push_back(text_position(c, t));
  auto rep = evaluate(index, c.image_ids, c.image_embeddings, match_sets(c.image_texts, c.texts, gt, oracle));
  rep.direction = "image2text";
  return rep;
}

RetrievalReport text_to_image(const CrossModalCorpus& c, const MatchOracle& oracle) {
  if (c.text_embeddings.size() != c.texts.size()) throw data_error("DimMismatch", "text embeddings missing");
  RetrievalIndex index(items_of(c.image_ids, c.image_embeddings), Modality::Image);
  std::vector<std::vector<bool>> rel(c.texts.size(), std::vector<bool>(c.image_ids.size(), false));
  for (std::size_t q = 0; q < c.texts.size(); ++q) {
    for (std::size_t i = 0; i < c.image_ids.size(); ++i) {
      rel[q][i] = c.image_texts[i] == c.texts[q] || oracle.matches(c.texts[q], c.image_texts[i]);
    }
  }
  auto rep = evaluate(index, c.texts, c.text_embeddings, rel);
  rep.direction = "text2image";
  return rep;
}

RetrievalReport image_to_image(const CrossModalCorpus& c, const MatchOracle& oracle) {
  RetrievalIndex index(items_of(c.image_ids, c.image_embeddings), Modality::Image);
  const std::size_t n = c.image_ids.size();
  std::vector<std::vector<bool>> rel(n, std::vector<bool>(n, false));
  std::vector<std::optional<std::size_t>> exclude(n);
  for (std::size_t q = 0; q < n; ++q) {
    exclude[q] = q;
    for (std::size_t i = 0; i < n; ++i) {
      rel[q][i] = i != q && oracle.matches(c.image_texts[q], c.image_texts[i]);
    }
  }
  auto rep = evaluate(index, c.image_ids, c.image_embeddings, rel, exclude);
  rep.direction = "image2image";
  return rep;
}

std::string format_report_table(const std::vector<RetrievalReport>& reports) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %-12s %7s %7s %7s %7s %7s %9s %9s\n", "dataset", "direction", "MAP",
                "NDCG", "top1", "top5", "top10", "n_queries", "n_corpus");
  os << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-12s %-12s %7.4f %7.4f %7.4f %7.4f %7.4f %9zu %9zu\n", r.dataset.c_str(),
                  r.direction.c_str(), r.map, r.ndcg, r.top1, r.top5, r.top10, r.n_queries, r.n_corpus);
    os << line;
  }
  return os.str();
}

std::string report_to_json_line(const RetrievalReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["direction"] = r.direction;
  j["MAP"] = r.map;
  j["NDCG"] = r.ndcg;
  j["top1"] = r.top1;
  j["top5"] = r.top5;
  j["top10"] = r.top10;
  j["n_queries"] = r.n_queries;
  j["n_corpus"] = r.n_corpus;
  return j.dump();
}

}  // namespace slidealign
