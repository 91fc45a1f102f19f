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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "slidealign/match_oracle.hpp"
#include "slidealign/retrieval_eval.hpp"
#include "slidealign/slide_synth.hpp"

using namespace slidealign;

namespace {

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

MatrixD row(std::initializer_list<double> v) {
  MatrixD m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

MatrixD random_rows(Rng& rng, int rows, int d) {
  MatrixD m(rows, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

// Reference metrics written from the textbook definitions.
double ref_ap(const std::vector<bool>& rel) {
  double hits = 0, sum = 0;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    if (rel[i]) {
      hits += 1;
      sum += hits / static_cast<double>(i + 1);
    }
  }
  return hits > 0 ? sum / hits : 0.0;
}

double ref_ndcg(const std::vector<bool>& rel) {
  double dcg = 0, idcg = 0;
  std::size_t n_rel = 0;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    if (rel[i]) {
      dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
      ++n_rel;
    }
  }
  for (std::size_t i = 0; i < n_rel; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return idcg > 0 ? dcg / idcg : 0.0;
}

}  // namespace

TEST_CASE("oracle basics") {
  const MatchOracle o;
  CHECK(o.similarity("colon, biopsy : tubular adenoma.", "colon, biopsy : tubular adenoma.") == doctest::Approx(1.0));
  CHECK(o.matches("abc def", "abc def"));
  CHECK(o.threshold() == 0.985);
  CHECK(MatchOracle::version() == "char3-5-tfidf-v1");
  Rng rng(4);
  const std::vector<std::string> texts = {"skin, biopsy : seborrheic keratosis.", "colon, biopsy : tubular adenoma",
                                          "lung, biopsy : squamous cell carcinoma.", "duodenum, biopsy : normal"};
  const MatchOracle fitted(texts);
  for (const auto& a : texts) {
    for (const auto& b : texts) {
      const double s = fitted.similarity(a, b);
      CHECK(s >= -1.0);
      CHECK(s <= 1.0 + 1e-12);
      CHECK(std::fabs(s - fitted.similarity(b, a)) <= 1e-12);
    }
    CHECK(fitted.similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("oracle on the synthetic templates") {
  const auto classes = default_classes(8);
  std::vector<std::string> corpus;
  for (const auto& c : classes)
    for (std::size_t t = 0; t < c.finding_templates.size(); ++t) corpus.push_back(part_text(c, t));
  const MatchOracle o(corpus);
  for (const auto& c : classes) {
    // the period-free paraphrase is a near-duplicate
    CHECK(o.similarity(part_text(c, 0), part_text(c, 1)) > 0.985);
  }
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      CHECK(o.similarity(part_text(classes[i], 0), part_text(classes[j], 0)) < 0.9);
    }
  const auto mask = fn_mask({part_text(classes[0], 0), part_text(classes[0], 1), part_text(classes[1], 0)}, o);
  CHECK(mask[0][1]);
  CHECK(mask[1][0]);
  CHECK_FALSE(mask[0][0]);
  CHECK_FALSE(mask[0][2]);
  CHECK_FALSE(mask[2][1]);
}

TEST_CASE("index construction") {
  const RetrievalIndex idx({{"a", row({3, 4})}, {"b", row({0, 2})}, {"c", row({1, 0})}}, Modality::Text);
  CHECK(idx.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(idx.item(i).embedding.row(0).norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(error_code([] { RetrievalIndex({{"a", row({1, 0})}, {"a", row({0, 1})}}, Modality::Text); }) == "DuplicateId");
  CHECK(error_code([] { RetrievalIndex({{"a", row({1, 0})}, {"b", row({0, 1, 0})}}, Modality::Text); }) == "DimMismatch");
  CHECK(error_code([] { RetrievalIndex({{"a", row({0, 0})}}, Modality::Text); }) == "ZeroVector");
}

TEST_CASE("query examples") {
  const RetrievalIndex idx({{"b", row({0, 1, 0})}, {"a", row({1, 0, 0})}, {"c", row({0, 1, 1})}}, Modality::Text);
  const auto r = idx.query(row({0, 1, 0}), 3);
  REQUIRE(r.size() == 3);
  CHECK(r[0].first == "b");
  CHECK(r[0].second == doctest::Approx(1.0));

  const auto orth = idx.query(row({0, 1, -1}), 2);
  // similarities: a 0, b 1/sqrt2, c 0 -> b then a (tie with c broken by id)
  CHECK(orth[0].first == "b");
  CHECK(orth[1].first == "a");

  const RetrievalIndex flat({{"z", row({1, 0})}, {"m", row({-1, 0})}, {"q", row({1, 0.0})}}, Modality::Image);
  const auto t = flat.query(row({0, 1}), 3);
  CHECK(t[0].first == "m");
  CHECK(t[1].first == "q");
  CHECK(t[2].first == "z");
  CHECK(flat.query(row({0, 1}), 10).size() == 3);
}

TEST_CASE("query equals a brute-force full sort on random 50-item indexes") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RetrievalItem> items;
    for (int i = 0; i < 50; ++i) items.push_back({"id" + std::to_string(1000 + static_cast<int>(uniform_index(rng, 9000))) + "_" + std::to_string(i), random_rows(rng, 1, 16)});
    const MatrixD q = random_rows(rng, 1, 16);
    const RetrievalIndex idx(items, Modality::Image);
    std::vector<std::pair<std::string, double>> expected;
    for (const auto& it : items) {
      expected.push_back({it.id, (it.embedding.row(0).normalized().dot(q.row(0).normalized()))});
    }
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    const auto got = idx.query(q, 10);
    REQUIRE(got.size() == 10);
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(got[k].first == expected[k].first);
      CHECK(got[k].second == doctest::Approx(expected[k].second).epsilon(1e-12));
    }
    // build order does not matter
    std::reverse(items.begin(), items.end());
    const RetrievalIndex rev(items, Modality::Image);
    CHECK(rev.query(q, 10) == got);
  }
}

TEST_CASE("multi-row items use the best row") {
  MatrixD img(2, 2);
  img << 1, 0, 0, 1;
  CHECK(max_row_similarity(normalize_rows(img), normalize_rows(row({0, 1}))) == doctest::Approx(1.0));
  const RetrievalIndex idx({{"x", img}, {"y", row({1, 1})}}, Modality::Image);
  CHECK(idx.query(row({0, 1}), 1)[0].first == "x");
}

TEST_CASE("match sets") {
  const MatchOracle o;
  const std::string a = "colon, biopsy : tubular adenoma with low grade dysplasia.";
  const std::vector<std::string> corpus = {a, "skin, biopsy : nevus.", a.substr(0, a.size() - 1)};
  const auto m = match_sets({a, "lung, biopsy : carcinoma"}, corpus, {0, 1}, o);
  CHECK(m[0][0]);
  CHECK(m[0][2]);  // near-duplicate
  CHECK_FALSE(m[0][1]);
  CHECK(m[1][1]);  // ground truth regardless of similarity
  CHECK_FALSE(m[1][0]);
  CHECK(error_code([&] { match_sets({"x"}, corpus, {5}, o); }) == "MissingGroundTruth");
  CHECK(dedup_texts({"b", "a", "b"}) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("ranked-list metrics by hand") {
  CHECK(average_precision({true}) == 1.0);
  CHECK(ndcg({true}) == 1.0);
  CHECK(average_precision({false, true, false, true}) == doctest::Approx(0.5).epsilon(1e-15));
  const double expected = (1.0 / std::log2(3.0) + 1.0 / std::log2(5.0)) / (1.0 + 1.0 / std::log2(3.0));
  CHECK(ndcg({false, true, false, true}) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(hit_at({false, true}, 2));
  CHECK_FALSE(hit_at({false, true}, 1));
  CHECK(ndcg({true, true, false, false}) == doctest::Approx(1.0));
  CHECK(ndcg({true, false, true}) < 1.0);
}

TEST_CASE("evaluate equals a brute-force metric oracle on 200 random instances") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 10));
    const int nq = 1 + static_cast<int>(uniform_index(rng, 6));
    const int d = 2 + static_cast<int>(uniform_index(rng, 4));
    std::vector<RetrievalItem> items;
    for (int i = 0; i < n; ++i) {
      MatrixD e = random_rows(rng, 1, d);
      // occasional exact duplicates exercise the id tie-break
      if (i > 0 && uniform_index(rng, 5) == 0) e = items.back().embedding;
      items.push_back({"i" + std::to_string(i), e});
    }
    const RetrievalIndex idx(items, Modality::Text);
    std::vector<std::string> qids;
    std::vector<MatrixD> queries;
    std::vector<std::vector<bool>> rel;
    for (int q = 0; q < nq; ++q) {
      qids.push_back("q" + std::to_string(q));
      queries.push_back(random_rows(rng, 1, d));
      std::vector<bool> r(static_cast<std::size_t>(n));
      for (auto&& x : r) x = uniform_index(rng, 3) == 0;
      rel.push_back(r);
    }
    bool any = false;
    for (const auto& r : rel) any |= std::find(r.begin(), r.end(), true) != r.end();
    if (!any) {
      CHECK(error_code([&] { evaluate(idx, qids, queries, rel); }) == "NoEvaluableQueries");
      continue;
    }
    const auto rep = evaluate(idx, qids, queries, rel);

    double map = 0, nd = 0, t1 = 0, t5 = 0, t10 = 0;
    int used = 0;
    for (int q = 0; q < nq; ++q) {
      if (std::find(rel[q].begin(), rel[q].end(), true) == rel[q].end()) continue;
      std::vector<int> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      std::vector<double> sim(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i)
        sim[i] = items[i].embedding.row(0).normalized().dot(queries[q].row(0).normalized());
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return sim[a] != sim[b] ? sim[a] > sim[b] : items[a].id < items[b].id;
      });
      std::vector<bool> ranked;
      for (int i : order) ranked.push_back(rel[q][i]);
      map += ref_ap(ranked);
      nd += ref_ndcg(ranked);
      auto hit = [&](int k) {
        for (int i = 0; i < std::min(k, n); ++i)
          if (ranked[i]) return 1.0;
        return 0.0;
      };
      t1 += hit(1);
      t5 += hit(5);
      t10 += hit(10);
      ++used;
    }
    CHECK(rep.n_queries == static_cast<std::size_t>(used));
    CHECK(std::fabs(rep.map - map / used) <= 1e-9);
    CHECK(std::fabs(rep.ndcg - nd / used) <= 1e-9);
    CHECK(std::fabs(rep.top1 - t1 / used) <= 1e-9);
    CHECK(std::fabs(rep.top5 - t5 / used) <= 1e-9);
    CHECK(std::fabs(rep.top10 - t10 / used) <= 1e-9);
    CHECK(rep.top1 <= rep.top5);
    CHECK(rep.top5 <= rep.top10);
  }
}

TEST_CASE("MAP and NDCG do not depend on item ids") {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RetrievalItem> a, b;
    std::vector<bool> rel;
    for (int i = 0; i < 8; ++i) {
      const MatrixD e = random_rows(rng, 1, 4);
      a.push_back({"a" + std::to_string(i), e});
      b.push_back({"zz" + std::to_string(7 - i), e});
      rel.push_back(i % 3 == 0);
    }
    const MatrixD q = random_rows(rng, 1, 4);
    const auto ra = evaluate(RetrievalIndex(a, Modality::Text), {"q"}, {q}, {rel});
    const auto rb = evaluate(RetrievalIndex(b, Modality::Text), {"q"}, {q}, {rel});
    CHECK(ra.map == rb.map);
    CHECK(ra.ndcg == rb.ndcg);
  }
}

TEST_CASE("image-to-image excludes the query and skips queries with no match") {
  const MatchOracle o;
  std::vector<std::string> ids = {"s1", "s2", "s3"};
  std::vector<MatrixD> emb = {row({1, 0}), row({0.9, 0.1}), row({0, 1})};
  std::vector<std::string> texts = {"colon : adenoma.", "colon : adenoma.", "skin : nevus."};
  auto corpus = make_cross_modal_corpus(ids, emb, texts);
  CHECK(corpus.texts == std::vector<std::string>{"colon : adenoma.", "skin : nevus."});
  const auto r = image_to_image(corpus, o);
  CHECK(r.n_queries == 2);  // s3 has no other image with a matching text
  CHECK(r.top1 == 1.0);
  for (const auto& m : r.match_sets) {
    CHECK(m.size() == 1);
  }
  corpus.text_embeddings = {row({1, 0}), row({0, 1})};
  const auto it = image_to_text(corpus, o);
  CHECK(it.n_corpus == 2);
  CHECK(it.n_queries == 3);
  CHECK(it.top1 == 1.0);
  const auto ti = text_to_image(corpus, o);
  CHECK(ti.n_queries == 2);
  CHECK(ti.map == doctest::Approx(1.0));
  const auto table = format_report_table({it, ti});
  CHECK(table.find("MAP") != std::string::npos);
  CHECK(table.find("image2text") != std::string::npos);
}
