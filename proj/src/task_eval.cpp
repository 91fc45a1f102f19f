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

#include "slidealign/task_eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace slidealign {

std::vector<std::string> ClassSpec::texts() const {
  std::vector<std::string> out;
  if (prefixes.empty()) return suffixes;
  for (const auto& p : prefixes) {
    for (const auto& s : suffixes) out.push_back(p + " : " + s);
  }
  return out;
}

std::vector<ClassificationTask> load_classification_tasks(const std::string& path) {
  std::vector<ClassificationTask> tasks;
  try {
    const auto j = nlohmann::json::parse(read_text_file(path));
    if (j.at("schema_version").get<int>() != 1) throw data_error("BadPromptFile", "unsupported schema_version");
    for (const auto& t : j.at("tasks")) {
      ClassificationTask task;
      task.name = t.at("task").get<std::string>();
      const auto prefixes = t.at("prefixes").get<std::vector<std::string>>();
      for (const auto& c : t.at("classes")) {
        ClassSpec spec;
        spec.class_id = c.at("class").get<std::string>();
        spec.prefixes = prefixes;
        spec.suffixes = c.at("suffixes").get<std::vector<std::string>>();
        if (spec.suffixes.empty()) throw data_error("BadPromptFile", "class " + spec.class_id + " has no suffixes");
        task.classes.push_back(std::move(spec));
      }
      tasks.push_back(std::move(task));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error("BadPromptFile", path + ": " + e.what());
  }
  return tasks;
}

ClassificationTask synthetic_classification_task(const std::vector<SynthClass>& classes) {
  ClassificationTask task;
  task.name = "Synthetic finding";
  for (const auto& c : classes) {
    ClassSpec spec;
    spec.class_id = c.keyword;
    spec.prefixes = {c.organ + ", biopsy", c.organ + ", excision"};
    spec.suffixes = c.finding_templates;
    task.classes.push_back(std::move(spec));
  }
  return task;
}

ClassScores classify_with_text_embeddings(const std::vector<MatrixD>& slides, const std::vector<MatrixD>& class_texts) {
  if (class_texts.empty()) throw data_error("EmptyClassSpec", "no classes");
  for (const auto& t : class_texts) {
    if (t.rows() == 0) throw data_error("EmptyClassSpec", "a class has no texts");
  }
  const auto n = static_cast<Eigen::Index>(slides.size());
  const auto c = static_cast<Eigen::Index>(class_texts.size());
  ClassScores out;
  out.scores.resize(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const MatrixD s = slides[static_cast<std::size_t>(i)].rowwise().normalized();
    for (Eigen::Index k = 0; k < c; ++k) {
      const MatrixD t = class_texts[static_cast<std::size_t>(k)].rowwise().normalized();
      if (t.cols() != s.cols()) throw data_error("DimMismatch", "slide and text embeddings differ in width");
      // slide rows x texts; max over rows, mean over texts
      const MatrixD sim = s * t.transpose();
      out.scores(i, k) = sim.colwise().maxCoeff().mean();
    }
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < c; ++k) {
      if (out.scores(i, k) > out.scores(i, best)) best = k;
    }
    out.predicted.push_back(static_cast<int>(best));
  }
  return out;
}

ClassScores classify(const std::vector<MatrixD>& slides, const std::vector<ClassSpec>& classes,
                     const TextEncoder& encode) {
  if (classes.empty()) throw data_error("EmptyClassSpec", "no classes");
  std::vector<MatrixD> embs;
  for (const auto& c : classes) {
    const auto texts = c.texts();
    if (texts.empty()) throw data_error("EmptyClassSpec", "class " + c.class_id + " has no texts");
    embs.push_back(encode(texts));
  }
  return classify_with_text_embeddings(slides, embs);
}

double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double n_pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive[i]) {
      ++n_pos;
      rank_sum += rank[i];
    }
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw data_error("SingleClassLabels", "AUC needs positives and negatives");
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

namespace {

std::vector<int> present_classes(const std::vector<int>& labels) {
  std::vector<int> cls(labels);
  std::sort(cls.begin(), cls.end());
  cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
  if (cls.size() < 2) throw data_error("SingleClassLabels", "at least two classes must be present");
  return cls;
}

}  // namespace

double auc_macro(const MatrixD& scores, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) throw data_error("DimMismatch", "one label per row");
  const auto cls = present_classes(labels);
  double sum = 0;
  for (int c : cls) {
    if (c < 0 || c >= scores.cols()) throw data_error("BadLabel", "label outside the score columns");
    std::vector<double> s(labels.size());
    std::vector<bool> pos(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = scores(static_cast<Eigen::Index>(i), c);
      pos[i] = labels[i] == c;
    }
    sum += binary_auc(s, pos);
  }
  return sum / static_cast<double>(cls.size());
}

double balanced_accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw data_error("DimMismatch", "one prediction per label");
  const auto cls = present_classes(labels);
  double sum = 0;
  for (int c : cls) {
    double total = 0, hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      ++total;
      if (predicted[i] == c) ++hit;
    }
    sum += hit / total;
  }
  return sum / static_cast<double>(cls.size());
}

Rng bootstrap_stream(std::uint64_t seed, int replicate) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate)};
  return Rng(seq);
}

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

BootstrapCI bootstrap_ci(std::size_t n, const ResampleMetric& metric, int replicates, std::uint64_t seed) {
  if (n == 0) throw data_error("EmptyData", "bootstrap needs samples");
  if (replicates < 1) throw config_error("BadConfig", "replicates must be positive");
  BootstrapCI ci;
  ci.replicates = replicates;
  ci.seed = seed;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  ci.point = metric(idx);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(replicates));
  for (int r = 0; r < replicates; ++r) {
    Rng rng = bootstrap_stream(seed, r);
    for (auto& i : idx) i = static_cast<std::size_t>(uniform_index(rng, n));
    const double v = metric(idx);
    if (std::isnan(v)) {
      ++ci.skipped;
      continue;
    }
    values.push_back(v);
  }
  if (values.empty()) {
    ci.lower = ci.upper = ci.point;
    return ci;
  }
  std::sort(values.begin(), values.end());
  ci.lower = std::min(percentile(values, 0.025), ci.point);
  ci.upper = std::max(percentile(values, 0.975), ci.point);
  return ci;
}

std::vector<std::string> metric_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

RougeL rouge_l(const std::string& candidate, const std::string& reference) {
  const auto c = metric_tokens(candidate);
  const auto r = metric_tokens(reference);
  RougeL out;
  if (c.empty() || r.empty()) return out;
  std::vector<std::vector<int>> L(c.size() + 1, std::vector<int>(r.size() + 1, 0));
  for (std::size_t i = 1; i <= c.size(); ++i) {
    for (std::size_t j = 1; j <= r.size(); ++j) {
      L[i][j] = c[i - 1] == r[j - 1] ? L[i - 1][j - 1] + 1 : std::max(L[i - 1][j], L[i][j - 1]);
    }
  }
  const double lcs = L[c.size()][r.size()];
  if (lcs == 0) return out;
  out.precision = lcs / static_cast<double>(c.size());
  out.recall = lcs / static_cast<double>(r.size());
  out.f_measure = 2 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

double meteor_simplified(const std::string& candidate, const std::string& reference) {
  const auto c = metric_tokens(candidate);
  const auto r = metric_tokens(reference);
  if (c.empty() || r.empty()) return 0.0;
  std::vector<bool> used(r.size(), false);
  std::vector<long> align(c.size(), -1);
  long prev = -2;
  for (std::size_t i = 0; i < c.size(); ++i) {
    long pick = -1;
    if (prev >= -1 && prev + 1 < static_cast<long>(r.size()) && !used[static_cast<std::size_t>(prev + 1)] &&
        r[static_cast<std::size_t>(prev + 1)] == c[i]) {
      pick = prev + 1;
    } else {
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (!used[j] && r[j] == c[i]) {
          pick = static_cast<long>(j);
          break;
        }
      }
    }
    if (pick >= 0) {
      used[static_cast<std::size_t>(pick)] = true;
      align[i] = pick;
      prev = pick;
    } else {
      prev = -2;
    }
  }
  double matches = 0, chunks = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (align[i] < 0) continue;
    ++matches;
    const bool continues = i > 0 && align[i - 1] >= 0 && align[i] == align[i - 1] + 1;
    if (!continues) ++chunks;
  }
  if (matches == 0) return 0.0;
  const double p = matches / static_cast<double>(c.size());
  const double rc = matches / static_cast<double>(r.size());
  const double fmean = 10 * p * rc / (rc + 9 * p);
  const double penalty = 0.5 * std::pow(chunks / matches, 3);
  return fmean * (1 - penalty);
}

std::string format_classification_table(const std::vector<ClassificationRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %-24s %-24s\n", "task", "AUC [95% CI]", "balanced accuracy [95% CI]");
  os << line;
  for (const auto& r : rows) {
    char auc[64], bacc[64];
    std::snprintf(auc, sizeof auc, "%.3f [%.3f, %.3f]", r.auc.point, r.auc.lower, r.auc.upper);
    std::snprintf(bacc, sizeof bacc, "%.3f [%.3f, %.3f]", r.balanced_accuracy.point, r.balanced_accuracy.lower,
                  r.balanced_accuracy.upper);
    std::snprintf(line, sizeof line, "%-28s %-24s %-24s\n", r.task.c_str(), auc, bacc);
    os << line;
  }
  return os.str();
}

}  // namespace slidealign
