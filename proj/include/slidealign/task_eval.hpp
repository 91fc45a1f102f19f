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
#include <functional>
#include <string>
#include <vector>

#include "slidealign/common.hpp"
#include "slidealign/slide_synth.hpp"

namespace slidealign {

/// One class of a prompt ensemble. texts() is every "<prefix> : <suffix>"
/// combination, or the suffixes alone when there are no prefixes.
struct ClassSpec {
  std::string class_id;
  std::vector<std::string> prefixes;
  std::vector<std::string> suffixes;

  std::vector<std::string> texts() const;
};

struct ClassificationTask {
  std::string name;
  std::vector<ClassSpec> classes;
};

/// Reads the prompt-ensemble file; throws BadPromptFile.
std::vector<ClassificationTask> load_classification_tasks(const std::string& path);

/// Ensemble for the synthetic corpus: per-class prefixes "<organ>, biopsy"
/// and "<organ>, excision", suffixes = the class finding templates.
ClassificationTask synthetic_classification_task(const std::vector<SynthClass>& classes);

struct ClassScores {
  MatrixD scores;  // slides x classes
  std::vector<int> predicted;
};

/// Maps a list of texts to one unit row each.
using TextEncoder = std::function<MatrixD(const std::vector<std::string>&)>;

/// score(slide, class) = mean over the class texts of the slide-text cosine
/// (maximum over the slide's rows for multi-query embeddings). Ties in the
/// argmax go to the lower class index. Throws EmptyClassSpec.
ClassScores classify(const std::vector<MatrixD>& slide_embeddings, const std::vector<ClassSpec>& classes,
                     const TextEncoder& encode);

/// Same, with the class text embeddings already computed.
ClassScores classify_with_text_embeddings(const std::vector<MatrixD>& slide_embeddings,
                                          const std::vector<MatrixD>& class_text_embeddings);

/// One-vs-rest AUC per class present in `labels` (Mann-Whitney with
/// midranks), macro-averaged. Throws SingleClassLabels.
double auc_macro(const MatrixD& scores, const std::vector<int>& labels);

/// Binary AUC of scores for positives vs negatives, ties count one half.
double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

/// Mean recall over the classes present in `labels`. Throws
/// SingleClassLabels.
double balanced_accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

struct BootstrapCI {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int replicates = 1000;
  int skipped = 0;  // replicates whose metric was undefined (NaN)
  std::uint64_t seed = 0;
};

/// Metric over a resample, given as sample indices into the data.
using ResampleMetric = std::function<double(const std::vector<std::size_t>&)>;

/// The RNG stream of replicate r.
Rng bootstrap_stream(std::uint64_t seed, int replicate);

/// Percentile interval (2.5 / 97.5, linear interpolation) over `replicates`
/// resamples with replacement of n samples. Replicate r draws its n indices
/// from bootstrap_stream(seed, r) with uniform_index. Replicates returning
/// NaN are skipped. Bounds are clamped so lower <= point <= upper.
BootstrapCI bootstrap_ci(std::size_t n, const ResampleMetric& metric, int replicates = 1000,
                         std::uint64_t seed = 0);

/// Lowercase alphanumeric runs.
std::vector<std::string> metric_tokens(const std::string& text);

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
};

RougeL rouge_l(const std::string& candidate, const std::string& reference);

/// Exact-match METEOR: Fmean = 10PR / (R + 9P), penalty = 0.5 (chunks /
/// matches)^3, score = Fmean (1 - penalty). Alignment is greedy over the
/// candidate, left to right, preferring the reference position that extends
/// the current chunk, else the first unused one.
double meteor_simplified(const std::string& candidate, const std::string& reference);

struct ClassificationRow {
  std::string task;
  BootstrapCI auc;
  BootstrapCI balanced_accuracy;
};

/// "task | AUC [lo, hi] | balanced accuracy [lo, hi]" table.
std::string format_classification_table(const std::vector<ClassificationRow>& rows);

}  // namespace slidealign
