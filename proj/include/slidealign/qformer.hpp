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
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "slidealign/autograd.hpp"
#include "slidealign/checkpoint.hpp"
#include "slidealign/match_oracle.hpp"
#include "slidealign/tokenizer.hpp"

namespace slidealign {

enum class Variant { R, G };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct QFormerConfig {
  Variant variant = Variant::R;
  int n_queries = 1;
  int query_dim = 192;
  int intermediate_dim = 3072;
  int itc_proj_dim = 128;
  int n_layers = 2;
  int n_heads = 4;
  int patch_dim = 384;
  int max_text_len = 48;  // tokens, start and end markers included
  int vocab_size = 5;

  static QFormerConfig for_variant(Variant v);
  void validate() const;  // BadConfig
};

struct LossWeights {
  double itc = 1.0;
  double itm = 0.0;
  double itg = 0.0;
  static LossWeights for_variant(Variant v);
};

inline constexpr int kMaxPatches = 10240;

/// Every trainable block. Weights ~ N(0, 0.02), biases 0, layer-norm gains 1,
/// log_temp = ln(init_temperature).
template <typename T>
ParamSet<T> init_qformer_params(const QFormerConfig& cfg, double init_temperature, std::uint64_t seed);

/// Row layout of one forward pass. Query groups are n_queries rows bound to
/// one image; texts are token sequences. Rows are ordered as all query
/// groups, then all texts. Each group and text must be placed in exactly one
/// self-attention role before segments() is called.
class QFormerLayout {
 public:
  explicit QFormerLayout(int n_queries) : nq_(n_queries) {}

  int add_query_group(int image);
  int add_text(std::vector<int> tokens);

  void queries_alone(int group);         // queries see only their own group
  void text_alone(int text);             // bidirectional over the text
  void joint(int group, int text);       // queries and text see each other
  void prefix_lm(int group, int text);   // text sees the group and earlier text

  int n_queries() const { return nq_; }
  int n_groups() const { return static_cast<int>(group_image_.size()); }
  int n_texts() const { return static_cast<int>(texts_.size()); }
  int query_row_count() const { return n_groups() * nq_; }
  int text_row_count() const { return text_rows_; }
  int group_image(int g) const { return group_image_[static_cast<std::size_t>(g)]; }
  const std::vector<int>& text_tokens(int t) const { return texts_[static_cast<std::size_t>(t)]; }
  /// Row of token 0 of text t within the text block.
  int text_offset(int t) const { return text_offset_[static_cast<std::size_t>(t)]; }

  /// Self-attention segments over [query rows; text rows]; throws
  /// LayoutIncomplete if a row is uncovered or covered twice.
  std::vector<ag::AttnSegment> segments() const;

 private:
  struct Role {
    int kind;
    int group;
    int text;
  };
  std::vector<int> group_rows(int g) const;
  std::vector<int> text_rows(int t) const;

  int nq_;
  std::vector<int> group_image_;
  std::vector<std::vector<int>> texts_;
  std::vector<int> text_offset_;
  int text_rows_ = 0;
  std::vector<Role> roles_;
};

/// Final hidden states after the last layer norm; either may be empty
/// (tape == nullptr) when the layout has no rows of that kind.
template <typename T>
struct QFormerHidden {
  Var<T> queries;
  Var<T> text;
};

/// images[i] is an n_i x patch_dim matrix of patch embeddings with
/// positional encodings already added. Throws EmptyPatchSequence,
/// SeqTooLong.
template <typename T>
QFormerHidden<T> qformer_forward(Tape<T>& tape, const ParamSet<T>& params, const QFormerConfig& cfg,
                                 const std::vector<const Matrix<T>*>& images, const QFormerLayout& layout);

/// Unit-normalised ITC projections of query rows / text start rows.
template <typename T>
Var<T> itc_image_features(Tape<T>& tape, const ParamSet<T>& params, Var<T> query_rows);
template <typename T>
Var<T> itc_text_features(Tape<T>& tape, const ParamSet<T>& params, Var<T> start_rows);

/// One stage-1 batch. texts[i] is the body of the text paired with image i
/// (word ids then SEP, no start token); the loss prepends CLS or DEC.
template <typename T>
struct Stage1Batch {
  std::vector<const Matrix<T>*> images;
  std::vector<std::vector<int>> texts;
  std::vector<std::vector<bool>> fn_mask;
  std::vector<int> itm_negative;  // text paired with image i as a negative; -1 = none
};

struct Stage1Stats {
  double itc = 0.0;
  double itm = 0.0;
  double itg = 0.0;
  double total = 0.0;
  ag::ItcStats itc_stats;
};

/// Weighted ITC + ITM + ITG. Branches whose weight is zero are not built.
template <typename T>
Var<T> stage1_loss(Tape<T>& tape, const ParamSet<T>& params, const QFormerConfig& cfg, const LossWeights& w,
                   const Stage1Batch<T>& batch, Stage1Stats* stats = nullptr);

/// For each i, a uniform draw among texts j != i with !fn_mask[i][j]; -1 if
/// every other text is masked.
std::vector<int> sample_itm_negatives(const std::vector<std::vector<bool>>& fn_mask, Rng& rng);

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.998;
  long warmup_steps = 2000;
  long max_steps = 100000;
  int batch_size = 1024;
  double init_temperature = 0.01;
  LossWeights weights;
  std::uint64_t seed = 0;
  long eval_every = 100;
  int patience = 0;  // evaluations without improvement before stopping; 0 = never
  double fn_threshold = 0.985;

  static TrainConfig for_variant(Variant v);
  void validate() const;  // BadConfig
};

/// A training or validation pair; patches already carry positions.
struct TrainExample {
  std::string id;
  MatrixF patches;
  std::string text;
};

struct Stage1Result {
  QFormerConfig config;  // vocab_size filled in
  WordTokenizer tokenizer;
  ParamSet<float> params;  // best by validation
  long steps_run = 0;
  long best_step = 0;
  double best_score = 0.0;
  bool stopped_early = false;
};

/// Stage-1 training on a single thread. The best parameters are chosen by
/// validation score every eval_every steps: the retrieval selection score
/// for R, minus the ITG loss for G. Writes one JSON line per step
/// {step, lr, itc, itm, itg, total} to `log` when given. Throws
/// NonFiniteLoss with the step number.
Stage1Result train_stage1(const std::vector<TrainExample>& train, const std::vector<TrainExample>& validation,
                          QFormerConfig cfg, const TrainConfig& tc, const MatchOracle& oracle,
                          std::ostream* log = nullptr);

/// Inference-only wrapper around trained parameters.
class QFormerEncoder {
 public:
  QFormerEncoder(QFormerConfig cfg, WordTokenizer tokenizer, ParamSet<float> params);

  /// n_queries x itc_proj_dim unit rows per image.
  std::vector<MatrixF> encode_images(const std::vector<const MatrixF*>& images) const;
  /// One unit row per text.
  MatrixF encode_texts(const std::vector<std::string>& texts) const;
  /// n_queries x query_dim hidden states per image (the stage-2 prefix).
  std::vector<MatrixF> query_states(const std::vector<const MatrixF*>& images) const;

  const QFormerConfig& config() const { return cfg_; }
  const WordTokenizer& tokenizer() const { return tok_; }
  const ParamSet<float>& params() const { return params_; }

  Checkpoint to_checkpoint(const std::string& extra_meta_json = "{}") const;
  static QFormerEncoder from_checkpoint(const Checkpoint& ck);

 private:
  QFormerConfig cfg_;
  WordTokenizer tok_;
  ParamSet<float> params_;
};

std::string config_to_json(const QFormerConfig& cfg);
QFormerConfig config_from_json(const std::string& json);

/// Image->text retrieval on held-out pairs with the deduplicated text corpus.
double retrieval_selection_score(const QFormerEncoder& enc, const std::vector<TrainExample>& examples,
                                 const MatchOracle& oracle);

}  // namespace slidealign
