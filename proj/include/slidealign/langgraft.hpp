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
#include <string>
#include <vector>

#include "slidealign/autograd.hpp"
#include "slidealign/checkpoint.hpp"
#include "slidealign/qformer.hpp"
#include "slidealign/tokenizer.hpp"

namespace slidealign {

/// Verbatim default prioritization prompt.
inline constexpr const char* kPrioritizationPrompt =
    "Question: On a scale of 1 to 3, where 1 is benign or low-risk, 2 are pre-cancerous polyps and adenomas, "
    "3 is cancerous or highly suspicious for cancer, can you rate the pathological findings for this image? "
    "Answer:";

struct DecoderConfig {
  int n_layers = 2;
  int dim = 128;
  int n_heads = 4;
  int ffn_dim = 512;
  int context = 384;  // text positions; prefix rows carry no position
  int vocab_size = 4;

  void validate() const;  // BadConfig
};

/// Character-level pre-LN causal decoder. Blocks are named "dec.*".
template <typename T>
ParamSet<T> init_decoder_params(const DecoderConfig& cfg, std::uint64_t seed);

/// Logits for a batch of sequences laid out as [prefix_i; tokens_i]. Sequence
/// i's prefix is rows [i * prefix_len, (i + 1) * prefix_len) of `prefix`
/// (ignored when prefix_len == 0). Attention is causal over the whole
/// sequence. Returns one logit row per token, sequences concatenated;
/// `token_offset[i]` receives the first row of sequence i. Decoder blocks are
/// bound as non-trainable when `train_decoder` is false.
template <typename T>
Var<T> decoder_logits(Tape<T>& tape, const ParamSet<T>& params, const DecoderConfig& cfg, Var<T> prefix,
                      int prefix_len, const std::vector<std::vector<int>>& tokens, std::vector<int>* token_offset,
                      bool train_decoder);

struct DecoderTrainConfig {
  double lr = 1e-3;
  long warmup_steps = 100;
  long max_steps = 3000;
  int batch_size = 32;
  std::uint64_t seed = 0;
  long eval_every = 100;
  int patience = 5;
};

/// A text the decoder learns from. When severity is in 1..3 a second
/// sequence "text prompt digit" is added so the frozen model can answer the
/// prioritization question.
struct DecoderText {
  std::string text;
  int severity = 0;
};

struct FrozenDecoder {
  DecoderConfig config;
  CharTokenizer tokenizer;
  ParamSet<float> params;
  std::string checksum() const { return params_checksum(params, "dec."); }

  Checkpoint to_checkpoint() const;
  static FrozenDecoder from_checkpoint(const Checkpoint& ck);
};

std::string prioritization_sequence(const std::string& text, const std::string& prompt);

/// Next-token pretraining; keeps the parameters with the best validation
/// perplexity and stops after `patience` evaluations without improvement.
FrozenDecoder pretrain_decoder(const std::vector<DecoderText>& train, const std::vector<DecoderText>& validation,
                               DecoderConfig cfg, const DecoderTrainConfig& tc,
                               const std::string& prompt = kPrioritizationPrompt, std::ostream* log = nullptr);

/// Mean next-token loss of the decoder on texts (no prefix).
double decoder_text_loss(const FrozenDecoder& dec, const std::vector<std::string>& texts);

struct Stage2Config {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  long warmup_steps = 1000;
  double weight_decay = 1e-10;
  long max_steps = 200000;
  int batch_size = 64;
  double grad_clip_norm = 10.0;
  std::uint64_t seed = 0;
  long eval_every = 200;
  int patience = 0;

  void validate() const;  // BadConfig
};

/// Q-Former + graft + frozen decoder.
struct GraftedModel {
  QFormerConfig qformer_config;
  WordTokenizer word_tokenizer;
  FrozenDecoder decoder;
  ParamSet<float> params;  // Q-Former blocks, "graft.*" and "dec.*"

  Checkpoint to_checkpoint() const;
  static GraftedModel from_checkpoint(const Checkpoint& ck);
};

/// Next-token loss of `texts` given the grafted prefix of each image.
template <typename T>
Var<T> stage2_loss(Tape<T>& tape, const ParamSet<T>& params, const QFormerConfig& qcfg, const DecoderConfig& dcfg,
                   const std::vector<const Matrix<T>*>& images, const std::vector<std::vector<int>>& text_chars);

template <typename T>
void add_graft_params(ParamSet<T>& params, int query_dim, int decoder_dim, std::uint64_t seed);

struct Stage2Result {
  GraftedModel model;
  long steps_run = 0;
  long best_step = 0;
  double best_val_loss = 0.0;
  std::string decoder_checksum_before;
  std::string decoder_checksum_after;
};

/// Trains the Q-Former and the graft layer; the decoder stays frozen.
/// Throws FrozenViolation if the decoder checksum moves, NonFiniteLoss.
Stage2Result train_stage2(const QFormerEncoder& stage1, const FrozenDecoder& decoder,
                          const std::vector<TrainExample>& train, const std::vector<TrainExample>& validation,
                          const Stage2Config& cfg, std::ostream* log = nullptr);

/// Greedy decoding for a batch of images: prefix, BOS, optional prompt, then
/// up to max_len characters or EOS.
std::vector<std::string> generate(const GraftedModel& model, const std::vector<const MatrixF*>& images, int max_len,
                                  const std::string& prompt = "");

struct PriorityScore {
  std::string slide_id;
  int score = 1;
  std::string raw_response;
  bool flagged = false;  // response held no standalone digit 1-3
};

/// First digit 1-3 not adjacent to another digit; nullopt-like 0 if none.
int parse_priority(const std::string& response);

/// Descending score, ties by slide id ascending.
void sort_priorities(std::vector<PriorityScore>& scores);

/// Generates a report per slide, asks the decoder the prompt with the
/// prefix and the generated text, and parses the answer.
std::vector<PriorityScore> prioritize(const GraftedModel& model, const std::vector<std::string>& slide_ids,
                                      const std::vector<const MatrixF*>& images,
                                      const std::string& prompt = kPrioritizationPrompt, int max_len = 160);

std::string priority_to_json_line(const PriorityScore& p);

}  // namespace slidealign
