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

#include "slidealign/langgraft.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "json.hpp"
#include "slidealign/optim.hpp"

namespace slidealign {

using nlohmann::json;

void DecoderConfig::validate() const {
  auto bad = [](const std::string& m) { return config_error("BadConfig", m); };
  if (n_layers < 1 || dim < 1 || ffn_dim < 1 || context < 2) throw bad("decoder dimensions must be positive");
  if (n_heads < 1 || dim % n_heads != 0) throw bad("decoder dim must be divisible by n_heads");
  if (vocab_size < 4) throw bad("decoder vocabulary smaller than the special tokens");
}

void Stage2Config::validate() const {
  auto bad = [](const std::string& m) { return config_error("BadConfig", m); };
  if (!(lr > 0)) throw bad("lr must be positive");
  if (!(grad_clip_norm > 0)) throw bad("grad_clip_norm must be positive");
  if (warmup_steps < 0 || warmup_steps >= max_steps) throw bad("warmup_steps must be below max_steps");
  if (batch_size < 1) throw bad("batch_size must be positive");
  if (eval_every < 1) throw bad("eval_every must be positive");
}

template <typename T>
ParamSet<T> init_decoder_params(const DecoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int E = cfg.dim;
  ParamSet<T> ps;
  auto linear = [&](const std::string& n, int in, int out) {
    ps.add(n + ".w", in, out);
    ps.add(n + ".b", 1, out);
  };
  auto norm = [&](const std::string& n) {
    ps.add(n + ".ln.g", 1, E);
    ps.add(n + ".ln.b", 1, E);
  };
  ps.add("dec.embed", cfg.vocab_size, E);
  ps.add("dec.pos", cfg.context, E);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".";
    norm(p + "attn");
    for (const char* m : {"q", "k", "v", "o"}) linear(p + "attn." + m, E, E);
    norm(p + "mlp");
    linear(p + "mlp.fc1", E, cfg.ffn_dim);
    linear(p + "mlp.fc2", cfg.ffn_dim, E);
  }
  norm("dec.final");
  linear("dec.head", E, cfg.vocab_size);
  Rng rng(seed);
  for (auto& [name, m] : ps.blocks()) {
    const bool is_gain = name.compare(name.size() - 5, 5, ".ln.g") == 0;
    const bool is_bias = name.compare(name.size() - 2, 2, ".b") == 0;
    if (is_gain) {
      m.setOnes();
    } else if (!is_bias) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(0.02 * standard_normal(rng));
    }
  }
  return ps;
}

template ParamSet<float> init_decoder_params<float>(const DecoderConfig&, std::uint64_t);
template ParamSet<double> init_decoder_params<double>(const DecoderConfig&, std::uint64_t);

template <typename T>
void add_graft_params(ParamSet<T>& params, int query_dim, int decoder_dim, std::uint64_t seed) {
  auto& w = params.add("graft.w", query_dim, decoder_dim);
  params.add("graft.b", 1, decoder_dim);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(0.02 * standard_normal(rng));
}

template void add_graft_params<float>(ParamSet<float>&, int, int, std::uint64_t);
template void add_graft_params<double>(ParamSet<double>&, int, int, std::uint64_t);

namespace {

template <typename T>
Var<T> linear(Tape<T>& t, const ParamSet<T>& p, const std::string& n, Var<T> x, bool trainable) {
  return ag::add_row(ag::matmul(x, t.param(p, n + ".w", trainable)), t.param(p, n + ".b", trainable));
}

template <typename T>
Var<T> norm(Tape<T>& t, const ParamSet<T>& p, const std::string& n, Var<T> x, bool trainable) {
  return ag::layer_norm(x, t.param(p, n + ".ln.g", trainable), t.param(p, n + ".ln.b", trainable));
}

}  // namespace

template <typename T>
Var<T> decoder_logits(Tape<T>& tape, const ParamSet<T>& P, const DecoderConfig& cfg, Var<T> prefix, int prefix_len,
                      const std::vector<std::vector<int>>& tokens, std::vector<int>* token_offset, bool train) {
  const int n = static_cast<int>(tokens.size());
  std::vector<int> ids, pos, tok_start;
  for (const auto& seq : tokens) {
    if (seq.empty()) throw data_error("EmptyText", "decoder sequences need at least one token");
    if (static_cast<int>(seq.size()) > cfg.context) throw data_error("SeqTooLong", "sequence exceeds decoder context");
    tok_start.push_back(static_cast<int>(ids.size()));
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] < 0 || seq[i] >= cfg.vocab_size) throw data_error("BadToken", "token outside decoder vocabulary");
      ids.push_back(seq[i]);
      pos.push_back(static_cast<int>(i));
    }
  }
  Var<T> x = ag::add(ag::gather_rows(tape.param(P, "dec.embed", train), std::move(ids)),
                     ag::gather_rows(tape.param(P, "dec.pos", train), std::move(pos)));

  // Interleave prefix and token rows per sequence.
  auto segs = std::make_shared<std::vector<ag::AttnSegment>>();
  std::vector<int> token_rows;
  if (prefix_len > 0) {
    if (prefix.rows() != static_cast<Eigen::Index>(n) * prefix_len) throw data_error("BadPrefix", "prefix rows != n * prefix_len");
    std::vector<int> order;
    const int n_prefix = n * prefix_len;
    for (int i = 0; i < n; ++i) {
      ag::AttnSegment s;
      s.causal_prefix = 0;
      for (int r = 0; r < prefix_len; ++r) {
        s.q_rows.push_back(static_cast<int>(order.size()));
        order.push_back(i * prefix_len + r);
      }
      for (std::size_t r = 0; r < tokens[static_cast<std::size_t>(i)].size(); ++r) {
        s.q_rows.push_back(static_cast<int>(order.size()));
        token_rows.push_back(static_cast<int>(order.size()));
        order.push_back(n_prefix + tok_start[static_cast<std::size_t>(i)] + static_cast<int>(r));
      }
      s.k_rows = s.q_rows;
      segs->push_back(std::move(s));
    }
    x = ag::gather_rows(ag::concat_rows<T>({prefix, x}), std::move(order));
  } else {
    for (int i = 0; i < n; ++i) {
      ag::AttnSegment s;
      s.causal_prefix = 0;
      for (std::size_t r = 0; r < tokens[static_cast<std::size_t>(i)].size(); ++r) {
        s.q_rows.push_back(tok_start[static_cast<std::size_t>(i)] + static_cast<int>(r));
      }
      s.k_rows = s.q_rows;
      segs->push_back(std::move(s));
    }
  }
  std::shared_ptr<const std::vector<ag::AttnSegment>> csegs = segs;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".";
    Var<T> h = norm(tape, P, p + "attn", x, train);
    Var<T> a = ag::attention(linear(tape, P, p + "attn.q", h, train), linear(tape, P, p + "attn.k", h, train),
                             linear(tape, P, p + "attn.v", h, train), cfg.n_heads, csegs);
    x = ag::add(x, linear(tape, P, p + "attn.o", a, train));
    h = norm(tape, P, p + "mlp", x, train);
    h = ag::gelu(linear(tape, P, p + "mlp.fc1", h, train));
    x = ag::add(x, linear(tape, P, p + "mlp.fc2", h, train));
  }
  if (prefix_len > 0) x = ag::gather_rows(x, std::move(token_rows));
  x = norm(tape, P, "dec.final", x, train);
  if (token_offset) *token_offset = tok_start;
  return linear(tape, P, "dec.head", x, train);
}

template Var<float> decoder_logits<float>(Tape<float>&, const ParamSet<float>&, const DecoderConfig&, Var<float>, int,
                                          const std::vector<std::vector<int>>&, std::vector<int>*, bool);
template Var<double> decoder_logits<double>(Tape<double>&, const ParamSet<double>&, const DecoderConfig&, Var<double>,
                                            int, const std::vector<std::vector<int>>&, std::vector<int>*, bool);

namespace {

/// Input [BOS, c1..cn] and targets [c1..cn, EOS] for every text.
void teacher_forcing(const std::vector<std::vector<int>>& chars, std::vector<std::vector<int>>& inputs,
                     std::vector<int>& targets) {
  inputs.clear();
  targets.clear();
  for (const auto& c : chars) {
    std::vector<int> in{CharTokenizer::kBos};
    in.insert(in.end(), c.begin(), c.end());
    inputs.push_back(std::move(in));
    targets.insert(targets.end(), c.begin(), c.end());
    targets.push_back(CharTokenizer::kEos);
  }
}

template <typename T>
Var<T> text_only_loss(Tape<T>& tape, const ParamSet<T>& P, const DecoderConfig& cfg,
                      const std::vector<std::vector<int>>& chars, bool train) {
  std::vector<std::vector<int>> inputs;
  std::vector<int> targets;
  teacher_forcing(chars, inputs, targets);
  Var<T> logits = decoder_logits(tape, P, cfg, Var<T>{}, 0, inputs, nullptr, train);
  return ag::cross_entropy(logits, std::move(targets));
}

}  // namespace

std::string prioritization_sequence(const std::string& text, const std::string& prompt) {
  return text + " " + prompt + " ";
}

FrozenDecoder pretrain_decoder(const std::vector<DecoderText>& train, const std::vector<DecoderText>& validation,
                               DecoderConfig cfg, const DecoderTrainConfig& tc, const std::string& prompt,
                               std::ostream* log) {
  if (train.empty()) throw data_error("TooFewExamples", "decoder pretraining needs texts");
  std::vector<std::string> alphabet_src{prompt, "123 "};
  for (const auto& t : train) alphabet_src.push_back(t.text);
  FrozenDecoder dec;
  dec.tokenizer = CharTokenizer::fit(alphabet_src);
  cfg.vocab_size = dec.tokenizer.size();
  cfg.validate();
  dec.config = cfg;

  auto sequences = [&](const std::vector<DecoderText>& src) {
    std::vector<std::vector<int>> out;
    for (const auto& t : src) {
      out.push_back(dec.tokenizer.encode(t.text));
      if (t.severity >= 1 && t.severity <= 3) {
        out.push_back(dec.tokenizer.encode(prioritization_sequence(t.text, prompt) + std::to_string(t.severity)));
      }
    }
    for (const auto& s : out) {
      if (static_cast<int>(s.size()) + 1 > cfg.context) throw data_error("SeqTooLong", "pretraining text exceeds context");
    }
    return out;
  };
  const auto train_seqs = sequences(train);
  const auto val_seqs = sequences(validation);

  ParamSet<float> params = init_decoder_params<float>(cfg, tc.seed);
  AdamW<float> opt({0.9, 0.999, 1e-8, 0.0});
  Rng rng(tc.seed ^ 0xd1b54a32d192ed03ULL);
  std::vector<std::size_t> order(train_seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_in_place(order, rng);
  std::size_t cursor = 0;
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(tc.batch_size), order.size());

  auto val_loss = [&](const ParamSet<float>& p) {
    double sum = 0;
    std::size_t nb = 0;
    for (std::size_t b = 0; b < val_seqs.size(); b += 64) {
      std::vector<std::vector<int>> chunk(val_seqs.begin() + static_cast<std::ptrdiff_t>(b),
                                          val_seqs.begin() + static_cast<std::ptrdiff_t>(std::min(val_seqs.size(), b + 64)));
      Tape<float> tape(false);
      sum += text_only_loss(tape, p, cfg, chunk, false).value()(0, 0);
      ++nb;
    }
    return nb ? sum / static_cast<double>(nb) : 0.0;
  };

  double best = std::numeric_limits<double>::infinity();
  ParamSet<float> best_params = params;
  int stale = 0;
  for (long step = 1; step <= tc.max_steps; ++step) {
    if (cursor + bs > order.size()) {
      shuffle_in_place(order, rng);
      cursor = 0;
    }
    std::vector<std::vector<int>> batch;
    for (std::size_t k = 0; k < bs; ++k) batch.push_back(train_seqs[order[cursor++]]);
    Tape<float> tape;
    Var<float> loss = text_only_loss(tape, params, cfg, batch, true);
    const double lv = loss.value()(0, 0);
    if (!std::isfinite(lv)) throw numeric_error("NonFiniteLoss", "decoder pretraining step " + std::to_string(step));
    tape.backward(loss);
    auto grads = tape.param_grads();
    clip_global_norm(grads, 1.0);
    opt.step(params, grads, warmup_cosine_lr(tc.lr, step, tc.warmup_steps, tc.max_steps));
    json rec{{"step", step}, {"loss", lv}};
    bool stop = false;
    if (!val_seqs.empty() && (step % tc.eval_every == 0 || step == tc.max_steps)) {
      const double v = val_loss(params);
      rec["val_loss"] = v;
      if (v < best - 1e-4) {
        best = v;
        best_params = params;
        stale = 0;
      } else if (tc.patience > 0 && ++stale >= tc.patience) {
        stop = true;
      }
    }
    if (log) *log << rec.dump() << "\n";
    if (stop) break;
  }
  dec.params = val_seqs.empty() ? params : best_params;
  return dec;
}

double decoder_text_loss(const FrozenDecoder& dec, const std::vector<std::string>& texts) {
  std::vector<std::vector<int>> seqs;
  for (const auto& t : texts) seqs.push_back(dec.tokenizer.encode(t));
  Tape<float> tape(false);
  return text_only_loss(tape, dec.params, dec.config, seqs, false).value()(0, 0);
}

template <typename T>
Var<T> stage2_loss(Tape<T>& tape, const ParamSet<T>& P, const QFormerConfig& qcfg, const DecoderConfig& dcfg,
                   const std::vector<const Matrix<T>*>& images, const std::vector<std::vector<int>>& text_chars) {
  if (images.size() != text_chars.size() || images.empty()) throw data_error("BadBatch", "one text per image is required");
  QFormerLayout L(qcfg.n_queries);
  for (std::size_t i = 0; i < images.size(); ++i) L.queries_alone(L.add_query_group(static_cast<int>(i)));
  const auto h = qformer_forward(tape, P, qcfg, images, L);
  Var<T> prefix = linear(tape, P, "graft", h.queries, true);
  std::vector<std::vector<int>> inputs;
  std::vector<int> targets;
  teacher_forcing(text_chars, inputs, targets);
  Var<T> logits = decoder_logits(tape, P, dcfg, prefix, qcfg.n_queries, inputs, nullptr, false);
  return ag::cross_entropy(logits, std::move(targets));
}

template Var<float> stage2_loss<float>(Tape<float>&, const ParamSet<float>&, const QFormerConfig&, const DecoderConfig&,
                                       const std::vector<const MatrixF*>&, const std::vector<std::vector<int>>&);
template Var<double> stage2_loss<double>(Tape<double>&, const ParamSet<double>&, const QFormerConfig&,
                                         const DecoderConfig&, const std::vector<const MatrixD*>&,
                                         const std::vector<std::vector<int>>&);

namespace {

json decoder_config_json(const DecoderConfig& c) {
  return {{"n_layers", c.n_layers}, {"dim", c.dim},         {"n_heads", c.n_heads},
          {"ffn_dim", c.ffn_dim},   {"context", c.context}, {"vocab_size", c.vocab_size}};
}

DecoderConfig decoder_config_from(const json& j) {
  DecoderConfig c;
  c.n_layers = j.at("n_layers");
  c.dim = j.at("dim");
  c.n_heads = j.at("n_heads");
  c.ffn_dim = j.at("ffn_dim");
  c.context = j.at("context");
  c.vocab_size = j.at("vocab_size");
  return c;
}

}  // namespace

Checkpoint FrozenDecoder::to_checkpoint() const {
  json meta;
  meta["kind"] = "decoder";
  meta["decoder_config"] = decoder_config_json(config);
  meta["alphabet"] = tokenizer.alphabet();
  meta["decoder_checksum"] = checksum();
  return {meta.dump(), params};
}

FrozenDecoder FrozenDecoder::from_checkpoint(const Checkpoint& ck) {
  FrozenDecoder d;
  try {
    const json meta = json::parse(ck.meta_json);
    if (meta.value("kind", "") != "decoder") throw data_error("WrongCheckpoint", "expected a decoder checkpoint");
    d.config = decoder_config_from(meta.at("decoder_config"));
    d.tokenizer = CharTokenizer::from_alphabet(meta.at("alphabet").get<std::string>());
    d.params = ck.params;
    if (d.checksum() != meta.at("decoder_checksum").get<std::string>()) {
      throw data_error("CorruptCheckpoint", "decoder checksum mismatch");
    }
  } catch (const json::exception& e) {
    throw data_error("CorruptCheckpoint", e.what());
  }
  return d;
}

Checkpoint GraftedModel::to_checkpoint() const {
  json meta;
  meta["kind"] = "stage2";
  meta["config"] = json::parse(config_to_json(qformer_config));
  meta["vocabulary"] = std::vector<std::string>(word_tokenizer.vocabulary().begin() + 5, word_tokenizer.vocabulary().end());
  meta["decoder_config"] = decoder_config_json(decoder.config);
  meta["alphabet"] = decoder.tokenizer.alphabet();
  meta["decoder_checksum"] = decoder.checksum();
  return {meta.dump(), params};
}

GraftedModel GraftedModel::from_checkpoint(const Checkpoint& ck) {
  GraftedModel m;
  try {
    const json meta = json::parse(ck.meta_json);
    if (meta.value("kind", "") != "stage2") throw data_error("WrongCheckpoint", "expected a stage-2 checkpoint");
    m.qformer_config = config_from_json(meta.at("config").dump());
    m.word_tokenizer = WordTokenizer::from_vocabulary(meta.at("vocabulary").get<std::vector<std::string>>());
    m.decoder.config = decoder_config_from(meta.at("decoder_config"));
    m.decoder.tokenizer = CharTokenizer::from_alphabet(meta.at("alphabet").get<std::string>());
    m.params = ck.params;
    m.decoder.params.merge_from(ck.params, "dec.");
    if (m.decoder.checksum() != meta.at("decoder_checksum").get<std::string>()) {
      throw data_error("CorruptCheckpoint", "decoder checksum mismatch");
    }
  } catch (const json::exception& e) {
    throw data_error("CorruptCheckpoint", e.what());
  }
  return m;
}

Stage2Result train_stage2(const QFormerEncoder& stage1, const FrozenDecoder& decoder,
                          const std::vector<TrainExample>& train, const std::vector<TrainExample>& validation,
                          const Stage2Config& cfg, std::ostream* log) {
  cfg.validate();
  if (stage1.config().variant != Variant::G) throw config_error("WrongVariant", "stage 2 needs a G-variant checkpoint");
  if (train.empty()) throw data_error("TooFewExamples", "stage 2 needs training pairs");
  Stage2Result res;
  res.decoder_checksum_before = decoder.checksum();
  GraftedModel& model = res.model;
  model.qformer_config = stage1.config();
  model.word_tokenizer = stage1.tokenizer();
  model.decoder = decoder;
  model.params = stage1.params();
  model.params.merge_from(decoder.params, "dec.");
  add_graft_params(model.params, stage1.config().query_dim, decoder.config.dim, cfg.seed);

  auto chars_of = [&](const std::vector<TrainExample>& src) {
    std::vector<std::vector<int>> out;
    for (const auto& e : src) out.push_back(decoder.tokenizer.encode(e.text));
    return out;
  };
  const auto train_chars = chars_of(train);
  const auto val_chars = chars_of(validation);
  const QFormerConfig& qcfg = model.qformer_config;
  const DecoderConfig& dcfg = decoder.config;

  auto val_loss = [&](const ParamSet<float>& p) {
    double sum = 0;
    std::size_t nb = 0;
    for (std::size_t b = 0; b < validation.size(); b += 32) {
      std::vector<const MatrixF*> imgs;
      std::vector<std::vector<int>> ch;
      for (std::size_t i = b; i < std::min(validation.size(), b + 32); ++i) {
        imgs.push_back(&validation[i].patches);
        ch.push_back(val_chars[i]);
      }
      Tape<float> tape(false);
      sum += stage2_loss(tape, p, qcfg, dcfg, imgs, ch).value()(0, 0);
      ++nb;
    }
    return nb ? sum / static_cast<double>(nb) : 0.0;
  };

  AdamW<float> opt({cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
  Rng rng(cfg.seed ^ 0x2545f4914f6cdd1dULL);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_in_place(order, rng);
  std::size_t cursor = 0;
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train.size());
  ParamSet<float> best = model.params;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (long step = 1; step <= cfg.max_steps; ++step) {
    if (cursor + bs > order.size()) {
      shuffle_in_place(order, rng);
      cursor = 0;
    }
    std::vector<const MatrixF*> imgs;
    std::vector<std::vector<int>> ch;
    for (std::size_t k = 0; k < bs; ++k) {
      const std::size_t i = order[cursor++];
      imgs.push_back(&train[i].patches);
      ch.push_back(train_chars[i]);
    }
    Tape<float> tape;
    Var<float> loss = stage2_loss(tape, model.params, qcfg, dcfg, imgs, ch);
    const double lv = loss.value()(0, 0);
    if (!std::isfinite(lv)) throw numeric_error("NonFiniteLoss", "stage-2 step " + std::to_string(step));
    tape.backward(loss);
    auto grads = tape.param_grads();
    const double gnorm = clip_global_norm(grads, cfg.grad_clip_norm);
    const double lr = warmup_cosine_lr(cfg.lr, step, cfg.warmup_steps, cfg.max_steps);
    opt.step(model.params, grads, lr);
    res.steps_run = step;
    json rec{{"step", step}, {"lr", lr}, {"loss", lv}, {"grad_norm", gnorm}};
    bool stop = false;
    if (!validation.empty() && (step % cfg.eval_every == 0 || step == cfg.max_steps)) {
      const double v = val_loss(model.params);
      rec["val_loss"] = v;
      if (v < res.best_val_loss) {
        res.best_val_loss = v;
        res.best_step = step;
        best = model.params;
        stale = 0;
      } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
        stop = true;
      }
    }
    if (log) *log << rec.dump() << "\n";
    if (stop) break;
  }
  if (!validation.empty()) model.params = std::move(best);
  ParamSet<float> after;
  after.merge_from(model.params, "dec.");
  res.decoder_checksum_after = params_checksum(after, "dec.");
  if (res.decoder_checksum_after != res.decoder_checksum_before) {
    throw numeric_error("FrozenViolation", "decoder parameters changed during stage 2");
  }
  return res;
}

namespace {

/// Greedy continuation of token sequences behind fixed per-sequence prefixes.
std::vector<std::vector<int>> greedy_continue(const GraftedModel& m, const std::vector<MatrixF>& prefixes,
                                              std::vector<std::vector<int>> seqs, int max_new) {
  const int nq = m.qformer_config.n_queries;
  const DecoderConfig& dcfg = m.decoder.config;
  std::vector<std::vector<int>> out(seqs.size());
  std::vector<bool> done(seqs.size(), false);
  for (int step = 0; step < max_new; ++step) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      if (!done[i] && static_cast<int>(seqs[i].size()) < dcfg.context) active.push_back(i);
    }
    if (active.empty()) break;
    MatrixF pre(static_cast<Eigen::Index>(active.size()) * nq, dcfg.dim);
    std::vector<std::vector<int>> batch;
    for (std::size_t a = 0; a < active.size(); ++a) {
      pre.middleRows(static_cast<Eigen::Index>(a) * nq, nq) = prefixes[active[a]];
      batch.push_back(seqs[active[a]]);
    }
    Tape<float> tape(false);
    std::vector<int> off;
    Var<float> logits = decoder_logits(tape, m.params, dcfg, tape.constant(std::move(pre)), nq, batch, &off, false);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t i = active[a];
      Eigen::Index best = 0;
      logits.value().row(off[a] + static_cast<int>(batch[a].size()) - 1).maxCoeff(&best);
      const int tok = static_cast<int>(best);
      if (tok == CharTokenizer::kEos || tok == CharTokenizer::kPad || tok == CharTokenizer::kBos) {
        done[i] = true;
        continue;
      }
      seqs[i].push_back(tok);
      out[i].push_back(tok);
    }
  }
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (!done[i] && static_cast<int>(seqs[i].size()) >= dcfg.context) done[i] = true;
  }
  return out;
}

std::vector<MatrixF> graft_prefixes(const GraftedModel& m, const std::vector<const MatrixF*>& images) {
  std::vector<MatrixF> out;
  for (std::size_t b = 0; b < images.size(); b += 64) {
    const std::vector<const MatrixF*> chunk(images.begin() + static_cast<std::ptrdiff_t>(b),
                                            images.begin() + static_cast<std::ptrdiff_t>(std::min(images.size(), b + 64)));
    Tape<float> tape(false);
    QFormerLayout L(m.qformer_config.n_queries);
    for (std::size_t i = 0; i < chunk.size(); ++i) L.queries_alone(L.add_query_group(static_cast<int>(i)));
    const auto h = qformer_forward(tape, m.params, m.qformer_config, chunk, L);
    const auto pre = linear(tape, m.params, "graft", h.queries, false);
    const int nq = m.qformer_config.n_queries;
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(pre.value().middleRows(static_cast<Eigen::Index>(i) * nq, nq));
  }
  return out;
}

}  // namespace

std::vector<std::string> generate(const GraftedModel& model, const std::vector<const MatrixF*>& images, int max_len,
                                  const std::string& prompt) {
  if (max_len < 1 || max_len > model.decoder.config.context) {
    throw config_error("BadConfig", "max_len must lie in [1, decoder context]");
  }
  const auto prefixes = graft_prefixes(model, images);
  std::vector<int> start{CharTokenizer::kBos};
  const auto p = model.decoder.tokenizer.encode(prompt);
  start.insert(start.end(), p.begin(), p.end());
  const auto gen = greedy_continue(model, prefixes, std::vector<std::vector<int>>(images.size(), start), max_len);
  std::vector<std::string> out;
  for (const auto& g : gen) out.push_back(model.decoder.tokenizer.decode(g));
  return out;
}

int parse_priority(const std::string& r) {
  auto digit = [&](std::size_t i) { return i < r.size() && r[i] >= '0' && r[i] <= '9'; };
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] < '1' || r[i] > '3') continue;
    if ((i > 0 && digit(i - 1)) || digit(i + 1)) continue;
    return r[i] - '0';
  }
  return 0;
}

void sort_priorities(std::vector<PriorityScore>& s) {
  std::stable_sort(s.begin(), s.end(), [](const PriorityScore& a, const PriorityScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.slide_id < b.slide_id;
  });
}

std::vector<PriorityScore> prioritize(const GraftedModel& model, const std::vector<std::string>& slide_ids,
                                      const std::vector<const MatrixF*>& images, const std::string& prompt,
                                      int max_len) {
  if (slide_ids.size() != images.size()) throw data_error("BadBatch", "one id per image is required");
  const auto prefixes = graft_prefixes(model, images);
  const auto& tok = model.decoder.tokenizer;
  const auto texts = greedy_continue(model, prefixes,
                                     std::vector<std::vector<int>>(images.size(), {CharTokenizer::kBos}), max_len);
  std::vector<std::vector<int>> asks;
  for (const auto& t : texts) {
    std::vector<int> s{CharTokenizer::kBos};
    const auto body = tok.encode(prioritization_sequence(tok.decode(t), prompt));
    s.insert(s.end(), body.begin(), body.end());
    if (static_cast<int>(s.size()) >= model.decoder.config.context) s.resize(static_cast<std::size_t>(model.decoder.config.context - 4));
    asks.push_back(std::move(s));
  }
  const auto answers = greedy_continue(model, prefixes, asks, 4);
  std::vector<PriorityScore> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    PriorityScore p;
    p.slide_id = slide_ids[i];
    p.raw_response = tok.decode(answers[i]);
    const int s = parse_priority(p.raw_response);
    p.score = s == 0 ? 1 : s;
    p.flagged = s == 0;
    out.push_back(std::move(p));
  }
  sort_priorities(out);
  return out;
}

std::string priority_to_json_line(const PriorityScore& p) {
  nlohmann::ordered_json j;
  j["slide_id"] = p.slide_id;
  j["score"] = p.score;
  j["raw_response"] = p.raw_response;
  j["flagged"] = p.flagged;
  return j.dump();
}

}  // namespace slidealign
