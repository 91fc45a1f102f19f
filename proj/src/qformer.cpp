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

#include "slidealign/qformer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "json.hpp"
#include "slidealign/optim.hpp"
#include "slidealign/retrieval_eval.hpp"

namespace slidealign {

using nlohmann::json;

std::string to_string(Variant v) { return v == Variant::R ? "R" : "G"; }

Variant variant_from_string(const std::string& s) {
  if (s == "R" || s == "r") return Variant::R;
  if (s == "G" || s == "g") return Variant::G;
  throw config_error("BadConfig", "unknown variant " + s);
}

QFormerConfig QFormerConfig::for_variant(Variant v) {
  QFormerConfig c;
  c.variant = v;
  c.n_queries = v == Variant::R ? 1 : 32;
  return c;
}

void QFormerConfig::validate() const {
  auto bad = [](const std::string& m) { return config_error("BadConfig", m); };
  if (n_queries < 1) throw bad("n_queries must be positive");
  if (query_dim < 1 || n_heads < 1 || query_dim % n_heads != 0) throw bad("query_dim must be divisible by n_heads");
  if (intermediate_dim < 1 || itc_proj_dim < 1 || n_layers < 1 || patch_dim < 1) throw bad("dimensions must be positive");
  if (max_text_len < 2) throw bad("max_text_len must be at least 2");
  if (vocab_size < 5) throw bad("vocabulary smaller than the special tokens");
}

LossWeights LossWeights::for_variant(Variant v) {
  if (v == Variant::R) return {1.0, 0.0, 0.0};
  return {1.0, 0.5, 1.0};
}

TrainConfig TrainConfig::for_variant(Variant v) {
  TrainConfig t;
  t.weights = LossWeights::for_variant(v);
  t.init_temperature = v == Variant::R ? 0.01 : 0.07;
  return t;
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { return config_error("BadConfig", m); };
  if (!(lr > 0)) throw bad("lr must be positive");
  if (warmup_steps < 0 || warmup_steps >= max_steps) throw bad("warmup_steps must be below max_steps");
  if (batch_size < 2) throw bad("batch_size must be at least 2");
  if (!(init_temperature > 0)) throw bad("temperature must be positive");
  if (weights.itc < 0 || weights.itm < 0 || weights.itg < 0) throw bad("loss weights must be nonnegative");
  if (weights.itc + weights.itm + weights.itg <= 0) throw bad("all loss weights are zero");
  if (eval_every < 1) throw bad("eval_every must be positive");
}

template <typename T>
ParamSet<T> init_qformer_params(const QFormerConfig& cfg, double init_temperature, std::uint64_t seed) {
  cfg.validate();
  const int D = cfg.query_dim, I = cfg.intermediate_dim, P = cfg.patch_dim;
  ParamSet<T> ps;
  auto linear = [&](const std::string& n, int in, int out) {
    ps.add(n + ".w", in, out);
    ps.add(n + ".b", 1, out);
  };
  auto norm = [&](const std::string& n, int d) {
    ps.add(n + ".ln.g", 1, d);
    ps.add(n + ".ln.b", 1, d);
  };
  ps.add("queries", cfg.n_queries, D);
  norm("vision", P);
  ps.add("text.embed", cfg.vocab_size, D);
  ps.add("text.pos", cfg.max_text_len, D);
  norm("text", D);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    norm(p + "self", D);
    for (const char* m : {"q", "k", "v", "o"}) linear(p + "self." + m, D, D);
    norm(p + "cross", D);
    linear(p + "cross.q", D, D);
    linear(p + "cross.k", P, D);
    linear(p + "cross.v", P, D);
    linear(p + "cross.o", D, D);
    for (const char* f : {"ffn_q", "ffn_t"}) {
      norm(p + f, D);
      linear(p + f + ".fc1", D, I);
      linear(p + f + ".fc2", I, D);
    }
  }
  norm("final_q", D);
  norm("final_t", D);
  linear("itc.img", D, cfg.itc_proj_dim);
  linear("itc.txt", D, cfg.itc_proj_dim);
  linear("itm", D, 2);
  linear("itg", D, cfg.vocab_size);
  ps.add("log_temp", 1, 1);

  Rng rng(seed);
  for (auto& [name, m] : ps.blocks()) {
    const bool is_gain = name.size() >= 5 && name.compare(name.size() - 5, 5, ".ln.g") == 0;
    const bool is_bias = name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    if (name == "log_temp") {
      m(0, 0) = static_cast<T>(std::log(init_temperature));
    } else if (is_gain) {
      m.setOnes();
    } else if (!is_bias) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(0.02 * standard_normal(rng));
    }
  }
  return ps;
}

template ParamSet<float> init_qformer_params<float>(const QFormerConfig&, double, std::uint64_t);
template ParamSet<double> init_qformer_params<double>(const QFormerConfig&, double, std::uint64_t);

// ---------------------------------------------------------------------------
// Layout

namespace {
enum RoleKind { kQueriesAlone, kTextAlone, kJoint, kPrefixLm };
}

int QFormerLayout::add_query_group(int image) {
  group_image_.push_back(image);
  return n_groups() - 1;
}

int QFormerLayout::add_text(std::vector<int> tokens) {
  if (tokens.empty()) throw data_error("EmptyText", "a text needs at least one token");
  text_offset_.push_back(text_rows_);
  text_rows_ += static_cast<int>(tokens.size());
  texts_.push_back(std::move(tokens));
  return n_texts() - 1;
}

void QFormerLayout::queries_alone(int g) { roles_.push_back({kQueriesAlone, g, -1}); }
void QFormerLayout::text_alone(int t) { roles_.push_back({kTextAlone, -1, t}); }
void QFormerLayout::joint(int g, int t) { roles_.push_back({kJoint, g, t}); }
void QFormerLayout::prefix_lm(int g, int t) { roles_.push_back({kPrefixLm, g, t}); }

std::vector<int> QFormerLayout::group_rows(int g) const {
  std::vector<int> r(static_cast<std::size_t>(nq_));
  for (int q = 0; q < nq_; ++q) r[static_cast<std::size_t>(q)] = g * nq_ + q;
  return r;
}

std::vector<int> QFormerLayout::text_rows(int t) const {
  const int n = static_cast<int>(texts_[static_cast<std::size_t>(t)].size());
  std::vector<int> r(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = query_row_count() + text_offset(t) + i;
  return r;
}

std::vector<ag::AttnSegment> QFormerLayout::segments() const {
  std::vector<ag::AttnSegment> segs;
  std::vector<int> covered(static_cast<std::size_t>(query_row_count() + text_row_count()), 0);
  auto concat = [](std::vector<int> a, const std::vector<int>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  for (const auto& r : roles_) {
    ag::AttnSegment s;
    switch (r.kind) {
      case kQueriesAlone:
        s.q_rows = s.k_rows = group_rows(r.group);
        break;
      case kTextAlone:
        s.q_rows = s.k_rows = text_rows(r.text);
        break;
      case kJoint:
        s.q_rows = s.k_rows = concat(group_rows(r.group), text_rows(r.text));
        break;
      case kPrefixLm:
        s.q_rows = text_rows(r.text);
        s.k_rows = concat(group_rows(r.group), s.q_rows);
        s.causal_prefix = nq_;
        s.q_offset = nq_;
        break;
    }
    for (int row : s.q_rows) ++covered[static_cast<std::size_t>(row)];
    segs.push_back(std::move(s));
  }
  for (int c : covered) {
    if (c != 1) throw config_error("LayoutIncomplete", "every row needs exactly one attention role");
  }
  return segs;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename T>
Var<T> linear(Tape<T>& t, const ParamSet<T>& p, const std::string& name, Var<T> x) {
  return ag::add_row(ag::matmul(x, t.param(p, name + ".w")), t.param(p, name + ".b"));
}

template <typename T>
Var<T> norm(Tape<T>& t, const ParamSet<T>& p, const std::string& name, Var<T> x) {
  return ag::layer_norm(x, t.param(p, name + ".ln.g"), t.param(p, name + ".ln.b"));
}

template <typename T>
Var<T> ffn(Tape<T>& t, const ParamSet<T>& p, const std::string& name, Var<T> x) {
  Var<T> h = ag::gelu(linear(t, p, name + ".fc1", norm(t, p, name, x)));
  return ag::add(x, linear(t, p, name + ".fc2", h));
}

}  // namespace

template <typename T>
QFormerHidden<T> qformer_forward(Tape<T>& tape, const ParamSet<T>& P, const QFormerConfig& cfg,
                                 const std::vector<const Matrix<T>*>& images, const QFormerLayout& layout) {
  const int nq = cfg.n_queries;
  if (layout.n_queries() != nq) throw config_error("BadConfig", "layout and config disagree on n_queries");
  const int nqr = layout.query_row_count();
  const int ntr = layout.text_row_count();
  if (nqr + ntr == 0) throw data_error("EmptyBatch", "nothing to encode");
  auto self_segs = std::make_shared<const std::vector<ag::AttnSegment>>(layout.segments());

  QFormerHidden<T> out;
  Var<T> hq, ht, patches;
  std::shared_ptr<std::vector<ag::AttnSegment>> cross_segs;

  if (nqr > 0) {
    std::vector<int> offset;
    Eigen::Index total = 0;
    for (const auto* img : images) {
      if (img->rows() == 0) throw data_error("EmptyPatchSequence", "an image has no patches");
      if (img->rows() > kMaxPatches) throw data_error("SeqTooLong", "more than 10240 patches");
      if (img->cols() != cfg.patch_dim) throw data_error("BadPatchShape", "patch embedding width differs from config");
      offset.push_back(static_cast<int>(total));
      total += img->rows();
    }
    Matrix<T> stacked(total, cfg.patch_dim);
    for (std::size_t i = 0; i < images.size(); ++i) stacked.middleRows(offset[i], images[i]->rows()) = *images[i];
    patches = norm(tape, P, "vision", tape.constant(std::move(stacked)));

    cross_segs = std::make_shared<std::vector<ag::AttnSegment>>();
    std::vector<int> qidx;
    for (int g = 0; g < layout.n_groups(); ++g) {
      const int img = layout.group_image(g);
      if (img < 0 || static_cast<std::size_t>(img) >= images.size()) throw data_error("BadLayout", "group image out of range");
      ag::AttnSegment s;
      for (int q = 0; q < nq; ++q) {
        s.q_rows.push_back(g * nq + q);
        qidx.push_back(q);
      }
      for (Eigen::Index r = 0; r < images[static_cast<std::size_t>(img)]->rows(); ++r) {
        s.k_rows.push_back(offset[static_cast<std::size_t>(img)] + static_cast<int>(r));
      }
      cross_segs->push_back(std::move(s));
    }
    hq = ag::gather_rows(tape.param(P, "queries"), std::move(qidx));
  }

  if (ntr > 0) {
    std::vector<int> ids, pos;
    for (int t = 0; t < layout.n_texts(); ++t) {
      const auto& tok = layout.text_tokens(t);
      if (static_cast<int>(tok.size()) > cfg.max_text_len) throw data_error("SeqTooLong", "text longer than max_text_len");
      for (std::size_t i = 0; i < tok.size(); ++i) {
        if (tok[i] < 0 || tok[i] >= cfg.vocab_size) throw data_error("BadToken", "token id outside the vocabulary");
        ids.push_back(tok[i]);
        pos.push_back(static_cast<int>(i));
      }
    }
    Var<T> e = ag::add(ag::gather_rows(tape.param(P, "text.embed"), std::move(ids)),
                       ag::gather_rows(tape.param(P, "text.pos"), std::move(pos)));
    ht = norm(tape, P, "text", e);
  }

  std::shared_ptr<const std::vector<ag::AttnSegment>> csegs = cross_segs;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    Var<T> x = nqr > 0 && ntr > 0 ? ag::concat_rows<T>({hq, ht}) : (nqr > 0 ? hq : ht);
    Var<T> xn = norm(tape, P, p + "self", x);
    Var<T> a = ag::attention(linear(tape, P, p + "self.q", xn), linear(tape, P, p + "self.k", xn),
                             linear(tape, P, p + "self.v", xn), cfg.n_heads, self_segs);
    x = ag::add(x, linear(tape, P, p + "self.o", a));
    if (nqr > 0 && ntr > 0) {
      hq = ag::slice_rows(x, 0, nqr);
      ht = ag::slice_rows(x, nqr, ntr);
    } else if (nqr > 0) {
      hq = x;
    } else {
      ht = x;
    }
    if (nqr > 0) {
      Var<T> qn = norm(tape, P, p + "cross", hq);
      Var<T> c = ag::attention(linear(tape, P, p + "cross.q", qn), linear(tape, P, p + "cross.k", patches),
                               linear(tape, P, p + "cross.v", patches), cfg.n_heads, csegs);
      hq = ag::add(hq, linear(tape, P, p + "cross.o", c));
      hq = ffn(tape, P, p + "ffn_q", hq);
    }
    if (ntr > 0) ht = ffn(tape, P, p + "ffn_t", ht);
  }
  if (nqr > 0) out.queries = norm(tape, P, "final_q", hq);
  if (ntr > 0) out.text = norm(tape, P, "final_t", ht);
  return out;
}

template <typename T>
Var<T> itc_image_features(Tape<T>& tape, const ParamSet<T>& P, Var<T> rows) {
  return ag::l2_normalize_rows(linear(tape, P, "itc.img", rows));
}

template <typename T>
Var<T> itc_text_features(Tape<T>& tape, const ParamSet<T>& P, Var<T> rows) {
  return ag::l2_normalize_rows(linear(tape, P, "itc.txt", rows));
}

// ---------------------------------------------------------------------------
// Losses

std::vector<int> sample_itm_negatives(const std::vector<std::vector<bool>>& mask, Rng& rng) {
  const std::size_t n = mask.size();
  std::vector<int> out(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && !mask[i][j]) cand.push_back(static_cast<int>(j));
    }
    if (!cand.empty()) out[i] = cand[uniform_index(rng, cand.size())];
  }
  return out;
}

namespace {

std::vector<int> with_start(int start, const std::vector<int>& body) {
  std::vector<int> v{start};
  v.insert(v.end(), body.begin(), body.end());
  return v;
}

}  // namespace

template <typename T>
Var<T> stage1_loss(Tape<T>& tape, const ParamSet<T>& P, const QFormerConfig& cfg, const LossWeights& w,
                   const Stage1Batch<T>& batch, Stage1Stats* stats) {
  const int B = static_cast<int>(batch.images.size());
  const int nq = cfg.n_queries;
  if (B < 1 || static_cast<int>(batch.texts.size()) != B) throw data_error("BadBatch", "one text per image is required");
  const bool do_itc = w.itc > 0, do_itm = w.itm > 0, do_itg = w.itg > 0;

  QFormerLayout L(nq);
  for (int i = 0; i < B; ++i) L.queries_alone(L.add_query_group(i));
  std::vector<int> cls_text, dec_text;
  if (do_itc) {
    for (int i = 0; i < B; ++i) {
      cls_text.push_back(L.add_text(with_start(WordTokenizer::kCls, batch.texts[static_cast<std::size_t>(i)])));
      L.text_alone(cls_text.back());
    }
  }
  if (do_itg) {
    for (int i = 0; i < B; ++i) {
      dec_text.push_back(L.add_text(with_start(WordTokenizer::kDec, batch.texts[static_cast<std::size_t>(i)])));
      L.prefix_lm(i, dec_text.back());
    }
  }
  std::vector<int> itm_labels;
  const int first_itm_group = L.n_groups();
  if (do_itm) {
    for (int i = 0; i < B; ++i) {
      const int neg = batch.itm_negative.empty() ? -1 : batch.itm_negative[static_cast<std::size_t>(i)];
      if (neg < 0) continue;
      for (int j : {i, neg}) {
        const int g = L.add_query_group(i);
        const int t = L.add_text(with_start(WordTokenizer::kCls, batch.texts[static_cast<std::size_t>(j)]));
        L.joint(g, t);
        itm_labels.push_back(j == i ? 1 : 0);
      }
    }
  }

  QFormerHidden<T> h = qformer_forward(tape, P, cfg, batch.images, L);
  std::vector<Var<T>> terms;
  std::vector<T> weights;
  Stage1Stats st;

  if (do_itc) {
    Var<T> img = itc_image_features(tape, P, ag::slice_rows(h.queries, 0, static_cast<Eigen::Index>(B) * nq));
    std::vector<int> starts;
    for (int t : cls_text) starts.push_back(L.text_offset(t));
    Var<T> txt = itc_text_features(tape, P, ag::gather_rows(h.text, std::move(starts)));
    Var<T> logits = ag::scale_by_exp(ag::max_query_similarity(img, txt, nq), tape.param(P, "log_temp"), T(-1));
    std::vector<std::vector<bool>> mask = batch.fn_mask;
    if (mask.empty()) mask.assign(static_cast<std::size_t>(B), std::vector<bool>(static_cast<std::size_t>(B), false));
    Var<T> l = ag::masked_infonce(logits, mask, &st.itc_stats);
    st.itc = static_cast<double>(l.value()(0, 0));
    terms.push_back(l);
    weights.push_back(static_cast<T>(w.itc));
  }
  if (do_itm && !itm_labels.empty()) {
    const auto n_pairs = static_cast<Eigen::Index>(itm_labels.size());
    Var<T> q = ag::slice_rows(h.queries, static_cast<Eigen::Index>(first_itm_group) * nq, n_pairs * nq);
    Var<T> logits = linear(tape, P, "itm", ag::group_mean_rows(q, nq));
    Var<T> l = ag::cross_entropy(logits, itm_labels);
    st.itm = static_cast<double>(l.value()(0, 0));
    terms.push_back(l);
    weights.push_back(static_cast<T>(w.itm));
  }
  if (do_itg) {
    std::vector<int> rows, targets;
    for (int t : dec_text) {
      const auto& tok = L.text_tokens(t);
      for (std::size_t k = 0; k + 1 < tok.size(); ++k) {
        rows.push_back(L.text_offset(t) + static_cast<int>(k));
        targets.push_back(tok[k + 1] == WordTokenizer::kPad ? -1 : tok[k + 1]);
      }
    }
    Var<T> logits = linear(tape, P, "itg", ag::gather_rows(h.text, std::move(rows)));
    Var<T> l = ag::cross_entropy(logits, std::move(targets), -1);
    st.itg = static_cast<double>(l.value()(0, 0));
    terms.push_back(l);
    weights.push_back(static_cast<T>(w.itg));
  }
  if (terms.empty()) throw config_error("BadConfig", "no loss branch is active");
  Var<T> total = ag::weighted_sum(terms, weights);
  st.total = static_cast<double>(total.value()(0, 0));
  if (stats) *stats = st;
  return total;
}

#define SLIDEALIGN_INSTANTIATE(T)                                                                               \
  template QFormerHidden<T> qformer_forward<T>(Tape<T>&, const ParamSet<T>&, const QFormerConfig&,             \
                                               const std::vector<const Matrix<T>*>&, const QFormerLayout&);     \
  template Var<T> itc_image_features<T>(Tape<T>&, const ParamSet<T>&, Var<T>);                                 \
  template Var<T> itc_text_features<T>(Tape<T>&, const ParamSet<T>&, Var<T>);                                  \
  template Var<T> stage1_loss<T>(Tape<T>&, const ParamSet<T>&, const QFormerConfig&, const LossWeights&,       \
                                 const Stage1Batch<T>&, Stage1Stats*);
SLIDEALIGN_INSTANTIATE(float)
SLIDEALIGN_INSTANTIATE(double)
#undef SLIDEALIGN_INSTANTIATE

// ---------------------------------------------------------------------------
// Encoder

QFormerEncoder::QFormerEncoder(QFormerConfig cfg, WordTokenizer tokenizer, ParamSet<float> params)
    : cfg_(cfg), tok_(std::move(tokenizer)), params_(std::move(params)) {
  cfg_.validate();
  if (tok_.size() != cfg_.vocab_size) throw config_error("BadConfig", "tokenizer and config vocabulary sizes differ");
}

namespace {
constexpr std::size_t kImageChunk = 64;
constexpr std::size_t kTextChunk = 256;
}  // namespace

std::vector<MatrixF> QFormerEncoder::query_states(const std::vector<const MatrixF*>& images) const {
  std::vector<MatrixF> out;
  for (std::size_t b = 0; b < images.size(); b += kImageChunk) {
    const std::vector<const MatrixF*> chunk(images.begin() + static_cast<std::ptrdiff_t>(b),
                                            images.begin() + static_cast<std::ptrdiff_t>(std::min(images.size(), b + kImageChunk)));
    Tape<float> tape(false);
    QFormerLayout L(cfg_.n_queries);
    for (std::size_t i = 0; i < chunk.size(); ++i) L.queries_alone(L.add_query_group(static_cast<int>(i)));
    const auto h = qformer_forward(tape, params_, cfg_, chunk, L);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out.push_back(h.queries.value().middleRows(static_cast<Eigen::Index>(i) * cfg_.n_queries, cfg_.n_queries));
    }
  }
  return out;
}

std::vector<MatrixF> QFormerEncoder::encode_images(const std::vector<const MatrixF*>& images) const {
  std::vector<MatrixF> out;
  for (std::size_t b = 0; b < images.size(); b += kImageChunk) {
    const std::vector<const MatrixF*> chunk(images.begin() + static_cast<std::ptrdiff_t>(b),
                                            images.begin() + static_cast<std::ptrdiff_t>(std::min(images.size(), b + kImageChunk)));
    Tape<float> tape(false);
    QFormerLayout L(cfg_.n_queries);
    for (std::size_t i = 0; i < chunk.size(); ++i) L.queries_alone(L.add_query_group(static_cast<int>(i)));
    const auto h = qformer_forward(tape, params_, cfg_, chunk, L);
    const auto f = itc_image_features(tape, params_, h.queries);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out.push_back(f.value().middleRows(static_cast<Eigen::Index>(i) * cfg_.n_queries, cfg_.n_queries));
    }
  }
  return out;
}

MatrixF QFormerEncoder::encode_texts(const std::vector<std::string>& texts) const {
  MatrixF out(static_cast<Eigen::Index>(texts.size()), cfg_.itc_proj_dim);
  for (std::size_t b = 0; b < texts.size(); b += kTextChunk) {
    const std::size_t e = std::min(texts.size(), b + kTextChunk);
    Tape<float> tape(false);
    QFormerLayout L(cfg_.n_queries);
    std::vector<int> starts;
    for (std::size_t i = b; i < e; ++i) {
      const int t = L.add_text(tok_.encode(texts[i], WordTokenizer::kCls, cfg_.max_text_len));
      L.text_alone(t);
      starts.push_back(L.text_offset(t));
    }
    const auto h = qformer_forward<float>(tape, params_, cfg_, {}, L);
    const auto f = itc_text_features(tape, params_, ag::gather_rows(h.text, starts));
    out.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) = f.value();
  }
  return out;
}

std::string config_to_json(const QFormerConfig& c) {
  json j;
  j["variant"] = to_string(c.variant);
  j["n_queries"] = c.n_queries;
  j["query_dim"] = c.query_dim;
  j["intermediate_dim"] = c.intermediate_dim;
  j["itc_proj_dim"] = c.itc_proj_dim;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["patch_dim"] = c.patch_dim;
  j["max_text_len"] = c.max_text_len;
  j["vocab_size"] = c.vocab_size;
  return j.dump();
}

QFormerConfig config_from_json(const std::string& s) {
  try {
    const json j = json::parse(s);
    QFormerConfig c;
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.n_queries = j.at("n_queries");
    c.query_dim = j.at("query_dim");
    c.intermediate_dim = j.at("intermediate_dim");
    c.itc_proj_dim = j.at("itc_proj_dim");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.patch_dim = j.at("patch_dim");
    c.max_text_len = j.at("max_text_len");
    c.vocab_size = j.at("vocab_size");
    return c;
  } catch (const json::exception& e) {
    throw data_error("CorruptCheckpoint", std::string("bad Q-Former config: ") + e.what());
  }
}

Checkpoint QFormerEncoder::to_checkpoint(const std::string& extra_meta_json) const {
  json meta;
  meta["kind"] = "qformer";
  meta["config"] = json::parse(config_to_json(cfg_));
  std::vector<std::string> words(tok_.vocabulary().begin() + 5, tok_.vocabulary().end());
  meta["vocabulary"] = words;
  meta["tokenizer_hash"] = tok_.hash();
  meta["extra"] = json::parse(extra_meta_json);
  return {meta.dump(), params_};
}

QFormerEncoder QFormerEncoder::from_checkpoint(const Checkpoint& ck) {
  json meta;
  try {
    meta = json::parse(ck.meta_json);
  } catch (const json::exception& e) {
    throw data_error("CorruptCheckpoint", e.what());
  }
  if (!meta.contains("config") || !meta.contains("vocabulary")) {
    throw data_error("CorruptCheckpoint", "checkpoint lacks a Q-Former configuration");
  }
  const QFormerConfig cfg = config_from_json(meta["config"].dump());
  auto tok = WordTokenizer::from_vocabulary(meta["vocabulary"].get<std::vector<std::string>>());
  ParamSet<float> params;
  const auto ref = init_qformer_params<float>(cfg, 1.0, 0);
  for (const auto& [name, m] : ref.blocks()) {
    if (!ck.params.contains(name)) throw data_error("CorruptCheckpoint", "missing block " + name);
    const auto& src = ck.params.at(name);
    if (src.rows() != m.rows() || src.cols() != m.cols()) throw data_error("CorruptCheckpoint", "bad shape for " + name);
    params.add(name, m.rows(), m.cols()) = src;
  }
  return QFormerEncoder(cfg, std::move(tok), std::move(params));
}

double retrieval_selection_score(const QFormerEncoder& enc, const std::vector<TrainExample>& examples,
                                 const MatchOracle& oracle) {
  std::vector<const MatrixF*> imgs;
  std::vector<std::string> ids, texts;
  for (const auto& e : examples) {
    imgs.push_back(&e.patches);
    ids.push_back(e.id);
    texts.push_back(e.text);
  }
  std::vector<MatrixD> img_emb;
  for (auto& m : enc.encode_images(imgs)) img_emb.push_back(m.cast<double>());
  auto corpus = make_cross_modal_corpus(ids, std::move(img_emb), texts);
  const MatrixF t = enc.encode_texts(corpus.texts);
  for (Eigen::Index r = 0; r < t.rows(); ++r) corpus.text_embeddings.push_back(t.row(r).cast<double>());
  return image_to_text(corpus, oracle).selection_score();
}

// ---------------------------------------------------------------------------
// Training

namespace {

double validation_itg_loss(const QFormerConfig& cfg, const WordTokenizer& tok, const ParamSet<float>& params,
                           const std::vector<TrainExample>& val, int batch_size) {
  double sum = 0.0;
  std::size_t batches = 0;
  const LossWeights w{0.0, 0.0, 1.0};
  for (std::size_t b = 0; b < val.size(); b += static_cast<std::size_t>(batch_size)) {
    Stage1Batch<float> batch;
    for (std::size_t i = b; i < std::min(val.size(), b + static_cast<std::size_t>(batch_size)); ++i) {
      batch.images.push_back(&val[i].patches);
      auto ids = tok.encode(val[i].text, WordTokenizer::kDec, cfg.max_text_len);
      batch.texts.emplace_back(ids.begin() + 1, ids.end());
    }
    Tape<float> tape(false);
    Stage1Stats st;
    stage1_loss(tape, params, cfg, w, batch, &st);
    sum += st.itg;
    ++batches;
  }
  return batches ? sum / static_cast<double>(batches) : 0.0;
}

}  // namespace

Stage1Result train_stage1(const std::vector<TrainExample>& train, const std::vector<TrainExample>& validation,
                          QFormerConfig cfg, const TrainConfig& tc, const MatchOracle& oracle, std::ostream* log) {
  tc.validate();
  if (train.size() < 2) throw data_error("TooFewExamples", "contrastive training needs at least two pairs");
  std::vector<std::string> texts;
  for (const auto& e : train) texts.push_back(e.text);
  Stage1Result res;
  res.tokenizer = WordTokenizer::fit(texts);
  cfg.vocab_size = res.tokenizer.size();
  cfg.validate();
  res.config = cfg;

  // Oracle matches are computed once over the distinct training texts.
  std::map<std::string, int> uid;
  std::vector<int> text_uid;
  std::vector<std::string> uniq;
  for (const auto& t : texts) {
    auto [it, fresh] = uid.emplace(t, static_cast<int>(uniq.size()));
    if (fresh) uniq.push_back(t);
    text_uid.push_back(it->second);
  }
  const MatchOracle mask_oracle(uniq, tc.fn_threshold);
  std::vector<std::vector<bool>> same(uniq.size(), std::vector<bool>(uniq.size(), false));
  for (std::size_t a = 0; a < uniq.size(); ++a) {
    for (std::size_t b = a; b < uniq.size(); ++b) same[a][b] = same[b][a] = mask_oracle.matches(uniq[a], uniq[b]);
  }
  std::vector<std::vector<int>> bodies;
  for (const auto& t : texts) {
    auto ids = res.tokenizer.encode(t, WordTokenizer::kCls, cfg.max_text_len);
    bodies.emplace_back(ids.begin() + 1, ids.end());
  }

  ParamSet<float> params = init_qformer_params<float>(cfg, tc.init_temperature, tc.seed);
  AdamW<float> opt({tc.beta1, tc.beta2, 1e-8, tc.weight_decay});
  Rng rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_in_place(order, rng);
  std::size_t cursor = 0;
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(tc.batch_size), train.size());
  const float log_temp_lo = std::log(0.001f), log_temp_hi = std::log(0.5f);

  res.best_score = -std::numeric_limits<double>::infinity();
  int stale = 0;
  for (long step = 1; step <= tc.max_steps; ++step) {
    if (cursor + bs > order.size()) {
      shuffle_in_place(order, rng);
      cursor = 0;
    }
    Stage1Batch<float> batch;
    std::vector<int> batch_uid;
    for (std::size_t k = 0; k < bs; ++k) {
      const std::size_t i = order[cursor++];
      batch.images.push_back(&train[i].patches);
      batch.texts.push_back(bodies[i]);
      batch_uid.push_back(text_uid[i]);
    }
    batch.fn_mask.assign(bs, std::vector<bool>(bs, false));
    for (std::size_t a = 0; a < bs; ++a) {
      for (std::size_t b = 0; b < bs; ++b) {
        batch.fn_mask[a][b] = a != b && same[static_cast<std::size_t>(batch_uid[a])][static_cast<std::size_t>(batch_uid[b])];
      }
    }
    if (tc.weights.itm > 0) batch.itm_negative = sample_itm_negatives(batch.fn_mask, rng);

    Tape<float> tape;
    Stage1Stats st;
    Var<float> loss = stage1_loss(tape, params, cfg, tc.weights, batch, &st);
    if (!std::isfinite(st.total)) throw numeric_error("NonFiniteLoss", "non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    const double lr = warmup_cosine_lr(tc.lr, step, tc.warmup_steps, tc.max_steps);
    opt.step(params, tape.param_grads(), lr);
    auto& lt = params.at("log_temp");
    lt(0, 0) = std::clamp(lt(0, 0), log_temp_lo, log_temp_hi);
    res.steps_run = step;

    json rec;
    rec["step"] = step;
    rec["lr"] = lr;
    rec["itc"] = st.itc;
    rec["itm"] = st.itm;
    rec["itg"] = st.itg;
    rec["total"] = st.total;

    if (!validation.empty() && (step % tc.eval_every == 0 || step == tc.max_steps)) {
      const double score =
          cfg.variant == Variant::R
              ? retrieval_selection_score(QFormerEncoder(cfg, res.tokenizer, params), validation, oracle)
              : -validation_itg_loss(cfg, res.tokenizer, params, validation, static_cast<int>(bs));
      rec["val_score"] = score;
      if (score > res.best_score) {
        res.best_score = score;
        res.best_step = step;
        res.params = params;
        stale = 0;
      } else if (tc.patience > 0 && ++stale >= tc.patience) {
        res.stopped_early = true;
      }
    }
    if (log) *log << rec.dump() << "\n";
    if (res.stopped_early) break;
  }
  if (validation.empty()) {
    res.params = params;
    res.best_step = res.steps_run;
    res.best_score = 0.0;
  }
  return res;
}

}  // namespace slidealign
