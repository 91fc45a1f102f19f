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

// Tape-based reverse-mode differentiation over dense row-major Eigen
// matrices. Every op records its value and a backward closure; calling
// Tape::backward on a 1x1 node accumulates gradients into all nodes that
// need them. The tape is single-use: build it per forward pass.

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "slidealign/common.hpp"

namespace slidealign {

/// Named parameter blocks, ordered by name so iteration is deterministic.
template <typename T>
class ParamSet {
 public:
  Matrix<T>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto [it, inserted] = blocks_.emplace(name, Matrix<T>::Zero(rows, cols));
    if (!inserted) throw config_error("DuplicateParam", name);
    return it->second;
  }
  Matrix<T>& at(const std::string& name) {
    auto it = blocks_.find(name);
    if (it == blocks_.end()) throw config_error("MissingParam", name);
    return it->second;
  }
  const Matrix<T>& at(const std::string& name) const {
    auto it = blocks_.find(name);
    if (it == blocks_.end()) throw config_error("MissingParam", name);
    return it->second;
  }
  bool contains(const std::string& name) const { return blocks_.count(name) > 0; }
  std::map<std::string, Matrix<T>>& blocks() { return blocks_; }
  const std::map<std::string, Matrix<T>>& blocks() const { return blocks_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [k, m] : blocks_) n += static_cast<std::size_t>(m.size());
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [k, m] : blocks_) out.add(k, m.rows(), m.cols()) = m.template cast<U>();
    return out;
  }

  /// Copies every block of `other` whose name starts with `prefix`.
  void merge_from(const ParamSet<T>& other, const std::string& prefix = "") {
    for (const auto& [k, m] : other.blocks()) {
      if (k.rfind(prefix, 0) == 0) blocks_[k] = m;
    }
  }

 private:
  std::map<std::string, Matrix<T>> blocks_;
};

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Matrix<T>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool needs_grad() const { return tape->needs_grad(id); }
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Mat m) {
    Node n;
    n.value = std::move(m);
    return push_node(std::move(n));
  }

  /// Binds a parameter block by reference. Binding the same name twice
  /// returns the same node.
  Var<T> param(const ParamSet<T>& ps, const std::string& name, bool trainable = true) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end()) return {this, it->second};
    Node n;
    n.ref = &ps.at(name);
    n.needs_grad = trainable && grad_enabled_;
    n.param_name = name;
    Var<T> v = push_node(std::move(n));
    param_ids_[name] = v.id;
    return v;
  }

  /// Leaf whose gradient is wanted but which is not a named parameter.
  Var<T> input(Mat m, bool needs_grad) {
    Node n;
    n.value = std::move(m);
    n.needs_grad = needs_grad && grad_enabled_;
    return push_node(std::move(n));
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ref ? *n.ref : n.value;
  }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  Mat& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
      const Mat& v = value(id);
      n.grad = Mat::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() > 0; }

  /// Records an op result. `backward` runs only if some input needs grad.
  Var<T> record(Mat value, bool any_input_needs_grad, std::function<void(int self)> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = any_input_needs_grad && grad_enabled_;
    if (n.needs_grad) n.backward = std::move(backward);
    return push_node(std::move(n));
  }

  void backward(Var<T> loss) {
    if (loss.value().size() != 1) throw numeric_error("NotScalar", "backward needs a 1x1 loss");
    grad(loss.id)(0, 0) = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && n.grad.size() > 0) n.backward(i);
    }
  }

  /// Gradients of trainable parameters reached by backward, by name.
  std::map<std::string, Mat> param_grads() const {
    std::map<std::string, Mat> out;
    for (const auto& [name, id] : param_ids_) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.needs_grad && n.grad.size() > 0) out.emplace(name, n.grad);
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    bool needs_grad = false;
    std::function<void(int)> backward;
    std::string param_name;
  };

  Var<T> push_node(Node n) {
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;
  std::map<std::string, int> param_ids_;
  bool grad_enabled_;
};

namespace ag {

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>* t = a.tape;
  return t->record(a.value() * b.value(), a.needs_grad() || b.needs_grad(), [t, a, b](int self) {
    const auto& g = t->grad(self);
    if (a.needs_grad()) t->grad(a.id).noalias() += g * b.value().transpose();
    if (b.needs_grad()) t->grad(b.id).noalias() += a.value().transpose() * g;
  });
}

/// a * b^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>* t = a.tape;
  return t->record(a.value() * b.value().transpose(), a.needs_grad() || b.needs_grad(),
                   [t, a, b](int self) {
                     const auto& g = t->grad(self);
                     if (a.needs_grad()) t->grad(a.id).noalias() += g * b.value();
                     if (b.needs_grad()) t->grad(b.id).noalias() += g.transpose() * a.value();
                   });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>* t = a.tape;
  return t->record(a.value() + b.value(), a.needs_grad() || b.needs_grad(), [t, a, b](int self) {
    const auto& g = t->grad(self);
    if (a.needs_grad()) t->grad(a.id) += g;
    if (b.needs_grad()) t->grad(b.id) += g;
  });
}

/// x + bias, bias a 1 x cols row broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> x, Var<T> bias) {
  Tape<T>* t = x.tape;
  Matrix<T> out = x.value();
  out.rowwise() += bias.value().row(0);
  return t->record(std::move(out), x.needs_grad() || bias.needs_grad(), [t, x, bias](int self) {
    const auto& g = t->grad(self);
    if (x.needs_grad()) t->grad(x.id) += g;
    if (bias.needs_grad()) t->grad(bias.id) += g.colwise().sum();
  });
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  Tape<T>* t = x.tape;
  return t->record(x.value() * s, x.needs_grad(), [t, x, s](int self) {
    t->grad(x.id) += t->grad(self) * s;
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Tape<T>* t = x.tape;
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T k = static_cast<T>(0.044715);
  const auto& xv = x.value();
  Matrix<T> th = (c * (xv.array() + k * xv.array().cube())).tanh().matrix();
  Matrix<T> out = (T(0.5) * xv.array() * (T(1) + th.array())).matrix();
  return t->record(std::move(out), x.needs_grad(), [t, x, th = std::move(th), c, k](int self) {
    const auto& xv = x.value();
    const auto d = T(0.5) * (T(1) + th.array()) +
                   T(0.5) * xv.array() * (T(1) - th.array().square()) * c *
                       (T(1) + T(3) * k * xv.array().square());
    t->grad(x.id).array() += t->grad(self).array() * d;
  });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tape<T>* t = x.tape;
  Matrix<T> out = x.value().array().tanh().matrix();
  return t->record(out, x.needs_grad(), [t, x, out](int self) {
    t->grad(x.id).array() += t->grad(self).array() * (T(1) - out.array().square());
  });
}

/// Row-wise layer normalisation with gain and bias rows.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  Tape<T>* t = x.tape;
  const auto& xv = x.value();
  const Eigen::Index d = xv.cols();
  Matrix<T> xhat(xv.rows(), d);
  std::vector<T> inv_std(static_cast<std::size_t>(xv.rows()));
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    xhat.row(r) = (xv.row(r).array() - mean) * is;
  }
  Matrix<T> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const bool ng = x.needs_grad() || gain.needs_grad() || bias.needs_grad();
  return t->record(std::move(out), ng,
                   [t, x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](int self) {
                     const auto& g = t->grad(self);
                     if (gain.needs_grad()) {
                       t->grad(gain.id) += (g.array() * xhat.array()).colwise().sum().matrix();
                     }
                     if (bias.needs_grad()) t->grad(bias.id) += g.colwise().sum();
                     if (!x.needs_grad()) return;
                     auto& gx = t->grad(x.id);
                     const auto grow = gain.value().row(0).array();
                     for (Eigen::Index r = 0; r < g.rows(); ++r) {
                       const auto dxhat = (g.row(r).array() * grow).eval();
                       const T m1 = dxhat.mean();
                       const T m2 = (dxhat * xhat.row(r).array()).mean();
                       gx.row(r).array() +=
                           inv_std[static_cast<std::size_t>(r)] * (dxhat - m1 - xhat.row(r).array() * m2);
                     }
                   });
}

template <typename T>
Var<T> slice_rows(Var<T> x, Eigen::Index begin, Eigen::Index n) {
  Tape<T>* t = x.tape;
  return t->record(x.value().middleRows(begin, n), x.needs_grad(), [t, x, begin, n](int self) {
    t->grad(x.id).middleRows(begin, n) += t->grad(self);
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  Tape<T>* t = parts.front().tape;
  Eigen::Index rows = 0;
  bool ng = false;
  for (const auto& p : parts) {
    rows += p.rows();
    ng = ng || p.needs_grad();
  }
  Matrix<T> out(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t->record(std::move(out), ng, [t, parts](int self) {
    const auto& g = t->grad(self);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      if (p.needs_grad()) t->grad(p.id) += g.middleRows(r, p.rows());
      r += p.rows();
    }
  });
}

/// out.row(i) = x.row(idx[i]); also serves as embedding lookup.
template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<int> idx) {
  Tape<T>* t = x.tape;
  const auto& xv = x.value();
  Matrix<T> out(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = xv.row(idx[i]);
  return t->record(std::move(out), x.needs_grad(), [t, x, idx = std::move(idx)](int self) {
    const auto& g = t->grad(self);
    auto& gx = t->grad(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
  Tape<T>* t = x.tape;
  const auto& xv = x.value();
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = xv.rowwise().norm();
  Matrix<T> y = xv;
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    if (norms(r) <= T(0)) throw numeric_error("ZeroNorm", "cannot normalise a zero row");
    y.row(r) /= norms(r);
  }
  return t->record(y, x.needs_grad(), [t, x, y, norms](int self) {
    const auto& g = t->grad(self);
    auto& gx = t->grad(x.id);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const T dot = g.row(r).dot(y.row(r));
      gx.row(r) += (g.row(r) - dot * y.row(r)) / norms(r);
    }
  });
}

/// S(i, j) = max over q of <img.row(i * n_queries + q), txt.row(j)>.
template <typename T>
Var<T> max_query_similarity(Var<T> img, Var<T> txt, int n_queries) {
  Tape<T>* t = img.tape;
  const auto& iv = img.value();
  const auto& tv = txt.value();
  const Eigen::Index bi = iv.rows() / n_queries;
  const Matrix<T> all = iv * tv.transpose();
  Matrix<T> s(bi, tv.rows());
  std::vector<int> arg(static_cast<std::size_t>(bi * tv.rows()));
  for (Eigen::Index i = 0; i < bi; ++i) {
    for (Eigen::Index j = 0; j < tv.rows(); ++j) {
      int best = 0;
      for (int q = 1; q < n_queries; ++q) {
        if (all(i * n_queries + q, j) > all(i * n_queries + best, j)) best = q;
      }
      s(i, j) = all(i * n_queries + best, j);
      arg[static_cast<std::size_t>(i * tv.rows() + j)] = static_cast<int>(i * n_queries + best);
    }
  }
  return t->record(std::move(s), img.needs_grad() || txt.needs_grad(),
                   [t, img, txt, arg = std::move(arg)](int self) {
                     const auto& g = t->grad(self);
                     for (Eigen::Index i = 0; i < g.rows(); ++i) {
                       for (Eigen::Index j = 0; j < g.cols(); ++j) {
                         const int row = arg[static_cast<std::size_t>(i * g.cols() + j)];
                         if (img.needs_grad()) t->grad(img.id).row(row) += g(i, j) * txt.value().row(j);
                         if (txt.needs_grad()) t->grad(txt.id).row(j) += g(i, j) * img.value().row(row);
                       }
                     }
                   });
}

/// x * exp(sign * log_param), log_param a 1x1 node.
template <typename T>
Var<T> scale_by_exp(Var<T> x, Var<T> log_param, T sign) {
  Tape<T>* t = x.tape;
  const T e = std::exp(sign * log_param.value()(0, 0));
  Matrix<T> out = x.value() * e;
  return t->record(out, x.needs_grad() || log_param.needs_grad(), [t, x, log_param, sign, e, out](int self) {
    const auto& g = t->grad(self);
    if (x.needs_grad()) t->grad(x.id) += g * e;
    if (log_param.needs_grad()) t->grad(log_param.id)(0, 0) += sign * (g.array() * out.array()).sum();
  });
}

/// Mean of consecutive groups of `group` rows.
template <typename T>
Var<T> group_mean_rows(Var<T> x, int group) {
  Tape<T>* t = x.tape;
  const auto& xv = x.value();
  const Eigen::Index n = xv.rows() / group;
  Matrix<T> out(n, xv.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = xv.middleRows(i * group, group).colwise().mean();
  return t->record(std::move(out), x.needs_grad(), [t, x, group](int self) {
    const auto& g = t->grad(self);
    auto& gx = t->grad(x.id);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      gx.middleRows(i * group, group).rowwise() += g.row(i) / static_cast<T>(group);
    }
  });
}

/// Weighted sum of 1x1 nodes.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  Tape<T>* t = terms.front().tape;
  Matrix<T> out = Matrix<T>::Zero(1, 1);
  bool ng = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    out(0, 0) += weights[i] * terms[i].value()(0, 0);
    ng = ng || terms[i].needs_grad();
  }
  return t->record(std::move(out), ng, [t, terms, weights](int self) {
    const T g = t->grad(self)(0, 0);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (terms[i].needs_grad()) t->grad(terms[i].id)(0, 0) += weights[i] * g;
    }
  });
}

/// Mean next-token cross-entropy over rows whose target is not `ignore`.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::vector<int> targets, int ignore = -1) {
  Tape<T>* t = logits.tape;
  const auto& lv = logits.value();
  Matrix<T> probs(lv.rows(), lv.cols());
  T total = 0;
  int n_valid = 0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const T mx = lv.row(r).maxCoeff();
    probs.row(r) = (lv.row(r).array() - mx).exp().matrix();
    const T z = probs.row(r).sum();
    probs.row(r) /= z;
    const int y = targets[static_cast<std::size_t>(r)];
    if (y == ignore) continue;
    total += -(lv(r, y) - mx - std::log(z));
    ++n_valid;
  }
  Matrix<T> out(1, 1);
  out(0, 0) = n_valid > 0 ? total / static_cast<T>(n_valid) : T(0);
  return t->record(std::move(out), logits.needs_grad() && n_valid > 0,
                   [t, logits, probs = std::move(probs), targets = std::move(targets), ignore, n_valid](int self) {
                     const T g = t->grad(self)(0, 0) / static_cast<T>(n_valid);
                     auto& gl = t->grad(logits.id);
                     for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                       const int y = targets[static_cast<std::size_t>(r)];
                       if (y == ignore) continue;
                       gl.row(r) += g * probs.row(r);
                       gl(r, y) -= g;
                     }
                   });
}

/// One block of rows attending to one block of keys. Row and key indices
/// address the query matrix and the key/value matrices respectively.
/// causal_prefix < 0 means every key is visible. Otherwise, with p the
/// prefix length and r = row + q_offset the query's position in the key
/// sequence, the query sees key j iff j < p or (r >= p and j <= r); p = 0 is
/// plain causal attention.
struct AttnSegment {
  std::vector<int> q_rows;
  std::vector<int> k_rows;
  int causal_prefix = -1;
  int q_offset = 0;
};

inline bool attn_visible(int causal_prefix, Eigen::Index r, Eigen::Index j) {
  if (causal_prefix < 0) return true;
  return j < causal_prefix || (r >= causal_prefix && j <= r);
}

/// The visible keys always form a prefix [0, n); this is n.
inline Eigen::Index attn_visible_count(int causal_prefix, Eigen::Index r, Eigen::Index nk) {
  if (causal_prefix < 0) return nk;
  return std::min(nk, r >= causal_prefix ? r + 1 : static_cast<Eigen::Index>(causal_prefix));
}

/// Multi-head scaled dot-product attention over pre-projected q, k, v.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads,
                 std::shared_ptr<const std::vector<AttnSegment>> segments) {
  Tape<T>* t = q.tape;
  const Eigen::Index d = q.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Matrix<T> out = Matrix<T>::Zero(q.rows(), d);
  auto probs = std::make_shared<std::vector<Matrix<T>>>();
  probs->reserve(segments->size() * static_cast<std::size_t>(heads));
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (const auto& seg : *segments) {
    const auto nq = static_cast<Eigen::Index>(seg.q_rows.size());
    const auto nk = static_cast<Eigen::Index>(seg.k_rows.size());
    for (int h = 0; h < heads; ++h) {
      const auto cols = Eigen::seqN(h * dh, dh);
      const Matrix<T> qs = qv(seg.q_rows, cols);
      const Matrix<T> ks = kv(seg.k_rows, cols);
      const Matrix<T> vs = vv(seg.k_rows, cols);
      Matrix<T> p = (qs * ks.transpose()) * scale;
      for (Eigen::Index r = 0; r < nq; ++r) {
        const Eigen::Index n = attn_visible_count(seg.causal_prefix, r + seg.q_offset, nk);
        auto row = p.row(r);
        row.tail(nk - n).setZero();
        if (n == 0) continue;
        auto vis = row.head(n).array();
        vis = (vis - vis.maxCoeff()).exp();
        vis /= vis.sum();
      }
      out(seg.q_rows, cols) = p * vs;
      probs->push_back(std::move(p));
    }
  }
  const bool ng = q.needs_grad() || k.needs_grad() || v.needs_grad();
  return t->record(std::move(out), ng, [t, q, k, v, heads, segments, probs, scale, dh](int self) {
    const auto& g = t->grad(self);
    std::size_t idx = 0;
    for (const auto& seg : *segments) {
      for (int h = 0; h < heads; ++h) {
        const auto cols = Eigen::seqN(h * dh, dh);
        const Matrix<T>& p = (*probs)[idx++];
        const Matrix<T> go = g(seg.q_rows, cols);
        const Matrix<T> ks = k.value()(seg.k_rows, cols);
        const Matrix<T> vs = v.value()(seg.k_rows, cols);
        if (v.needs_grad()) {
          const Matrix<T> dv = p.transpose() * go;
          auto& gv = t->grad(v.id);
          for (std::size_t j = 0; j < seg.k_rows.size(); ++j) {
            gv.block(seg.k_rows[j], h * dh, 1, dh) += dv.row(static_cast<Eigen::Index>(j));
          }
        }
        if (!q.needs_grad() && !k.needs_grad()) continue;
        const Matrix<T> dp = go * vs.transpose();
        Matrix<T> ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
        ds *= scale;
        if (q.needs_grad()) {
          const Matrix<T> dq = ds * ks;
          auto& gq = t->grad(q.id);
          for (std::size_t r = 0; r < seg.q_rows.size(); ++r) {
            gq.block(seg.q_rows[r], h * dh, 1, dh) += dq.row(static_cast<Eigen::Index>(r));
          }
        }
        if (k.needs_grad()) {
          const Matrix<T> qs = q.value()(seg.q_rows, cols);
          const Matrix<T> dk = ds.transpose() * qs;
          auto& gk = t->grad(k.id);
          for (std::size_t j = 0; j < seg.k_rows.size(); ++j) {
            gk.block(seg.k_rows[j], h * dh, 1, dh) += dk.row(static_cast<Eigen::Index>(j));
          }
        }
      }
    }
  });
}

struct ItcStats {
  int rows_fully_masked = 0;  // image or text rows whose denominator kept only the positive
  int masked_pairs = 0;
};

/// Symmetric InfoNCE over a square logit matrix whose diagonal holds the
/// positives. mask[i][j] removes pair (i, j) from both the image->text
/// softmax of row i and the text->image softmax of column j.
template <typename T>
Var<T> masked_infonce(Var<T> logits, const std::vector<std::vector<bool>>& mask, ItcStats* stats = nullptr) {
  Tape<T>* t = logits.tape;
  const auto& l = logits.value();
  const Eigen::Index n = l.rows();
  if (l.cols() != n) throw numeric_error("ShapeMismatch", "contrastive logits must be square");
  auto keep = [&](Eigen::Index i, Eigen::Index j) {
    return i == j || !mask[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  };
  Matrix<T> p_row = Matrix<T>::Zero(n, n);
  Matrix<T> p_col = Matrix<T>::Zero(n, n);
  T total = 0;
  ItcStats st;
  for (Eigen::Index i = 0; i < n; ++i) {
    T mr = -std::numeric_limits<T>::infinity(), mc = mr;
    int kept_r = 0, kept_c = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (keep(i, j)) { mr = std::max(mr, l(i, j)); ++kept_r; }
      if (keep(j, i)) { mc = std::max(mc, l(j, i)); ++kept_c; }
      if (i != j && !keep(i, j)) ++st.masked_pairs;
    }
    T zr = 0, zc = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (keep(i, j)) { p_row(i, j) = std::exp(l(i, j) - mr); zr += p_row(i, j); }
      if (keep(j, i)) { p_col(j, i) = std::exp(l(j, i) - mc); zc += p_col(j, i); }
    }
    p_row.row(i) /= zr;
    p_col.col(i) /= zc;
    total += -(l(i, i) - mr - std::log(zr)) - (l(i, i) - mc - std::log(zc));
    st.rows_fully_masked += (kept_r == 1) + (kept_c == 1);
  }
  if (stats) *stats = st;
  Matrix<T> out(1, 1);
  out(0, 0) = total / (T(2) * static_cast<T>(n));
  return t->record(std::move(out), logits.needs_grad(), [t, logits, p_row, p_col, n](int self) {
    const T g = t->grad(self)(0, 0) / (T(2) * static_cast<T>(n));
    Matrix<T> d = (p_row + p_col) * g;
    d.diagonal().array() -= T(2) * g;
    t->grad(logits.id) += d;
  });
}

}  // namespace ag
}  // namespace slidealign
