#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tsft/tensor.hpp"

namespace tsft {

template <typename S>
class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, Index id) : tape_(tape), id_(id) {}

  const Mat<S>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index id() const { return id_; }
  Tape<S>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<S>* tape_ = nullptr;
  Index id_ = -1;
};

// Linear record of a computation. Ops append nodes in evaluation order; the
// backward sweep walks them in reverse and routes gradients into trainable
// Parameters. Frozen parameters and constants do not require grad, so
// subgraphs that depend only on them are never differentiated.
template <typename S>
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  bool check_finite = true;

  Var<S> constant(Mat<S> v) {
    return push("constant", std::move(v), false, nullptr);
  }

  // Each parameter gets one leaf per tape, so repeated use accumulates into a
  // single gradient buffer in reverse evaluation order.
  Var<S> param(Parameter<S>& p) {
    auto it = leaf_of_.find(&p);
    if (it != leaf_of_.end()) return Var<S>(this, it->second);
    Node n;
    n.ref = &p.value;
    n.requires_grad = p.trainable;
    n.param = &p;
    nodes_.push_back(std::move(n));
    const Index id = static_cast<Index>(nodes_.size()) - 1;
    leaf_of_.emplace(&p, id);
    return Var<S>(this, id);
  }

  Var<S> push(const char* op, Mat<S> value, bool requires_grad, Backward bw) {
    if (consumed_) throw std::logic_error("tape: cannot record after backward");
    if (check_finite && !value.allFinite())
      throw NonFiniteError(std::string("non-finite value produced by ") + op);
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var<S>(this, static_cast<Index>(nodes_.size()) - 1);
  }

  const Mat<S>& value(Index id) const {
    const Node& n = nodes_.at(id);
    return n.ref ? *n.ref : n.value;
  }
  bool requires_grad(Index id) const { return nodes_.at(id).requires_grad; }

  // Gradient buffer of a node, zero-initialised on first access.
  Mat<S>& grad(Index id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      const Mat<S>& v = value(id);
      n.grad.setZero(v.rows(), v.cols());
    }
    return n.grad;
  }
  bool has_grad(Index id) const { return nodes_[id].grad.size() != 0; }

  std::size_t size() const { return nodes_.size(); }

  void backward(const Var<S>& loss) {
    if (!loss.valid() || loss.tape() != this || loss.id() >= static_cast<Index>(nodes_.size()))
      throw std::logic_error("backward: loss was not produced by a forward pass on this tape");
    if (consumed_) throw std::logic_error("backward: tape already consumed");
    const Mat<S>& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1)
      throw ShapeError("backward: loss must be scalar, got " + std::to_string(lv.rows()) + "x" +
                       std::to_string(lv.cols()));
    consumed_ = true;
    if (!requires_grad(loss.id())) return;
    grad(loss.id())(0, 0) = S(1);
    for (Index id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this);
    }
    for (Node& n : nodes_) {
      if (!n.param || !n.requires_grad) continue;
      Parameter<S>& p = *n.param;
      if (!p.has_grad()) p.grad.setZero(p.value.rows(), p.value.cols());
      if (n.grad.size() != 0) p.grad += n.grad;
    }
  }

 private:
  struct Node {
    Mat<S> value;
    const Mat<S>* ref = nullptr;
    Mat<S> grad;
    bool requires_grad = false;
    Parameter<S>* param = nullptr;
    Backward backward;
  };

  std::deque<Node> nodes_;  // stable addresses: values stay valid while the tape grows
  std::unordered_map<const Parameter<S>*, Index> leaf_of_;
  bool consumed_ = false;
};

namespace detail {

template <typename S>
void require_same_tape(const Var<S>& a, const Var<S>& b) {
  if (a.tape() != b.tape()) throw std::logic_error("ops: operands live on different tapes");
}

template <typename S>
void require_shape(bool ok, const char* op, const Var<S>& a, const Var<S>& b) {
  if (!ok)
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

inline Index count_true(const Mask& m) {
  return static_cast<Index>(std::count(m.begin(), m.end(), true));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.cols() == b.rows(), "matmul", a, b);
  Tape<S>& t = *a.tape();
  const Index ia = a.id(), ib = b.id();
  Mat<S> out = a.value() * b.value();
  const bool rg = a.requires_grad() || b.requires_grad();
  Index self = static_cast<Index>(t.size());
  return t.push("matmul", std::move(out), rg, [ia, ib, self](Tape<S>& t) {
    const Mat<S>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

// x * W + b with b broadcast over rows.
template <typename S>
Var<S> affine(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  detail::require_same_tape(x, w);
  detail::require_shape(x.cols() == w.rows(), "affine", x, w);
  detail::require_shape(b.rows() == 1 && b.cols() == w.cols(), "affine(bias)", w, b);
  Tape<S>& t = *x.tape();
  const Index ix = x.id(), iw = w.id(), ib = b.id();
  Mat<S> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  Index self = static_cast<Index>(t.size());
  return t.push("affine", std::move(out), rg, [ix, iw, ib, self](Tape<S>& t) {
    const Mat<S>& g = t.grad(self);
    if (t.requires_grad(ix)) t.grad(ix).noalias() += g * t.value(iw).transpose();
    if (t.requires_grad(iw)) t.grad(iw).noalias() += t.value(ix).transpose() * g;
    if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
  });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
  Tape<S>& t = *a.tape();
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("transpose", a.value().transpose(), a.requires_grad(), [ia, self](Tape<S>& t) {
    t.grad(ia) += t.grad(self).transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
  Tape<S>& t = *a.tape();
  const Index ia = a.id(), ib = b.id();
  Index self = static_cast<Index>(t.size());
  return t.push("add", a.value() + b.value(), a.requires_grad() || b.requires_grad(),
                [ia, ib, self](Tape<S>& t) {
                  const Mat<S>& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia) += g;
                  if (t.requires_grad(ib)) t.grad(ib) += g;
                });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a, b);
  Tape<S>& t = *a.tape();
  const Index ia = a.id(), ib = b.id();
  Index self = static_cast<Index>(t.size());
  return t.push("sub", a.value() - b.value(), a.requires_grad() || b.requires_grad(),
                [ia, ib, self](Tape<S>& t) {
                  const Mat<S>& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia) += g;
                  if (t.requires_grad(ib)) t.grad(ib) -= g;
                });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_tape(a, b);
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a, b);
  Tape<S>& t = *a.tape();
  const Index ia = a.id(), ib = b.id();
  Index self = static_cast<Index>(t.size());
  return t.push("mul", a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                [ia, ib, self](Tape<S>& t) {
                  const Mat<S>& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
                  if (t.requires_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
                });
}

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
  Tape<S>& t = *a.tape();
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("scale", a.value() * s, a.requires_grad(),
                [ia, s, self](Tape<S>& t) { t.grad(ia) += t.grad(self) * s; });
}

// Adds a 1 x n row to every row of a.
template <typename S>
Var<S> add_row(const Var<S>& a, const Var<S>& row) {
  detail::require_same_tape(a, row);
  detail::require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row", a, row);
  Tape<S>& t = *a.tape();
  const Index ia = a.id(), ir = row.id();
  Mat<S> out = a.value();
  out.rowwise() += row.value().row(0);
  Index self = static_cast<Index>(t.size());
  return t.push("add_row", std::move(out), a.requires_grad() || row.requires_grad(),
                [ia, ir, self](Tape<S>& t) {
                  const Mat<S>& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia) += g;
                  if (t.requires_grad(ir)) t.grad(ir) += g.colwise().sum();
                });
}

// Adds an m x 1 column to every column of a.
template <typename S>
Var<S> add_col(const Var<S>& a, const Var<S>& col) {
  detail::require_same_tape(a, col);
  detail::require_shape(col.cols() == 1 && col.rows() == a.rows(), "add_col", a, col);
  Tape<S>& t = *a.tape();
  const Index ia = a.id(), ic = col.id();
  Mat<S> out = a.value();
  out.colwise() += col.value().col(0);
  Index self = static_cast<Index>(t.size());
  return t.push("add_col", std::move(out), a.requires_grad() || col.requires_grad(),
                [ia, ic, self](Tape<S>& t) {
                  const Mat<S>& g = t.grad(self);
                  if (t.requires_grad(ia)) t.grad(ia) += g;
                  if (t.requires_grad(ic)) t.grad(ic) += g.rowwise().sum();
                });
}

// out[i, :] = a[i, :] * scales[i] + shifts[i], with constant scales/shifts.
template <typename S>
Var<S> row_affine(const Var<S>& a, const std::vector<S>& scales, const std::vector<S>& shifts) {
  if (static_cast<Index>(scales.size()) != a.rows() || static_cast<Index>(shifts.size()) != a.rows())
    throw ShapeError("row_affine: need one scale/shift per row");
  Tape<S>& t = *a.tape();
  Mat<S> out = a.value();
  for (Index i = 0; i < out.rows(); ++i) out.row(i) = out.row(i) * scales[i] + RowVec<S>::Constant(out.cols(), shifts[i]);
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("row_affine", std::move(out), a.requires_grad(), [ia, scales, self](Tape<S>& t) {
    const Mat<S>& g = t.grad(self);
    Mat<S>& ga = t.grad(ia);
    for (Index i = 0; i < g.rows(); ++i) ga.row(i) += g.row(i) * scales[i];
  });
}

namespace detail {

template <typename S, typename Fwd, typename Deriv>
Var<S> unary(const char* name, const Var<S>& a, Fwd f, Deriv df) {
  Tape<S>& t = *a.tape();
  const Index ia = a.id();
  Mat<S> out = a.value().unaryExpr(f);
  Index self = static_cast<Index>(t.size());
  return t.push(name, std::move(out), a.requires_grad(), [ia, self, df](Tape<S>& t) {
    const Mat<S>& x = t.value(ia);
    const Mat<S>& y = t.value(self);
    const Mat<S>& g = t.grad(self);
    Mat<S>& gx = t.grad(ia);
    for (Index i = 0; i < x.size(); ++i) gx.data()[i] += g.data()[i] * df(x.data()[i], y.data()[i]);
  });
}

}  // namespace detail

template <typename S>
Var<S> tanh(const Var<S>& a) {
  return detail::unary<S>("tanh", a, [](S x) { return std::tanh(x); },
                          [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  return detail::unary<S>(
      "sigmoid", a,
      [](S x) { return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x)); },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  return detail::unary<S>("relu", a, [](S x) { return x > 0 ? x : S(0); },
                          [](S x, S) { return x > 0 ? S(1) : S(0); });
}

// tanh approximation of GELU; smooth everywhere, which keeps finite-difference
// checks meaningful.
template <typename S>
Var<S> gelu(const Var<S>& a) {
  constexpr S c = S(0.7978845608028654);  // sqrt(2 / pi)
  constexpr S k = S(0.044715);
  return detail::unary<S>(
      "gelu", a,
      [](S x) { return S(0.5) * x * (S(1) + std::tanh(c * (x + k * x * x * x))); },
      [](S x, S) {
        const S u = c * (x + k * x * x * x);
        const S th = std::tanh(u);
        const S du = c * (S(1) + S(3) * k * x * x);
        return S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th * th) * du;
      });
}

// Inverted dropout with a mask drawn from rng; identity when p == 0.
template <typename S>
Var<S> dropout(const Var<S>& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Mat<S> m(a.rows(), a.cols());
  const S s = S(1.0 / (1.0 - p));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? s : S(0);
  Tape<S>& t = *a.tape();
  return mul(a, t.constant(std::move(m)));
}

// ---------------------------------------------------------------------------
// Normalisation and attention

// Row-wise softmax over columns whose key_mask entry is true; masked columns
// get probability exactly zero. An empty mask means every column is live.
template <typename S>
Mat<S> masked_softmax_rows(const Mat<S>& x, const Mask& key_mask) {
  Mat<S> out = Mat<S>::Zero(x.rows(), x.cols());
  const bool all = key_mask.empty();
  for (Index i = 0; i < x.rows(); ++i) {
    S mx = -std::numeric_limits<S>::infinity();
    for (Index j = 0; j < x.cols(); ++j)
      if (all || key_mask[j]) mx = std::max(mx, x(i, j));
    if (!std::isfinite(mx)) continue;
    S z = 0;
    for (Index j = 0; j < x.cols(); ++j)
      if (all || key_mask[j]) z += (out(i, j) = std::exp(x(i, j) - mx));
    out.row(i) /= z;
  }
  return out;
}

template <typename S>
Var<S> softmax_rows(const Var<S>& a, const Mask& key_mask = {}) {
  if (!key_mask.empty() && static_cast<Index>(key_mask.size()) != a.cols())
    throw ShapeError("softmax_rows: mask length must equal column count");
  Tape<S>& t = *a.tape();
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("softmax", masked_softmax_rows(a.value(), key_mask), a.requires_grad(),
                [ia, self](Tape<S>& t) {
                  const Mat<S>& y = t.value(self);
                  const Mat<S>& g = t.grad(self);
                  Mat<S> gy = g.cwiseProduct(y);
                  Eigen::Matrix<S, Eigen::Dynamic, 1> dot = gy.rowwise().sum();
                  t.grad(ia) += gy - (y.array().colwise() * dot.array()).matrix();
                });
}

// Per-row layer normalisation with affine gamma/beta (each 1 x n).
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5)) {
  detail::require_shape(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm(gamma)", x, gamma);
  detail::require_shape(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm(beta)", x, beta);
  Tape<S>& t = *x.tape();
  const Mat<S>& xv = x.value();
  const Index n = xv.cols();
  Mat<S> xhat(xv.rows(), n);
  std::vector<S> inv_std(xv.rows());
  for (Index i = 0; i < xv.rows(); ++i) {
    S mean = 0;
    for (Index j = 0; j < n; ++j) mean += xv(i, j);
    mean /= S(n);
    S var = 0;
    for (Index j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= S(n);
    inv_std[i] = S(1) / std::sqrt(var + eps);
    for (Index j = 0; j < n; ++j) xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
  }
  Mat<S> out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  const Index ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Index self = static_cast<Index>(t.size());
  return t.push("layer_norm", std::move(out), rg,
                [ix, ig, ib, self, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<S>& t) {
                  const Mat<S>& g = t.grad(self);
                  if (t.requires_grad(ig)) t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
                  if (!t.requires_grad(ix)) return;
                  const RowVec<S> gam = t.value(ig).row(0);
                  Mat<S>& gx = t.grad(ix);
                  const S n = S(g.cols());
                  for (Index i = 0; i < g.rows(); ++i) {
                    const RowVec<S> dxhat = g.row(i).cwiseProduct(gam);
                    const S m1 = dxhat.sum() / n;
                    const S m2 = dxhat.cwiseProduct(xhat.row(i)).sum() / n;
                    gx.row(i) += inv_std[i] * (dxhat - RowVec<S>::Constant(g.cols(), m1) - xhat.row(i) * m2);
                  }
                });
}

namespace detail {

// Row counts of consecutive self-attention segments; empty means one segment.
inline std::vector<Index> resolve_segments(const std::vector<Index>& segments, Index rows) {
  if (segments.empty()) return {rows};
  Index total = 0;
  for (Index s : segments) {
    if (s < 0) throw ShapeError("segments: negative length");
    total += s;
  }
  if (total != rows) throw ShapeError("segments: lengths sum to " + std::to_string(total) + ", expected " + std::to_string(rows));
  return segments;
}

}  // namespace detail

// Multi-head scaled dot-product self-attention over consecutive row segments:
// rows attend only to keys inside their own segment (one segment by default).
// q, k, v are N x D; heads split D into contiguous blocks. Keys with key_mask
// false receive zero weight. Returns the concatenated per-head outputs.
template <typename S>
Var<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Mask& key_mask, int n_heads,
                 const std::vector<Index>& segments = {}) {
  detail::require_shape(q.cols() == k.cols() && k.cols() == v.cols() && k.rows() == v.rows() && q.rows() == k.rows(),
                        "attention", q, k);
  if (n_heads < 1 || q.cols() % n_heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (!key_mask.empty() && static_cast<Index>(key_mask.size()) != k.rows())
    throw ShapeError("attention: key mask length must equal key count");
  const std::vector<Index> segs = detail::resolve_segments(segments, q.rows());
  Tape<S>& t = *q.tape();
  const Index dk = q.cols() / n_heads;
  const S sc = S(1) / std::sqrt(S(dk));
  const Mat<S>& Q = q.value();
  const Mat<S>& K = k.value();
  const Mat<S>& V = v.value();
  Mat<S> out(Q.rows(), Q.cols());
  std::vector<Mat<S>> probs;  // per (segment, head)
  Index r0 = 0;
  for (Index len : segs) {
    Mask sub;
    if (!key_mask.empty()) sub.assign(key_mask.begin() + r0, key_mask.begin() + r0 + len);
    for (int h = 0; h < n_heads; ++h) {
      Mat<S> s = (Q.block(r0, h * dk, len, dk) * K.block(r0, h * dk, len, dk).transpose()) * sc;
      probs.push_back(masked_softmax_rows(s, sub));
      out.block(r0, h * dk, len, dk).noalias() = probs.back() * V.block(r0, h * dk, len, dk);
    }
    r0 += len;
  }
  const Index iq = q.id(), ik = k.id(), iv = v.id();
  const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
  Index self = static_cast<Index>(t.size());
  return t.push("attention", std::move(out), rg,
                [iq, ik, iv, self, dk, sc, n_heads, segs, probs = std::move(probs)](Tape<S>& t) {
                  const Mat<S>& g = t.grad(self);
                  const Mat<S>& Q = t.value(iq);
                  const Mat<S>& K = t.value(ik);
                  const Mat<S>& V = t.value(iv);
                  const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
                  std::size_t pi = 0;
                  Index r0 = 0;
                  for (Index len : segs) {
                    for (int h = 0; h < n_heads; ++h, ++pi) {
                      const Mat<S>& A = probs[pi];
                      const auto gh = g.block(r0, h * dk, len, dk);
                      if (gv) t.grad(iv).block(r0, h * dk, len, dk).noalias() += A.transpose() * gh;
                      if (!gq && !gk) continue;
                      Mat<S> dA = gh * V.block(r0, h * dk, len, dk).transpose();
                      Eigen::Matrix<S, Eigen::Dynamic, 1> dot = dA.cwiseProduct(A).rowwise().sum();
                      Mat<S> dS = A.cwiseProduct(dA.colwise() - dot) * sc;
                      if (gq) t.grad(iq).block(r0, h * dk, len, dk).noalias() += dS * K.block(r0, h * dk, len, dk);
                      if (gk) t.grad(ik).block(r0, h * dk, len, dk).noalias() += dS.transpose() * Q.block(r0, h * dk, len, dk);
                    }
                    r0 += len;
                  }
                });
}

// ---------------------------------------------------------------------------
// Structural

template <typename S>
Var<S> slice_rows(const Var<S>& a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) throw ShapeError("slice_rows: out of range");
  Tape<S>& t = *a.tape();
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("slice_rows", a.value().middleRows(start, n), a.requires_grad(),
                [ia, start, n, self](Tape<S>& t) { t.grad(ia).middleRows(start, n) += t.grad(self); });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw ShapeError("slice_cols: out of range");
  Tape<S>& t = *a.tape();
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("slice_cols", a.value().middleCols(start, n), a.requires_grad(),
                [ia, start, n, self](Tape<S>& t) { t.grad(ia).middleCols(start, n) += t.grad(self); });
}

template <typename S>
Var<S> vstack(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("vstack: no inputs");
  Tape<S>& t = *parts.front().tape();
  const Index cols = parts.front().cols();
  Index rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack: column count mismatch");
    detail::require_same_tape(parts.front(), p);
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Mat<S> out(rows, cols);
  std::vector<std::pair<Index, Index>> spans;  // (node id, first row)
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id(), r);
    r += p.rows();
  }
  Index self = static_cast<Index>(t.size());
  return t.push("vstack", std::move(out), rg, [spans = std::move(spans), self](Tape<S>& t) {
    const Mat<S>& g = t.grad(self);
    for (auto [id, r0] : spans)
      if (t.requires_grad(id)) {
        Mat<S>& gi = t.grad(id);
        gi += g.middleRows(r0, gi.rows());
      }
  });
}

// Builds a matrix whose i-th row is row rows[i].second of rows[i].first.
template <typename S>
Var<S> gather_rows(const std::vector<std::pair<Var<S>, Index>>& rows) {
  if (rows.empty()) throw ShapeError("gather_rows: no inputs");
  Tape<S>& t = *rows.front().first.tape();
  const Index cols = rows.front().first.cols();
  Mat<S> out(static_cast<Index>(rows.size()), cols);
  std::vector<std::pair<Index, Index>> src;
  bool rg = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [v, r] = rows[i];
    if (v.cols() != cols) throw ShapeError("gather_rows: column count mismatch");
    if (r < 0 || r >= v.rows()) throw ShapeError("gather_rows: row out of range");
    out.row(static_cast<Index>(i)) = v.value().row(r);
    src.emplace_back(v.id(), r);
    rg = rg || v.requires_grad();
  }
  Index self = static_cast<Index>(t.size());
  return t.push("gather_rows", std::move(out), rg, [src = std::move(src), self](Tape<S>& t) {
    const Mat<S>& g = t.grad(self);
    for (std::size_t i = 0; i < src.size(); ++i)
      if (t.requires_grad(src[i].first)) t.grad(src[i].first).row(src[i].second) += g.row(static_cast<Index>(i));
  });
}

// Row-major reshape.
template <typename S>
Var<S> reshape(const Var<S>& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw ShapeError("reshape: element count mismatch");
  Tape<S>& t = *a.tape();
  Mat<S> out = Eigen::Map<const Mat<S>>(a.value().data(), rows, cols);
  const Index ia = a.id();
  const Index r0 = a.rows(), c0 = a.cols();
  Index self = static_cast<Index>(t.size());
  return t.push("reshape", std::move(out), a.requires_grad(), [ia, r0, c0, self](Tape<S>& t) {
    t.grad(ia) += Eigen::Map<const Mat<S>>(t.grad(self).data(), r0, c0);
  });
}

// Zeroes rows whose mask entry is false.
template <typename S>
Var<S> mask_rows(const Var<S>& a, const Mask& mask) {
  if (static_cast<Index>(mask.size()) != a.rows()) throw ShapeError("mask_rows: mask length mismatch");
  Tape<S>& t = *a.tape();
  Mat<S> out = a.value();
  for (Index i = 0; i < out.rows(); ++i)
    if (!mask[i]) out.row(i).setZero();
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("mask_rows", std::move(out), a.requires_grad(), [ia, mask, self](Tape<S>& t) {
    const Mat<S>& g = t.grad(self);
    Mat<S>& ga = t.grad(ia);
    for (Index i = 0; i < g.rows(); ++i)
      if (mask[i]) ga.row(i) += g.row(i);
  });
}

// ---------------------------------------------------------------------------
// Reductions. All sum in ascending index order.

// Mean over rows with mask true (all rows if mask empty) -> 1 x n.
template <typename S>
Var<S> mean_rows(const Var<S>& a, const Mask& mask = {}) {
  if (!mask.empty() && static_cast<Index>(mask.size()) != a.rows())
    throw ShapeError("mean_rows: mask length mismatch");
  const Index live = mask.empty() ? a.rows() : detail::count_true(mask);
  if (live == 0) throw ShapeError("mean_rows: no live rows");
  Tape<S>& t = *a.tape();
  const Mat<S>& av = a.value();
  Mat<S> out = Mat<S>::Zero(1, av.cols());
  for (Index i = 0; i < av.rows(); ++i)
    if (mask.empty() || mask[i]) out.row(0) += av.row(i);
  out /= S(live);
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("mean_rows", std::move(out), a.requires_grad(), [ia, mask, live, self](Tape<S>& t) {
    const RowVec<S> g = t.grad(self).row(0) / S(live);
    Mat<S>& ga = t.grad(ia);
    for (Index i = 0; i < ga.rows(); ++i)
      if (mask.empty() || mask[i]) ga.row(i) += g;
  });
}

// Column-wise max over rows with mask true -> 1 x n. Ties go to the first row.
template <typename S>
Var<S> max_rows(const Var<S>& a, const Mask& mask = {}) {
  if (!mask.empty() && static_cast<Index>(mask.size()) != a.rows())
    throw ShapeError("max_rows: mask length mismatch");
  const Mat<S>& av = a.value();
  Mat<S> out(1, av.cols());
  std::vector<Index> arg(av.cols(), -1);
  for (Index j = 0; j < av.cols(); ++j) {
    for (Index i = 0; i < av.rows(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      if (arg[j] < 0 || av(i, j) > out(0, j)) {
        out(0, j) = av(i, j);
        arg[j] = i;
      }
    }
    if (arg[j] < 0) throw ShapeError("max_rows: no live rows");
  }
  Tape<S>& t = *a.tape();
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("max_rows", std::move(out), a.requires_grad(), [ia, arg = std::move(arg), self](Tape<S>& t) {
    const Mat<S>& g = t.grad(self);
    Mat<S>& ga = t.grad(ia);
    for (Index j = 0; j < g.cols(); ++j) ga(arg[j], j) += g(0, j);
  });
}

// Column-wise max within each row segment over rows with mask true ->
// (segments x n). The mask spans all rows.
template <typename S>
Var<S> segment_max_rows(const Var<S>& a, const std::vector<Index>& segments, const Mask& mask = {}) {
  if (!mask.empty() && static_cast<Index>(mask.size()) != a.rows())
    throw ShapeError("segment_max_rows: mask length mismatch");
  const std::vector<Index> segs = detail::resolve_segments(segments, a.rows());
  const Mat<S>& av = a.value();
  const Index n_seg = static_cast<Index>(segs.size());
  Mat<S> out(n_seg, av.cols());
  std::vector<Index> arg(n_seg * av.cols(), -1);
  Index r0 = 0;
  for (Index s = 0; s < n_seg; ++s) {
    for (Index j = 0; j < av.cols(); ++j) {
      Index& best = arg[s * av.cols() + j];
      for (Index i = r0; i < r0 + segs[s]; ++i) {
        if (!mask.empty() && !mask[i]) continue;
        if (best < 0 || av(i, j) > out(s, j)) {
          out(s, j) = av(i, j);
          best = i;
        }
      }
      if (best < 0) throw ShapeError("segment_max_rows: segment has no live rows");
    }
    r0 += segs[s];
  }
  Tape<S>& t = *a.tape();
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("segment_max_rows", std::move(out), a.requires_grad(), [ia, arg = std::move(arg), self](Tape<S>& t) {
    const Mat<S>& g = t.grad(self);
    Mat<S>& ga = t.grad(ia);
    for (Index s = 0; s < g.rows(); ++s)
      for (Index j = 0; j < g.cols(); ++j) ga(arg[s * g.cols() + j], j) += g(s, j);
  });
}

// Elementwise mean of equally shaped matrices.
template <typename S>
Var<S> mean_of(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("mean_of: no inputs");
  Var<S> acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  if (parts.size() == 1) return acc;
  return scale(acc, S(1) / S(parts.size()));
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  Tape<S>& t = *a.tape();
  Mat<S> out(1, 1);
  S s = 0;
  const Mat<S>& av = a.value();
  for (Index i = 0; i < av.size(); ++i) s += av.data()[i];
  out(0, 0) = s;
  const Index ia = a.id();
  Index self = static_cast<Index>(t.size());
  return t.push("sum", std::move(out), a.requires_grad(),
                [ia, self](Tape<S>& t) { t.grad(ia).array() += t.grad(self)(0, 0); });
}

// ---------------------------------------------------------------------------
// Losses

template <typename S>
Var<S> mse_loss(const Var<S>& pred, const Mat<S>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeError("mse_loss: prediction/target shape mismatch");
  Tape<S>& t = *pred.tape();
  const Mat<S> diff = pred.value() - target;
  S s = 0;
  for (Index i = 0; i < diff.size(); ++i) s += diff.data()[i] * diff.data()[i];
  const S n = S(diff.size());
  Mat<S> out(1, 1);
  out(0, 0) = s / n;
  const Index ip = pred.id();
  Index self = static_cast<Index>(t.size());
  return t.push("mse", std::move(out), pred.requires_grad(), [ip, diff, n, self](Tape<S>& t) {
    t.grad(ip) += diff * (S(2) * t.grad(self)(0, 0) / n);
  });
}

// Mean binary cross-entropy over all entries, computed from logits in the
// numerically stable form max(z,0) - z*y + log(1 + exp(-|z|)).
template <typename S>
Var<S> bce_with_logits(const Var<S>& logits, const Mat<S>& target) {
  if (logits.rows() != target.rows() || logits.cols() != target.cols())
    throw ShapeError("bce_with_logits: logit/target shape mismatch");
  for (Index i = 0; i < target.size(); ++i)
    if (!(target.data()[i] >= 0 && target.data()[i] <= 1))
      throw std::invalid_argument("bce_with_logits: targets must lie in [0, 1]");
  Tape<S>& t = *logits.tape();
  const Mat<S>& z = logits.value();
  S s = 0;
  Mat<S> dz(z.rows(), z.cols());
  for (Index i = 0; i < z.size(); ++i) {
    const S zi = z.data()[i], yi = target.data()[i];
    s += std::max(zi, S(0)) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
    const S p = zi >= 0 ? S(1) / (S(1) + std::exp(-zi)) : std::exp(zi) / (S(1) + std::exp(zi));
    dz.data()[i] = p - yi;
  }
  const S n = S(z.size());
  Mat<S> out(1, 1);
  out(0, 0) = s / n;
  const Index il = logits.id();
  Index self = static_cast<Index>(t.size());
  return t.push("bce", std::move(out), logits.requires_grad(), [il, dz = std::move(dz), n, self](Tape<S>& t) {
    t.grad(il) += dz * (t.grad(self)(0, 0) / n);
  });
}

}  // namespace tsft
