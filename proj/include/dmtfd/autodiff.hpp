#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records matrix-valued nodes as the forward pass runs; backward()
// walks the nodes in reverse insertion order (which is already a topological
// order) and accumulates gradients. Gradients are allocated lazily: a node
// that never receives an adjoint contributes nothing and is skipped.
//
// Recurrent and attention building blocks that would be slow as chains of
// scalar ops are provided as fused nodes with hand-written backward passes;
// all of them are covered by central finite-difference checks in the tests.

#include <cassert>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmtfd/tensor.hpp"

namespace dmtfd {

template <class Real>
class Tape;

template <class Real>
struct Var {
  Tape<Real>* tape = nullptr;
  int id = -1;

  const Mat<Real>& val() const;
  int rows() const { return static_cast<int>(val().rows()); }
  int cols() const { return static_cast<int>(val().cols()); }
  // Scalar payload of a 1x1 node.
  Real scalar() const {
    assert(val().size() == 1);
    return val()(0, 0);
  }
};

template <class Real>
class Tape {
 public:
  using M = Mat<Real>;
  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    M value;
    M grad;  // empty until first adjoint lands
    BackwardFn backward;
    const char* op = "";
    bool needs_grad = false;
  };

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> input(M value, const char* op = "input") {
    return {this, add_node(std::move(value), false, op, nullptr)};
  }

  // Leaf that participates in backward. The value is copied; gradients are
  // read back with grad_of().
  Var<Real> param(const M& value, const char* op = "param") {
    return {this, add_node(value, true, op, nullptr)};
  }

  int add_node(M value, bool needs_grad, const char* op, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(fn);
    n.op = op;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const M& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // Adjoint accumulator, zero-initialized on first touch.
  M& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      n.grad.setZero(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

  // Gradient of a node after backward(); zeros if it never received one.
  M grad_of(Var<Real> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return M::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var<Real> loss) {
    assert(loss.tape == this);
    assert(nodes_[loss.id].value.size() == 1);
    grad(loss.id).setConstant(Real(1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  // First node (in forward order) holding a non-finite value, for
  // diagnostics when a loss blows up.
  std::optional<std::pair<int, std::string>> first_nonfinite() const {
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
      if (!nodes_[i].value.allFinite()) {
        return std::make_pair(i, std::string(nodes_[i].op));
      }
    }
    return std::nullopt;
  }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  std::vector<Node> nodes_;
};

template <class Real>
const Mat<Real>& Var<Real>::val() const {
  return tape->value(id);
}

namespace detail {
template <class Real>
bool either_needs(const Tape<Real>& t, int a, int b) {
  return t.needs_grad(a) || t.needs_grad(b);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id) * t.value(b.id);
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, b.id), "matmul",
                      [ai = a.id, bi = b.id](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        if (tp.needs_grad(ai))
                          tp.grad(ai).noalias() += g * tp.value(bi).transpose();
                        if (tp.needs_grad(bi))
                          tp.grad(bi).noalias() += tp.value(ai).transpose() * g;
                      });
  return {&t, id};
}

// a * b^T
template <class Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id) * t.value(b.id).transpose();
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, b.id), "matmul_nt",
                      [ai = a.id, bi = b.id](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        if (tp.needs_grad(ai)) tp.grad(ai).noalias() += g * tp.value(bi);
                        if (tp.needs_grad(bi))
                          tp.grad(bi).noalias() += g.transpose() * tp.value(ai);
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id) + t.value(b.id);
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, b.id), "add",
                      [ai = a.id, bi = b.id](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        if (tp.needs_grad(ai)) tp.grad(ai) += g;
                        if (tp.needs_grad(bi)) tp.grad(bi) += g;
                      });
  return {&t, id};
}

// Broadcasts a 1 x n row onto every row of a.
template <class Real>
Var<Real> add_rowvec(Var<Real> a, Var<Real> row) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).rowwise() + t.value(row.id).row(0);
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, row.id), "add_rowvec",
                      [ai = a.id, bi = row.id](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        if (tp.needs_grad(ai)) tp.grad(ai) += g;
                        if (tp.needs_grad(bi)) tp.grad(bi) += g.colwise().sum();
                      });
  return {&t, id};
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id) - t.value(b.id);
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, b.id), "sub",
                      [ai = a.id, bi = b.id](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        if (tp.needs_grad(ai)) tp.grad(ai) += g;
                        if (tp.needs_grad(bi)) tp.grad(bi) -= g;
                      });
  return {&t, id};
}

template <class Real>
Var<Real> hadamard(Var<Real> a, Var<Real> b) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).cwiseProduct(t.value(b.id));
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, b.id), "hadamard",
                      [ai = a.id, bi = b.id](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        if (tp.needs_grad(ai)) tp.grad(ai) += g.cwiseProduct(tp.value(bi));
                        if (tp.needs_grad(bi)) tp.grad(bi) += g.cwiseProduct(tp.value(ai));
                      });
  return {&t, id};
}

template <class Real>
Var<Real> cwise_div(Var<Real> a, Var<Real> b) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).cwiseQuotient(t.value(b.id));
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, b.id), "cwise_div",
                      [ai = a.id, bi = b.id](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        const auto& bv = tp.value(bi);
                        if (tp.needs_grad(ai)) tp.grad(ai) += g.cwiseQuotient(bv);
                        if (tp.needs_grad(bi))
                          tp.grad(bi) -= g.cwiseProduct(tp.value(self))
                                             .cwiseQuotient(bv);
                      });
  return {&t, id};
}

template <class Real>
Var<Real> scale(Var<Real> a, Real c) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id) * c;
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "scale",
                      [ai = a.id, c](Tape<Real>& tp, int self) {
                        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(self) * c;
                      });
  return {&t, id};
}

template <class Real>
Var<Real> add_scalar(Var<Real> a, Real c) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).array() + c;
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "add_scalar",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(self);
                      });
  return {&t, id};
}

// Elementwise product with a constant matrix (mask or weight table).
template <class Real>
Var<Real> mul_mask(Var<Real> a, const Mat<Real>& mask) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).cwiseProduct(mask);
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "mul_mask",
                      [ai = a.id, mask](Tape<Real>& tp, int self) {
                        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(self).cwiseProduct(mask);
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> sigmoid(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).array().logistic();
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "sigmoid",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        const auto& s = tp.value(self).array();
                        tp.grad(ai).array() += tp.grad(self).array() * s * (Real(1) - s);
                      });
  return {&t, id};
}

template <class Real>
Var<Real> tanh(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).array().tanh();
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "tanh",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        const auto& y = tp.value(self).array();
                        tp.grad(ai).array() += tp.grad(self).array() * (Real(1) - y * y);
                      });
  return {&t, id};
}

template <class Real>
Var<Real> exp(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).array().exp();
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "exp",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).array() += tp.grad(self).array() * tp.value(self).array();
                      });
  return {&t, id};
}

template <class Real>
Var<Real> log(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).array().log();
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "log",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).array() += tp.grad(self).array() / tp.value(ai).array();
                      });
  return {&t, id};
}

template <class Real>
Var<Real> sqrt(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).array().sqrt();
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "sqrt",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).array() +=
                            tp.grad(self).array() / (Real(2) * tp.value(self).array());
                      });
  return {&t, id};
}

template <class Real>
Var<Real> pow_const(Var<Real> a, Real p) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).array().pow(p);
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "pow_const",
                      [ai = a.id, p](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).array() +=
                            tp.grad(self).array() * p * tp.value(ai).array().pow(p - Real(1));
                      });
  return {&t, id};
}

// Clamp with pass-through gradient strictly inside [lo, hi].
template <class Real>
Var<Real> clamp(Var<Real> a, Real lo, Real hi) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).array().max(lo).min(hi);
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "clamp",
                      [ai = a.id, lo, hi](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        const auto& x = tp.value(ai).array();
                        auto inside = (x > lo && x < hi).template cast<Real>();
                        tp.grad(ai).array() += tp.grad(self).array() * inside;
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> sum(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v(1, 1);
  v(0, 0) = t.value(a.id).sum();
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "sum",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).array() += tp.grad(self)(0, 0);
                      });
  return {&t, id};
}

template <class Real>
Var<Real> mean(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  const Real inv = Real(1) / static_cast<Real>(t.value(a.id).size());
  Mat<Real> v(1, 1);
  v(0, 0) = t.value(a.id).sum() * inv;
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "mean",
                      [ai = a.id, inv](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).array() += tp.grad(self)(0, 0) * inv;
                      });
  return {&t, id};
}

template <class Real>
Var<Real> rowwise_sum(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).rowwise().sum();
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "rowwise_sum",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).colwise() += tp.grad(self).col(0);
                      });
  return {&t, id};
}

template <class Real>
Var<Real> colwise_sum(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).colwise().sum();
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "colwise_sum",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).rowwise() += tp.grad(self).row(0);
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// structure ops
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> concat_cols(Var<Real> a, Var<Real> b) {
  Tape<Real>& t = *a.tape;
  const auto& av = t.value(a.id);
  const auto& bv = t.value(b.id);
  Mat<Real> v(av.rows(), av.cols() + bv.cols());
  v.leftCols(av.cols()) = av;
  v.rightCols(bv.cols()) = bv;
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, b.id), "concat_cols",
                      [ai = a.id, bi = b.id](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        const auto ac = tp.value(ai).cols();
                        const auto bc = tp.value(bi).cols();
                        if (tp.needs_grad(ai)) tp.grad(ai) += g.leftCols(ac);
                        if (tp.needs_grad(bi)) tp.grad(bi) += g.rightCols(bc);
                      });
  return {&t, id};
}

template <class Real>
Var<Real> slice_cols(Var<Real> a, int c0, int n) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).middleCols(c0, n);
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "slice_cols",
                      [ai = a.id, c0, n](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).middleCols(c0, n) += tp.grad(self);
                      });
  return {&t, id};
}

template <class Real>
Var<Real> concat_rows(Var<Real> a, Var<Real> b) {
  Tape<Real>& t = *a.tape;
  const auto& av = t.value(a.id);
  const auto& bv = t.value(b.id);
  Mat<Real> v(av.rows() + bv.rows(), av.cols());
  v.topRows(av.rows()) = av;
  v.bottomRows(bv.rows()) = bv;
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, b.id), "concat_rows",
                      [ai = a.id, bi = b.id](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        const auto ar = tp.value(ai).rows();
                        const auto br = tp.value(bi).rows();
                        if (tp.needs_grad(ai)) tp.grad(ai) += g.topRows(ar);
                        if (tp.needs_grad(bi)) tp.grad(bi) += g.bottomRows(br);
                      });
  return {&t, id};
}

template <class Real>
Var<Real> slice_rows(Var<Real> a, int r0, int n) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id).middleRows(r0, n);
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "slice_rows",
                      [ai = a.id, r0, n](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        tp.grad(ai).middleRows(r0, n) += tp.grad(self);
                      });
  return {&t, id};
}

template <class Real>
Var<Real> stop_gradient(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id);
  return {&t, t.add_node(std::move(v), false, "stop_gradient", nullptr)};
}

// ---------------------------------------------------------------------------
// row-wise softmax
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> softmax_rows(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  Mat<Real> v = t.value(a.id);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const Real mx = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - mx).exp();
    v.row(r) /= v.row(r).sum();
  }
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "softmax_rows",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        const auto& y = tp.value(self);
                        const auto& g = tp.grad(self);
                        auto& ga = tp.grad(ai);
                        for (Eigen::Index r = 0; r < y.rows(); ++r) {
                          const Real dot = g.row(r).cwiseProduct(y.row(r)).sum();
                          ga.row(r).array() +=
                              y.row(r).array() * (g.row(r).array() - dot);
                        }
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// block-diagonal batched products (rows grouped in blocks of k)
// ---------------------------------------------------------------------------

// For each block w of k rows: S_w = A_w * B_w^T. A, B are (n*k) x h,
// the result is (n*k) x k.
template <class Real>
Var<Real> batched_nt(Var<Real> a, Var<Real> b, int k) {
  Tape<Real>& t = *a.tape;
  const auto& av = t.value(a.id);
  const auto& bv = t.value(b.id);
  assert(av.rows() % k == 0);
  Mat<Real> v(av.rows(), k);
  for (Eigen::Index r = 0; r < av.rows(); r += k) {
    v.middleRows(r, k).noalias() =
        av.middleRows(r, k) * bv.middleRows(r, k).transpose();
  }
  int id = t.add_node(std::move(v), detail::either_needs(t, a.id, b.id), "batched_nt",
                      [ai = a.id, bi = b.id, k](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        const auto& av2 = tp.value(ai);
                        const auto& bv2 = tp.value(bi);
                        for (Eigen::Index r = 0; r < av2.rows(); r += k) {
                          if (tp.needs_grad(ai))
                            tp.grad(ai).middleRows(r, k).noalias() +=
                                g.middleRows(r, k) * bv2.middleRows(r, k);
                          if (tp.needs_grad(bi))
                            tp.grad(bi).middleRows(r, k).noalias() +=
                                g.middleRows(r, k).transpose() * av2.middleRows(r, k);
                        }
                      });
  return {&t, id};
}

// For each block w of k rows: Y_w = S_w * V_w with S (n*k) x k, V (n*k) x h.
template <class Real>
Var<Real> batched_nn(Var<Real> s, Var<Real> v, int k) {
  Tape<Real>& t = *s.tape;
  const auto& sv = t.value(s.id);
  const auto& vv = t.value(v.id);
  assert(sv.rows() % k == 0 && sv.cols() == k);
  Mat<Real> out(vv.rows(), vv.cols());
  for (Eigen::Index r = 0; r < sv.rows(); r += k) {
    out.middleRows(r, k).noalias() = sv.middleRows(r, k) * vv.middleRows(r, k);
  }
  int id = t.add_node(std::move(out), detail::either_needs(t, s.id, v.id), "batched_nn",
                      [si = s.id, vi = v.id, k](Tape<Real>& tp, int self) {
                        const auto& g = tp.grad(self);
                        const auto& sv2 = tp.value(si);
                        const auto& vv2 = tp.value(vi);
                        for (Eigen::Index r = 0; r < sv2.rows(); r += k) {
                          if (tp.needs_grad(si))
                            tp.grad(si).middleRows(r, k).noalias() +=
                                g.middleRows(r, k) * vv2.middleRows(r, k).transpose();
                          if (tp.needs_grad(vi))
                            tp.grad(vi).middleRows(r, k).noalias() +=
                                sv2.middleRows(r, k).transpose() * g.middleRows(r, k);
                        }
                      });
  return {&t, id};
}

// Groups consecutive blocks of k rows into single rows:
// (n*k) x h -> n x (k*h), block-major.
template <class Real>
Var<Real> group_rows(Var<Real> a, int k) {
  Tape<Real>& t = *a.tape;
  const auto& av = t.value(a.id);
  assert(av.rows() % k == 0);
  const Eigen::Index n = av.rows() / k;
  const Eigen::Index h = av.cols();
  Mat<Real> v(n, k * h);
  for (Eigen::Index w = 0; w < n; ++w)
    for (Eigen::Index e = 0; e < k; ++e) v.row(w).segment(e * h, h) = av.row(w * k + e);
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "group_rows",
                      [ai = a.id, k, h](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        const auto& g = tp.grad(self);
                        auto& ga = tp.grad(ai);
                        for (Eigen::Index w = 0; w < g.rows(); ++w)
                          for (Eigen::Index e = 0; e < k; ++e)
                            ga.row(w * k + e) += g.row(w).segment(e * h, h);
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// pairwise squared distances between the rows of a: S_ij = |a_i - a_j|^2
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> pairwise_sqdist(Var<Real> a) {
  Tape<Real>& t = *a.tape;
  const auto& av = t.value(a.id);
  Mat<Real> gram = av * av.transpose();
  Mat<Real> v(av.rows(), av.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    for (Eigen::Index j = 0; j < av.rows(); ++j) {
      v(i, j) = std::max(Real(0), gram(i, i) + gram(j, j) - Real(2) * gram(i, j));
    }
  }
  int id = t.add_node(std::move(v), t.needs_grad(a.id), "pairwise_sqdist",
                      [ai = a.id](Tape<Real>& tp, int self) {
                        if (!tp.needs_grad(ai)) return;
                        const auto& g = tp.grad(self);
                        const auto& av2 = tp.value(ai);
                        Mat<Real> w = g + g.transpose();
                        Mat<Real> rs = w.rowwise().sum();
                        tp.grad(ai).noalias() +=
                            Real(2) * (rs.col(0).asDiagonal() * av2 - w * av2);
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// fused gated recurrent sequence
// ---------------------------------------------------------------------------
//
// x: R x T, one scalar observation per row per step. Weights:
//   w_rz: (1+h) x 2h   reset/update gates        b_rz: 1 x 2h
//   w_n:  (1+h) x h    candidate state           b_n:  1 x h
// Returns the final hidden state, R x h. With zero biases and zero input the
// hidden state stays exactly zero.

template <class Real>
struct GruTrace {
  std::vector<Mat<Real>> h;   // T+1 entries, h[0] = 0
  std::vector<Mat<Real>> rz;  // T entries, sigmoided gates, R x 2h
  std::vector<Mat<Real>> n;   // T entries, candidate, R x h
};

template <class Real>
Var<Real> gru_sequence(Var<Real> x, Var<Real> w_rz, Var<Real> w_n, Var<Real> b_rz,
                       Var<Real> b_n) {
  Tape<Real>& t = *x.tape;
  const auto& xv = t.value(x.id);
  const auto& wrz = t.value(w_rz.id);
  const auto& wn = t.value(w_n.id);
  const int rows = static_cast<int>(xv.rows());
  const int steps = static_cast<int>(xv.cols());
  const int h = static_cast<int>(wn.cols());
  assert(wrz.rows() == 1 + h && wrz.cols() == 2 * h);

  auto trace = std::make_shared<GruTrace<Real>>();
  trace->h.resize(steps + 1);
  trace->rz.resize(steps);
  trace->n.resize(steps);
  trace->h[0] = Mat<Real>::Zero(rows, h);

  // The weight matrices carry the input row on top of the hidden rows; the
  // products are split so no [x, h] concatenation buffer is ever built.
  const auto wrz_x = wrz.row(0);
  const auto wrz_h = wrz.bottomRows(h);
  const auto wn_x = wn.row(0);
  const auto wn_h = wn.bottomRows(h);

  Mat<Real> rh(rows, h);
  for (int s = 0; s < steps; ++s) {
    const Mat<Real>& hp = trace->h[s];
    Mat<Real>& rz = trace->rz[s];
    rz.noalias() = hp * wrz_h;
    rz.noalias() += xv.col(s) * wrz_x;
    rz.rowwise() += t.value(b_rz.id).row(0);
    rz.array() = rz.array().logistic();
    rh.array() = rz.leftCols(h).array() * hp.array();
    Mat<Real>& n = trace->n[s];
    n.noalias() = rh * wn_h;
    n.noalias() += xv.col(s) * wn_x;
    n.rowwise() += t.value(b_n.id).row(0);
    n.array() = n.array().tanh();
    trace->h[s + 1] = (Real(1) - rz.rightCols(h).array()) * n.array() +
                      rz.rightCols(h).array() * hp.array();
  }

  bool needs = t.needs_grad(x.id) || t.needs_grad(w_rz.id) || t.needs_grad(w_n.id) ||
               t.needs_grad(b_rz.id) || t.needs_grad(b_n.id);
  Mat<Real> out = trace->h[steps];
  int id = t.add_node(
      std::move(out), needs, "gru_sequence",
      [xi = x.id, wrzi = w_rz.id, wni = w_n.id, brzi = b_rz.id, bni = b_n.id, trace,
       rows, steps, h](Tape<Real>& tp, int self) {
        Mat<Real> dh = tp.grad(self);
        const auto& xv2 = tp.value(xi);
        const auto& wrz2 = tp.value(wrzi);
        const auto& wn2 = tp.value(wni);
        Mat<Real> rh(rows, h), dhp(rows, h), dpre_n(rows, h), dnin_h(rows, h);
        Mat<Real> dpre_rz(rows, 2 * h), din_h(rows, h);
        for (int s = steps - 1; s >= 0; --s) {
          const Mat<Real>& hp = trace->h[s];
          const Mat<Real>& rz = trace->rz[s];
          const Mat<Real>& n = trace->n[s];
          auto r = rz.leftCols(h);
          auto z = rz.rightCols(h);

          // h_s = (1-z) .* n + z .* hp; dn folds straight into dpre_n
          dhp.array() = dh.array() * z.array();
          dpre_n.array() = dh.array() * (Real(1) - z.array()) *
                           (Real(1) - n.array() * n.array());

          // n = tanh(x_s * wn_x + (r .* hp) * wn_h + b_n)
          if (tp.needs_grad(wni)) {
            rh.array() = r.array() * hp.array();
            auto& gw = tp.grad(wni);
            gw.row(0).noalias() += xv2.col(s).transpose() * dpre_n;
            gw.bottomRows(h).noalias() += rh.transpose() * dpre_n;
          }
          if (tp.needs_grad(bni)) tp.grad(bni) += dpre_n.colwise().sum();
          dnin_h.noalias() = dpre_n * wn2.bottomRows(h).transpose();
          dpre_rz.leftCols(h).array() = dnin_h.array() * hp.array();  // dr
          dhp.array() += dnin_h.array() * r.array();

          // rz = sigmoid(x_s * wrz_x + hp * wrz_h + b_rz)
          dpre_rz.rightCols(h).array() = dh.array() * (hp.array() - n.array());  // dz
          dpre_rz.array() *= rz.array() * (Real(1) - rz.array());
          if (tp.needs_grad(wrzi)) {
            auto& gw = tp.grad(wrzi);
            gw.row(0).noalias() += xv2.col(s).transpose() * dpre_rz;
            gw.bottomRows(h).noalias() += hp.transpose() * dpre_rz;
          }
          if (tp.needs_grad(brzi)) tp.grad(brzi) += dpre_rz.colwise().sum();
          din_h.noalias() = dpre_rz * wrz2.bottomRows(h).transpose();
          dhp += din_h;

          if (tp.needs_grad(xi)) {
            tp.grad(xi).col(s).noalias() +=
                dpre_n * wn2.row(0).transpose() + dpre_rz * wrz2.row(0).transpose();
          }
          std::swap(dh, dhp);
        }
      });
  return {&t, id};
}

}  // namespace dmtfd
