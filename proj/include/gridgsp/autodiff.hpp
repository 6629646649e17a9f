// Copyright 2026 The Authors.
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

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gridgsp/errors.hpp"

// Reverse-mode automatic differentiation over dense 2-D tensors. A batch of
// graph signals is stored column-wise: rows are signal entries, columns are
// samples.
namespace gridgsp::ad {

// Training allocates many same-sized multi-megabyte temporaries per step.
// Serving them from the retained heap instead of fresh mmap regions avoids
// page-faulting every buffer; call once at program start.
inline void keep_heap_resident() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

using Matrix = Eigen::MatrixXd;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  double scalar() const { return value(0, 0); }

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

inline Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

inline Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

namespace detail {

inline Var make(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (const Var& p : parents) any = any || p->requires_grad;
  n->requires_grad = any;
  if (any) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

inline void check_same(const Var& a, const Var& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) {
    throw DimensionError(std::string(op) + ": shape " + std::to_string(a->rows()) + "x" + std::to_string(a->cols()) +
                         " vs " + std::to_string(b->rows()) + "x" + std::to_string(b->cols()));
  }
}

}  // namespace detail

// Accumulates d(loss)/d(node) into every reachable node that requires grad.
inline void backward(const Var& loss) {
  if (loss->rows() != 1 || loss->cols() != 1) throw DimensionError("backward: loss must be a 1x1 tensor");
  if (!loss->requires_grad) throw Error("backward: loss is detached from every parameter");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

inline Var matmul(const Var& a, const Var& b) {
  if (a->cols() != b->rows()) throw DimensionError("matmul: inner dimensions differ");
  return detail::make(a->value * b->value, {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad * b->value.transpose());
    if (b->requires_grad) b->accumulate(a->value.transpose() * self.grad);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same(a, b, "add");
  return detail::make(a->value + b->value, {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) b->accumulate(self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same(a, b, "sub");
  return detail::make(a->value - b->value, {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) b->accumulate(-self.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same(a, b, "mul");
  return detail::make(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad.cwiseProduct(b->value));
    if (b->requires_grad) b->accumulate(self.grad.cwiseProduct(a->value));
  });
}

inline Var scale(const Var& a, double c) {
  return detail::make(c * a->value, {a}, [a, c](Node& self) { a->accumulate(c * self.grad); });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::make(a->value.array() + c, {a}, [a](Node& self) { a->accumulate(self.grad); });
}

// a (r x B) + b (r x 1) broadcast over columns.
inline Var add_col_broadcast(const Var& a, const Var& b) {
  if (b->cols() != 1 || b->rows() != a->rows()) throw DimensionError("add_col_broadcast: bias must be r x 1");
  return detail::make(a->value.colwise() + b->value.col(0), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) b->accumulate(self.grad.rowwise().sum());
  });
}

inline Var relu(const Var& a) {
  return detail::make(a->value.cwiseMax(0.0), {a}, [a](Node& self) {
    a->accumulate((a->value.array() > 0.0).cast<double>().matrix().cwiseProduct(self.grad));
  });
}

inline Var tanh(const Var& a) {
  Matrix y = a->value.array().tanh().matrix();
  return detail::make(y, {a}, [a, y](Node& self) {
    a->accumulate(self.grad.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

inline Var sin(const Var& a) {
  return detail::make(a->value.array().sin().matrix(), {a}, [a](Node& self) {
    a->accumulate(self.grad.cwiseProduct(a->value.array().cos().matrix()));
  });
}

inline Var cos(const Var& a) {
  return detail::make(a->value.array().cos().matrix(), {a}, [a](Node& self) {
    a->accumulate(-self.grad.cwiseProduct(a->value.array().sin().matrix()));
  });
}

inline Var exp(const Var& a) {
  Matrix y = a->value.array().exp().matrix();
  return detail::make(y, {a}, [a, y](Node& self) { a->accumulate(self.grad.cwiseProduct(y)); });
}

inline Var square(const Var& a) {
  return detail::make(a->value.array().square().matrix(), {a},
                      [a](Node& self) { a->accumulate(2.0 * self.grad.cwiseProduct(a->value)); });
}

inline Var sum(const Var& a) {
  Matrix v(1, 1);
  v(0, 0) = a->value.sum();
  return detail::make(v, {a}, [a](Node& self) {
    a->accumulate(Matrix::Constant(a->rows(), a->cols(), self.grad(0, 0)));
  });
}

inline Var mean(const Var& a) {
  const double count = static_cast<double>(a->value.size());
  if (count == 0.0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / count);
}

// Elementwise min(a, b).
inline Var minimum(const Var& a, const Var& b) {
  detail::check_same(a, b, "minimum");
  const Matrix pick = (a->value.array() <= b->value.array()).cast<double>().matrix();
  return detail::make(a->value.cwiseMin(b->value), {a, b}, [a, b, pick](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad.cwiseProduct(pick));
    if (b->requires_grad) b->accumulate(self.grad.cwiseProduct((1.0 - pick.array()).matrix()));
  });
}

inline Var clamp(const Var& a, double lo, double hi) {
  const Matrix inside = ((a->value.array() >= lo) && (a->value.array() <= hi)).cast<double>().matrix();
  return detail::make(a->value.cwiseMax(lo).cwiseMin(hi), {a}, [a, inside](Node& self) {
    a->accumulate(self.grad.cwiseProduct(inside));
  });
}

inline Var transpose(const Var& a) {
  return detail::make(a->value.transpose(), {a}, [a](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad.transpose());
  });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a->rows()) throw DimensionError("slice_rows: out of range");
  return detail::make(a->value.middleRows(start, count), {a}, [a, start, count](Node& self) {
    Matrix g = Matrix::Zero(a->rows(), a->cols());
    g.middleRows(start, count) = self.grad;
    a->accumulate(g);
  });
}

inline Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("vstack: nothing to stack");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front()->cols();
  for (const Var& p : parts) {
    if (p->cols() != cols) throw DimensionError("vstack: column counts differ");
    rows += p->rows();
  }
  Matrix v(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    v.middleRows(r, p->rows()) = p->value;
    r += p->rows();
  }
  return detail::make(std::move(v), parts, [parts](Node& self) {
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      if (p->requires_grad) p->accumulate(self.grad.middleRows(off, p->rows()));
      off += p->rows();
    }
  });
}

// X holds Q stacked blocks of n rows; returns R stacked blocks with
// out_r = sum_q W(r, q) X_q. This is channel mixing Theta (x) I_n.
inline Var block_mix(const Var& w, const Var& x, Eigen::Index n) {
  const Eigen::Index q = w->cols();
  if (n <= 0 || x->rows() != q * n) throw DimensionError("block_mix: input must have W.cols() blocks of n rows");
  const Eigen::Index r = w->rows();
  const Eigen::Index b = x->cols();
  // Column c of a (count*n x B) matrix is an n x count matrix in memory.
  using ConstBlock = Eigen::Map<const Matrix>;
  using Block = Eigen::Map<Matrix>;
  Matrix value(r * n, b);
  const Matrix wt = w->value.transpose();
  for (Eigen::Index c = 0; c < b; ++c) {
    Block(value.col(c).data(), n, r).noalias() = ConstBlock(x->value.col(c).data(), n, q).lazyProduct(wt);
  }
  return detail::make(std::move(value), {w, x}, [w, x, n, q, r, b](Node& self) {
    if (w->requires_grad) {
      Matrix gw = Matrix::Zero(r, q);
      for (Eigen::Index c = 0; c < b; ++c) {
        gw.noalias() += ConstBlock(self.grad.col(c).data(), n, r).transpose().lazyProduct(ConstBlock(x->value.col(c).data(), n, q));
      }
      w->accumulate(gw);
    }
    if (x->requires_grad) {
      Matrix gx(q * n, b);
      for (Eigen::Index c = 0; c < b; ++c) {
        Block(gx.col(c).data(), n, q).noalias() = ConstBlock(self.grad.col(c).data(), n, r).lazyProduct(w->value);
      }
      x->accumulate(gx);
    }
  });
}

// Applies a fixed operator S to every n-row block of x.
inline Var block_shift(const Matrix& s, const Var& x) {
  const Eigen::Index n = s.rows();
  if (s.cols() != n || n == 0 || x->rows() % n != 0) throw DimensionError("block_shift: operator/input mismatch");
  const Eigen::Index blocks = x->rows() / n;
  Matrix value(x->rows(), x->cols());
  for (Eigen::Index j = 0; j < blocks; ++j) value.middleRows(j * n, n).noalias() = s * x->value.middleRows(j * n, n);
  return detail::make(std::move(value), {x}, [s, x, n, blocks](Node& self) {
    Matrix g(x->rows(), x->cols());
    for (Eigen::Index j = 0; j < blocks; ++j) {
      g.middleRows(j * n, n).noalias() = s.transpose() * self.grad.middleRows(j * n, n);
    }
    x->accumulate(g);
  });
}

namespace detail {

inline Matrix group_log_softmax(const Matrix& logits, Eigen::Index levels) {
  Matrix out(logits.rows(), logits.cols());
  const Eigen::Index groups = logits.rows() / levels;
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const auto block = logits.block(g * levels, c, levels, 1);
      const double mx = block.maxCoeff();
      const double lse = mx + std::log((block.array() - mx).exp().sum());
      out.block(g * levels, c, levels, 1) = block.array() - lse;
    }
  }
  return out;
}

}  // namespace detail

// Per-group log-softmax of `levels`-row blocks.
inline Var log_softmax_groups(const Var& logits, Eigen::Index levels) {
  if (levels <= 0 || logits->rows() % levels != 0) throw DimensionError("log_softmax_groups: bad group size");
  Matrix lp = detail::group_log_softmax(logits->value, levels);
  return detail::make(lp, {logits}, [logits, lp, levels](Node& self) {
    Matrix g(lp.rows(), lp.cols());
    const Eigen::Index groups = lp.rows() / levels;
    for (Eigen::Index k = 0; k < groups; ++k) {
      const auto p = lp.middleRows(k * levels, levels).array().exp();
      const auto gk = self.grad.middleRows(k * levels, levels);
      g.middleRows(k * levels, levels) = gk.array() - p.rowwise() * gk.colwise().sum().array();
    }
    logits->accumulate(g);
  });
}

// Picks one row per (group, column): out(g, c) = a(g * levels + choice(g, c), c).
inline Var gather_groups(const Var& a, const Eigen::MatrixXi& choice, Eigen::Index levels) {
  const Eigen::Index groups = choice.rows();
  if (a->rows() != groups * levels || a->cols() != choice.cols()) throw DimensionError("gather_groups: shape mismatch");
  Matrix v(groups, a->cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index c = 0; c < a->cols(); ++c) v(g, c) = a->value(g * levels + choice(g, c), c);
  }
  return detail::make(std::move(v), {a}, [a, choice, levels, groups](Node& self) {
    Matrix g = Matrix::Zero(a->rows(), a->cols());
    for (Eigen::Index k = 0; k < groups; ++k) {
      for (Eigen::Index c = 0; c < a->cols(); ++c) g(k * levels + choice(k, c), c) = self.grad(k, c);
    }
    a->accumulate(g);
  });
}

// Sums rows: (r x B) -> (1 x B).
inline Var sum_rows(const Var& a) {
  return detail::make(a->value.colwise().sum(), {a}, [a](Node& self) {
    a->accumulate(self.grad.replicate(a->rows(), 1));
  });
}

// Adam with bias correction.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long t = 0;
};

inline void adam_step(std::vector<Matrix*> params, const std::vector<const Matrix*>& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix& g = *grads[k];
    if (g.size() == 0) continue;
    if (g.rows() != params[k]->rows() || g.cols() != params[k]->cols()) {
      throw DimensionError("adam_step: gradient shape mismatch");
    }
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const Matrix mhat = state.m[k] / c1;
    const Matrix vhat = state.v[k] / c2;
    params[k]->array() -= cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.eps);
  }
}

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {}

  void zero_grad() {
    for (Var& p : params_) p->grad.resize(0, 0);
  }

  void step() {
    std::vector<Matrix*> values;
    std::vector<const Matrix*> grads;
    for (Var& p : params_) {
      values.push_back(&p->value);
      grads.push_back(&p->grad);
    }
    adam_step(values, grads, state_, cfg_);
  }

  AdamConfig& config() { return cfg_; }
  const AdamState& state() const { return state_; }

 private:
  std::vector<Var> params_;
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace gridgsp::ad
