#pragma once

// Differentiable operations over rank-2 tensors. Each op computes its value
// eagerly and, when recording, attaches a backward rule to the result.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tut/rng.hpp"
#include "tut/tensor.hpp"

namespace tut {

namespace detail {
inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
              std::to_string(b.cols()) + ")");
}
}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner extents differ (" + std::to_string(a.cols()) +
                                            " vs " + std::to_string(b.rows()) + ")");
  Matrix<Scalar> out = a.value() * b.value();
  return make_result<Scalar>("matmul", std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_buffer().noalias() += self.grad * pb.value.transpose();
    if (pb.requires_grad) pb.grad_buffer().noalias() += pa.value.transpose() * self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().transpose();
  return make_result<Scalar>("transpose", std::move(out), {a.node()}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Matrix<Scalar> out = a.value() + b.value();
  return make_result<Scalar>("add", std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Matrix<Scalar> out = a.value() - b.value();
  return make_result<Scalar>("sub", std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(-self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return make_result<Scalar>("mul", std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  return make_result<Scalar>("scale", std::move(out), {a.node()}, [s](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s) { return scale(a, s); }

/// Adds a 1×n row to every row of an m×n tensor.
template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& a, const Tensor<Scalar>& row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias must be 1x" + std::to_string(a.cols()));
  Matrix<Scalar> out = a.value().rowwise() + row.value().row(0);
  return make_result<Scalar>("add_row", std::move(out), {a.node(), row.node()}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

/// x·W + b, with W of shape in×out and b of shape 1×out.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  return add_row(matmul(x, weight), bias);
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return make_result<Scalar>("relu", std::move(out), {a.node()}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.accumulate((p.value.array() > Scalar(0)).select(self.grad, Scalar(0)).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseAbs2();
  return make_result<Scalar>("square", std::move(out), {a.node()}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.accumulate(Scalar(2) * self.grad.cwiseProduct(p.value));
  });
}

template <typename Scalar>
Tensor<Scalar> abs(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseAbs();
  return make_result<Scalar>("abs", std::move(out), {a.node()}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.accumulate(self.grad.cwiseProduct(p.value.unaryExpr([](Scalar v) {
      return v > 0 ? Scalar(1) : (v < 0 ? Scalar(-1) : Scalar(0));
    })));
  });
}

/// Elementwise clamp to [lo, hi]; the gradient is zero where clamped.
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, Scalar lo, Scalar hi) {
  Matrix<Scalar> out = a.value().cwiseMax(lo).cwiseMin(hi);
  return make_result<Scalar>("clamp", std::move(out), {a.node()}, [lo, hi](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.accumulate(((p.value.array() >= lo) && (p.value.array() <= hi)).select(self.grad, Scalar(0)).matrix());
  });
}

/// Identity on values; blocks gradient flow.
template <typename Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& a) {
  return Tensor<Scalar>::constant(a.value());
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result<Scalar>("sum", std::move(out), {a.node()}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.accumulate(Matrix<Scalar>::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  if (a.size() == 0) throw EmptyInputError("mean of an empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

/// Softmax over each row, stabilized by subtracting the row maximum.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  if (!out.allFinite()) throw DomainError("softmax: non-finite input");
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_lastdim(const Tensor<Scalar>& x) {
  Matrix<Scalar> out = softmax_rows(x.value());
  return make_result<Scalar>("softmax", std::move(out), {x.node()}, [](Node<Scalar>& self) {
    const auto& y = self.value;
    Matrix<Scalar> dot = (self.grad.cwiseProduct(y)).rowwise().sum();
    Matrix<Scalar> g = y.cwiseProduct(self.grad - dot.replicate(1, y.cols()));
    self.parents[0]->accumulate(g);
  });
}

template <typename Scalar>
Tensor<Scalar> log_softmax_lastdim(const Tensor<Scalar>& x) {
  const auto& v = x.value();
  Matrix<Scalar> out(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    const Scalar m = v.row(i).maxCoeff();
    const Scalar lse = m + std::log((v.row(i).array() - m).exp().sum());
    out.row(i) = v.row(i).array() - lse;
  }
  if (!out.allFinite()) throw DomainError("log_softmax: non-finite input");
  return make_result<Scalar>("log_softmax", std::move(out), {x.node()}, [](Node<Scalar>& self) {
    Matrix<Scalar> p = self.value.array().exp().matrix();
    Matrix<Scalar> gsum = self.grad.rowwise().sum();
    self.parents[0]->accumulate(self.grad - p.cwiseProduct(gsum.replicate(1, p.cols())));
  });
}

/// Normalizes each column over the temporal (row) axis, then applies a
/// per-channel affine transform. Variance is the population variance.
template <typename Scalar>
Tensor<Scalar> instance_norm_temporal(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                                      const Tensor<Scalar>& bias, Scalar eps) {
  const Index T = x.rows();
  const Index d = x.cols();
  if (T == 0) throw EmptyInputError("instance_norm_temporal: empty sequence");
  detail::require(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 && bias.cols() == d,
                  "instance_norm_temporal: gain/bias must be 1x" + std::to_string(d));
  const auto& xv = x.value();
  RowVector<Scalar> mu = xv.colwise().mean();
  Matrix<Scalar> centered = xv.rowwise() - mu;
  RowVector<Scalar> var = centered.cwiseAbs2().colwise().mean();
  RowVector<Scalar> inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix<Scalar> xhat = centered.array().rowwise() * inv_std.array();
  Matrix<Scalar> out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return make_result<Scalar>(
      "instance_norm", std::move(out), {x.node(), gain.node(), bias.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Scalar>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& dy = self.grad;
        if (pg.requires_grad) pg.accumulate(dy.cwiseProduct(xhat).colwise().sum());
        if (pb.requires_grad) pb.accumulate(dy.colwise().sum());
        if (px.requires_grad) {
          const Scalar n = static_cast<Scalar>(dy.rows());
          Matrix<Scalar> dxhat = dy.array().rowwise() * pg.value.row(0).array();
          RowVector<Scalar> s1 = dxhat.colwise().sum();
          RowVector<Scalar> s2 = dxhat.cwiseProduct(xhat).colwise().sum();
          Matrix<Scalar> dx = (n * dxhat.array()).matrix();
          dx.rowwise() -= s1;
          dx -= (xhat.array().rowwise() * s2.array()).matrix();
          dx = (dx.array().rowwise() * (inv_std.array() / n)).matrix();
          px.accumulate(dx);
        }
      });
}

/// Inverted dropout: keeps each entry with probability 1−p and scales
/// survivors by 1/(1−p). Identity outside training or when p = 0.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, CounterRng rng, bool train) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw DomainError("dropout: probability must be < 1");
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  Matrix<Scalar> mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() >= p ? keep_scale : Scalar(0);
  Matrix<Scalar> out = x.value().cwiseProduct(mask);
  return make_result<Scalar>("dropout", std::move(out), {x.node()}, [mask = std::move(mask)](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad.cwiseProduct(mask));
  });
}

/// out[k] = x[index[k]]; repeated indices are allowed.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, std::vector<Index> index) {
  Matrix<Scalar> out(static_cast<Index>(index.size()), x.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    detail::require(index[k] >= 0 && index[k] < x.rows(), "gather_rows: index out of range");
    out.row(static_cast<Index>(k)) = x.value().row(index[k]);
  }
  return make_result<Scalar>("gather_rows", std::move(out), {x.node()}, [index = std::move(index)](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < index.size(); ++k) g.row(index[k]) += self.grad.row(static_cast<Index>(k));
  });
}

/// out[index[k]] += x[k], with `out_rows` rows in the result.
template <typename Scalar>
Tensor<Scalar> scatter_add_rows(const Tensor<Scalar>& x, std::vector<Index> index, Index out_rows) {
  detail::require(static_cast<Index>(index.size()) == x.rows(), "scatter_add_rows: one index per input row");
  Matrix<Scalar> out = Matrix<Scalar>::Zero(out_rows, x.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    detail::require(index[k] >= 0 && index[k] < out_rows, "scatter_add_rows: index out of range");
    out.row(index[k]) += x.value().row(static_cast<Index>(k));
  }
  return make_result<Scalar>("scatter_add_rows", std::move(out), {x.node()},
                             [index = std::move(index)](Node<Scalar>& self) {
                               Matrix<Scalar> g(static_cast<Index>(index.size()), self.grad.cols());
                               for (std::size_t k = 0; k < index.size(); ++k)
                                 g.row(static_cast<Index>(k)) = self.grad.row(index[k]);
                               self.parents[0]->accumulate(g);
                             });
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols: range out of bounds");
  Matrix<Scalar> out = x.value().middleCols(start, count);
  return make_result<Scalar>("slice_cols", std::move(out), {x.node()}, [start, count](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().middleCols(start, count) += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& x, Index start, Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows: range out of bounds");
  Matrix<Scalar> out = x.value().middleRows(start, count);
  return make_result<Scalar>("slice_rows", std::move(out), {x.node()}, [start, count](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().middleRows(start, count) += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  Index cols = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == parts[0].rows(), "concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix<Scalar> out(parts[0].rows(), cols);
  std::vector<typename Tensor<Scalar>::NodePtr> nodes;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    nodes.push_back(p.node());
  }
  return make_result<Scalar>("concat_cols", std::move(out), std::move(nodes), [](Node<Scalar>& self) {
    Index off = 0;
    for (auto& p : self.parents) {
      const Index c = p->value.cols();
      if (p->requires_grad) p->accumulate(self.grad.middleCols(off, c));
      off += c;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> concat_rows(const std::vector<Tensor<Scalar>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  Index rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == parts[0].cols(), "concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, parts[0].cols());
  std::vector<typename Tensor<Scalar>::NodePtr> nodes;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    nodes.push_back(p.node());
  }
  return make_result<Scalar>("concat_rows", std::move(out), std::move(nodes), [](Node<Scalar>& self) {
    Index off = 0;
    for (auto& p : self.parents) {
      const Index r = p->value.rows();
      if (p->requires_grad) p->accumulate(self.grad.middleRows(off, r));
      off += r;
    }
  });
}

/// Running sum along each row.
template <typename Scalar>
Tensor<Scalar> cumsum_lastdim(const Tensor<Scalar>& x) {
  Matrix<Scalar> out = x.value();
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 1; j < out.cols(); ++j) out(i, j) += out(i, j - 1);
  return make_result<Scalar>("cumsum", std::move(out), {x.node()}, [](Node<Scalar>& self) {
    Matrix<Scalar> g = self.grad;
    for (Index i = 0; i < g.rows(); ++i)
      for (Index j = g.cols() - 2; j >= 0; --j) g(i, j) += g(i, j + 1);
    self.parents[0]->accumulate(g);
  });
}

/// Divides each row by its sum.
template <typename Scalar>
Tensor<Scalar> normalize_rows(const Tensor<Scalar>& x) {
  Matrix<Scalar> sums = x.value().rowwise().sum();
  if ((sums.array() <= Scalar(0)).any()) throw DomainError("normalize_rows: row sum must be positive");
  Matrix<Scalar> out = x.value().array().colwise() / sums.col(0).array();
  return make_result<Scalar>("normalize_rows", std::move(out), {x.node()}, [sums](Node<Scalar>& self) {
    // d/dx_j (x_k / s) = δ_jk / s − x_k / s²  ⇒  (g − Σ g·y) / s
    Matrix<Scalar> dot = self.grad.cwiseProduct(self.value).rowwise().sum();
    Matrix<Scalar> g = (self.grad - dot.replicate(1, self.grad.cols())).array().colwise() / sums.col(0).array();
    self.parents[0]->accumulate(g);
  });
}

/// Mean over rows of −log softmax(logits)[label].
template <typename Scalar>
Tensor<Scalar> cross_entropy_from_logits(const Tensor<Scalar>& logits, std::span<const int> labels) {
  const Index T = logits.rows();
  const Index C = logits.cols();
  detail::require(static_cast<Index>(labels.size()) == T, "cross_entropy: one label per row required");
  if (T == 0) throw EmptyInputError("cross_entropy: empty sequence");
  for (int c : labels)
    if (c < 0 || c >= C) throw DomainError("cross_entropy: label " + std::to_string(c) + " outside [0, " + std::to_string(C) + ")");
  Matrix<Scalar> probs = softmax_rows(logits.value());
  Scalar total = 0;
  for (Index t = 0; t < T; ++t) {
    const auto& row = logits.value().row(t);
    const Scalar m = row.maxCoeff();
    total += -(row(labels[t]) - m - std::log((row.array() - m).exp().sum()));
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / static_cast<Scalar>(T);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<Scalar>("cross_entropy", std::move(out), {logits.node()},
                             [probs = std::move(probs), lab = std::move(lab)](Node<Scalar>& self) {
                               Matrix<Scalar> g = probs;
                               for (std::size_t t = 0; t < lab.size(); ++t) g(static_cast<Index>(t), lab[t]) -= Scalar(1);
                               g *= self.grad(0, 0) / static_cast<Scalar>(lab.size());
                               self.parents[0]->accumulate(g);
                             });
}

/// Σ p·log(p/q) over all entries, with 0·log 0 ≡ 0. Both arguments may carry
/// gradients. Entries must lie in [0, 1] up to `tolerance`.
template <typename Scalar>
Tensor<Scalar> kl_from_probs(const Tensor<Scalar>& p, const Tensor<Scalar>& q, Scalar tolerance = Scalar(1e-6)) {
  detail::require_same_shape(p, q, "kl_from_probs");
  auto in_range = [tolerance](const Matrix<Scalar>& m) {
    return (m.array() >= -tolerance).all() && (m.array() <= Scalar(1) + tolerance).all();
  };
  if (!in_range(p.value()) || !in_range(q.value())) throw DomainError("kl_from_probs: probabilities outside [0, 1]");
  Scalar total = 0;
  const auto& pv = p.value();
  const auto& qv = q.value();
  for (Index i = 0; i < pv.size(); ++i) {
    const Scalar a = pv.data()[i];
    if (a <= Scalar(0)) continue;
    total += a * (std::log(a) - std::log(qv.data()[i]));
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total;
  return make_result<Scalar>("kl", std::move(out), {p.node(), q.node()}, [](Node<Scalar>& self) {
    auto& pp = *self.parents[0];
    auto& pq = *self.parents[1];
    const Scalar g = self.grad(0, 0);
    if (pp.requires_grad) {
      Matrix<Scalar> dp = Matrix<Scalar>::Zero(pp.value.rows(), pp.value.cols());
      for (Index i = 0; i < dp.size(); ++i) {
        const Scalar a = pp.value.data()[i];
        if (a > Scalar(0)) dp.data()[i] = g * (std::log(a) - std::log(pq.value.data()[i]) + Scalar(1));
      }
      pp.accumulate(dp);
    }
    if (pq.requires_grad) {
      Matrix<Scalar> dq = Matrix<Scalar>::Zero(pq.value.rows(), pq.value.cols());
      for (Index i = 0; i < dq.size(); ++i) {
        const Scalar a = pp.value.data()[i];
        if (a > Scalar(0)) dq.data()[i] = -g * a / pq.value.data()[i];
      }
      pq.accumulate(dq);
    }
  });
}

}  // namespace tut
