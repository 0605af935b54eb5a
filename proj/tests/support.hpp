#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tut/net.hpp"
#include "tut/ops.hpp"
#include "tut/rng.hpp"
#include "tut/tensor.hpp"

namespace tut::testing {

inline Matrix<double> random_matrix(Index rows, Index cols, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  CounterRng rng(mix64(seed + 0x9e37));
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * rng.uniform();
  return m;
}

// Values with |x| >= margin so kinks (relu, abs, clamp) stay out of reach of h.
inline Matrix<double> away_from_zero(Index rows, Index cols, std::uint64_t seed, double margin = 0.05) {
  Matrix<double> m = random_matrix(rows, cols, seed);
  for (Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    v = v >= 0 ? v + margin : v - margin;
  }
  return m;
}

inline Matrix<double> random_probs(Index rows, Index cols, std::uint64_t seed) {
  Matrix<double> m = random_matrix(rows, cols, seed, 0.05, 1.0);
  for (Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

struct GradReport {
  double max_rel = 0.0;  // worst per-tensor ‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)
  double max_abs = 0.0;
};

/// Central differences of a scalar function of `inputs` against reverse mode.
inline GradReport gradcheck(const std::vector<Tensor<double>>& inputs,
                            const std::function<Tensor<double>()>& f, double h = 1e-4) {
  for (auto t : inputs) t.zero_grad();
  f().backward();
  GradReport rep;
  for (auto t : inputs) {
    Matrix<double> analytic = t.has_grad() ? t.grad() : Matrix<double>::Zero(t.rows(), t.cols());
    Matrix<double> numeric(t.rows(), t.cols());
    for (Index i = 0; i < t.size(); ++i) {
      double& x = t.mutable_value().data()[i];
      const double keep = x;
      double fp, fm;
      {
        NoGradGuard g;
        x = keep + h;
        fp = f().item();
        x = keep - h;
        fm = f().item();
      }
      x = keep;
      numeric.data()[i] = (fp - fm) / (2 * h);
    }
    const double diff = (analytic - numeric).norm();
    const double denom = analytic.norm() + numeric.norm();
    // the floor keeps structurally zero gradients (e.g. a bias feeding
    // straight into instance norm) from turning rounding noise into a ratio
    rep.max_rel = std::max(rep.max_rel, diff / std::max(denom, 1e-6));
    rep.max_abs = std::max(rep.max_abs, (analytic - numeric).cwiseAbs().maxCoeff());
  }
  return rep;
}

/// Scalar probe: Σ W ⊙ x with fixed random weights, so every output element
/// gets a distinct upstream gradient.
inline Tensor<double> probe(const Tensor<double>& x, std::uint64_t seed = 77) {
  return sum(mul(x, Tensor<double>::constant(random_matrix(x.rows(), x.cols(), seed))));
}

/// Small model used by the end-to-end gradient check: N=2, M=1, w=3, d=4.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.refinement_stages = 1;
  c.layers = 2;
  c.attention.window = 3;
  c.attention.heads = 2;
  c.hidden_dim = 4;
  c.ffn_dim = 4;
  c.refine_hidden_dim = 4;
  c.refine_ffn_dim = 4;
  c.input_dim = 5;
  c.num_classes = 3;
  c.input_dropout = 0.0;
  c.ffn_dropout = 0.0;
  c.attention.dropout = 0.0;
  return c;
}

/// Labels with a few segments, for losses that need boundaries.
inline std::vector<int> segment_labels(Index length, int classes, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<int> out;
  int c = 0;
  while (static_cast<Index>(out.size()) < length) {
    const auto run = rng.uniform_int(2, std::max<std::int64_t>(2, length / 3));
    for (std::int64_t i = 0; i < run && static_cast<Index>(out.size()) < length; ++i) out.push_back(c);
    c = (c + 1 + static_cast<int>(rng.uniform_int(0, classes - 2))) % classes;
  }
  return out;
}

}  // namespace tut::testing
