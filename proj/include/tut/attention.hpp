#pragma once

// Multi-head attention over a single sequence with three key patterns.
//
// Local and LogSparse go through a fused kernel that only ever stores one
// probability per (head, query, slot); Full goes through dense matmuls. The
// two routes share no code beyond the primitive ops, so the dense route can
// serve as an oracle for the fused one.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tut/ops.hpp"
#include "tut/rng.hpp"
#include "tut/tensor.hpp"

namespace tut {

enum class AttentionPattern { Full, Local, LogSparse };
enum class PeMode { None, AbsSinusoidal, AbsLearnable, Relative };
enum class RpeShare { NoShare, StageShared, ScaleShared };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AttentionConfig {
  AttentionPattern pattern = AttentionPattern::Local;
  Index window = 51;
  Index heads = 4;
  double dropout = 0.0;
  PeMode pe_mode = PeMode::Relative;
  RpeShare rpe_share = RpeShare::ScaleShared;

  Index radius() const { return window / 2; }

  void validate(Index model_dim) const {
    if (window < 1 || window % 2 == 0) throw ConfigError("window size must be an odd positive integer");
    if (heads < 1 || model_dim % heads != 0)
      throw ConfigError("head count " + std::to_string(heads) + " must divide model dim " + std::to_string(model_dim));
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("attention dropout must be in [0, 1)");
  }
};

/// Which key each (query, slot) pair refers to.
///
/// Local: slot k ↔ offset k − ⌊w/2⌋, so slot ⌊w/2⌋ is the query itself.
/// LogSparse: slots hold offsets 0, −1, +1, −2, +2, −4, +4, …
/// Full: slot k ↔ key k.
/// Slots whose key falls outside [0, T) are invalid and carry zero mass.
struct KeyLayout {
  AttentionPattern pattern = AttentionPattern::Local;
  Index length = 0;
  Index radius = 0;
  std::vector<Index> offsets;

  static KeyLayout make(AttentionPattern pattern, Index length, Index window) {
    KeyLayout l;
    l.pattern = pattern;
    l.length = length;
    l.radius = window / 2;
    if (pattern == AttentionPattern::Local) {
      for (Index o = -l.radius; o <= l.radius; ++o) l.offsets.push_back(o);
    } else if (pattern == AttentionPattern::LogSparse) {
      l.offsets.push_back(0);
      for (Index step = 1; step < length; step *= 2) {
        l.offsets.push_back(-step);
        l.offsets.push_back(step);
      }
    }
    return l;
  }

  Index slots() const { return pattern == AttentionPattern::Full ? length : static_cast<Index>(offsets.size()); }

  Index key(Index query, Index slot) const {
    const Index k = pattern == AttentionPattern::Full ? slot : query + offsets[static_cast<std::size_t>(slot)];
    return (k >= 0 && k < length) ? k : -1;
  }

  Index valid_count(Index query) const {
    Index n = 0;
    for (Index s = 0; s < slots(); ++s) n += key(query, s) >= 0 ? 1 : 0;
    return n;
  }

  /// Row of the relative-position table for a (query, key) pair. Offsets
  /// beyond the window are clipped, which only happens for Full/LogSparse.
  Index rpe_row(Index query, Index key_index) const {
    const Index off = key_index - query;
    if (pattern == AttentionPattern::Local && (off < -radius || off > radius))
      throw std::logic_error("relative offset outside the attention window");
    return std::clamp(off, -radius, radius) + radius;
  }
};

/// Sorted key indices attended by `query` under the LogSparse pattern.
inline std::vector<Index> logsparse_keys(Index length, Index query) {
  const KeyLayout layout = KeyLayout::make(AttentionPattern::LogSparse, length, 1);
  std::vector<Index> keys;
  for (Index s = 0; s < layout.slots(); ++s)
    if (Index k = layout.key(query, s); k >= 0) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

/// Post-softmax attention retained for the boundary-aware loss.
/// `probs` has heads·length rows (head-major) and layout.slots() columns.
template <typename Scalar>
struct AttentionRecord {
  Tensor<Scalar> probs;
  Index heads = 0;
  KeyLayout layout;

  Index length() const { return layout.length; }
  Index entry_count() const { return probs.defined() ? probs.size() : 0; }
  Index valid_count(Index query) const { return layout.valid_count(query); }
  RowVector<Scalar> row(Index head, Index query) const { return probs.value().row(head * layout.length + query); }
};

template <typename Scalar>
struct AttentionResult {
  Tensor<Scalar> output;
  AttentionRecord<Scalar> record;
};

/// Dropout applied to attention probabilities after the record is taken.
struct AttentionDropout {
  double p = 0.0;
  CounterRng rng;
  bool train = false;
};

namespace detail {

template <typename Scalar>
void check_qkv(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v, Index heads) {
  require(k.rows() == v.rows(), "attention: key and value lengths differ");
  require(q.rows() == k.rows(), "attention: query length must equal key length");
  require(q.cols() == k.cols() && k.cols() == v.cols(), "attention: Q, K, V widths differ");
  require(heads >= 1 && q.cols() % heads == 0, "attention: heads must divide the model width");
}

template <typename Scalar>
void check_rpe(const Tensor<Scalar>* rpe, Index window, Index heads) {
  if (rpe) require(rpe->rows() == window && rpe->cols() == heads, "attention: RPE table must be w x h");
}

}  // namespace detail

/// Scores q·k/√d_k (+ RPE) for every valid slot, softmax over valid slots.
/// Returns heads·T × slots probabilities.
template <typename Scalar>
Tensor<Scalar> attention_probs(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const KeyLayout& layout, Index heads,
                               const Tensor<Scalar>* rpe) {
  const Index T = layout.length;
  const Index dk = q.cols() / heads;
  const Index S = layout.slots();
  const Scalar inv = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));
  const auto& qv = q.value();
  const auto& kv = k.value();
  Matrix<Scalar> probs = Matrix<Scalar>::Zero(heads * T, S);
  std::vector<Scalar> scores(static_cast<std::size_t>(S));
  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < T; ++i) {
      Scalar best = -std::numeric_limits<Scalar>::infinity();
      for (Index s = 0; s < S; ++s) {
        const Index j = layout.key(i, s);
        if (j < 0) continue;
        Scalar sc = qv.row(i).segment(h * dk, dk).dot(kv.row(j).segment(h * dk, dk)) * inv;
        if (rpe) sc += rpe->value()(layout.rpe_row(i, j), h);
        scores[static_cast<std::size_t>(s)] = sc;
        best = std::max(best, sc);
      }
      if (!std::isfinite(best)) throw DomainError("attention: non-finite score");
      Scalar total = 0;
      auto row = probs.row(h * T + i);
      for (Index s = 0; s < S; ++s) {
        if (layout.key(i, s) < 0) continue;
        row(s) = std::exp(scores[static_cast<std::size_t>(s)] - best);
        total += row(s);
      }
      row /= total;
    }
  }
  std::vector<typename Tensor<Scalar>::NodePtr> parents{q.node(), k.node()};
  if (rpe) parents.push_back(rpe->node());
  return make_result<Scalar>("attention_probs", std::move(probs), std::move(parents), [layout, heads, dk, inv](Node<Scalar>& self) {
    auto& pq = *self.parents[0];
    auto& pk = *self.parents[1];
    Node<Scalar>* prpe = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    const Index T = layout.length;
    const Index S = layout.slots();
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(pq.value.rows(), pq.value.cols());
    Matrix<Scalar> dkm = Matrix<Scalar>::Zero(pk.value.rows(), pk.value.cols());
    Matrix<Scalar> drpe;
    if (prpe && prpe->requires_grad) drpe = Matrix<Scalar>::Zero(prpe->value.rows(), prpe->value.cols());
    for (Index h = 0; h < heads; ++h) {
      for (Index i = 0; i < T; ++i) {
        const auto p = self.value.row(h * T + i);
        const auto g = self.grad.row(h * T + i);
        const Scalar inner = p.dot(g);
        for (Index s = 0; s < S; ++s) {
          const Index j = layout.key(i, s);
          if (j < 0) continue;
          const Scalar ds = p(s) * (g(s) - inner);
          if (ds == Scalar(0)) continue;
          dq.row(i).segment(h * dk, dk) += (ds * inv) * pk.value.row(j).segment(h * dk, dk);
          dkm.row(j).segment(h * dk, dk) += (ds * inv) * pq.value.row(i).segment(h * dk, dk);
          if (drpe.size()) drpe(layout.rpe_row(i, j), h) += ds;
        }
      }
    }
    pq.accumulate(dq);
    pk.accumulate(dkm);
    if (drpe.size()) prpe->accumulate(drpe);
  });
}

/// out[i, head] = Σ_slot probs[head·T + i, slot] · v[key(i, slot), head].
template <typename Scalar>
Tensor<Scalar> attention_apply(const Tensor<Scalar>& probs, const Tensor<Scalar>& v, const KeyLayout& layout, Index heads) {
  const Index T = layout.length;
  const Index dv = v.cols() / heads;
  const Index S = layout.slots();
  detail::require(probs.rows() == heads * T && probs.cols() == S, "attention_apply: probability layout mismatch");
  const auto& pv = probs.value();
  const auto& vv = v.value();
  Matrix<Scalar> out = Matrix<Scalar>::Zero(T, v.cols());
  for (Index h = 0; h < heads; ++h)
    for (Index i = 0; i < T; ++i)
      for (Index s = 0; s < S; ++s) {
        const Index j = layout.key(i, s);
        if (j < 0) continue;
        const Scalar a = pv(h * T + i, s);
        if (a != Scalar(0)) out.row(i).segment(h * dv, dv) += a * vv.row(j).segment(h * dv, dv);
      }
  return make_result<Scalar>("attention_apply", std::move(out), {probs.node(), v.node()}, [layout, heads, dv](Node<Scalar>& self) {
    auto& pp = *self.parents[0];
    auto& pv = *self.parents[1];
    const Index T = layout.length;
    const Index S = layout.slots();
    Matrix<Scalar> dp;
    Matrix<Scalar> dvm;
    if (pp.requires_grad) dp = Matrix<Scalar>::Zero(pp.value.rows(), pp.value.cols());
    if (pv.requires_grad) dvm = Matrix<Scalar>::Zero(pv.value.rows(), pv.value.cols());
    for (Index h = 0; h < heads; ++h)
      for (Index i = 0; i < T; ++i) {
        const auto g = self.grad.row(i).segment(h * dv, dv);
        for (Index s = 0; s < S; ++s) {
          const Index j = layout.key(i, s);
          if (j < 0) continue;
          if (dp.size()) dp(h * T + i, s) = g.dot(pv.value.row(j).segment(h * dv, dv));
          if (dvm.size()) dvm.row(j).segment(h * dv, dv) += pp.value(h * T + i, s) * g;
        }
      }
    if (dp.size()) pp.accumulate(dp);
    if (dvm.size()) pv.accumulate(dvm);
  });
}

/// T×T bias matrix for one head: B[i][j] = rpe[clip(j − i) + ⌊w/2⌋, head].
template <typename Scalar>
Tensor<Scalar> relative_bias(const Tensor<Scalar>& rpe, Index length, Index head) {
  const Index radius = rpe.rows() / 2;
  Matrix<Scalar> out(length, length);
  for (Index i = 0; i < length; ++i)
    for (Index j = 0; j < length; ++j) out(i, j) = rpe.value()(std::clamp(j - i, -radius, radius) + radius, head);
  return make_result<Scalar>("relative_bias", std::move(out), {rpe.node()}, [radius, head](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (Index i = 0; i < self.grad.rows(); ++i)
      for (Index j = 0; j < self.grad.cols(); ++j) g(std::clamp(j - i, -radius, radius) + radius, head) += self.grad(i, j);
  });
}

/// Adds relative-position scalars to one head's dense pre-softmax scores.
template <typename Scalar>
Tensor<Scalar> positional_encoding_apply(const Tensor<Scalar>& scores, const Tensor<Scalar>& rpe, Index head) {
  detail::require(scores.rows() == scores.cols(), "positional_encoding_apply: scores must be square");
  return add(scores, relative_bias(rpe, scores.rows(), head));
}

namespace detail {
template <typename Scalar>
AttentionResult<Scalar> sparse_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                         AttentionPattern pattern, const AttentionConfig& cfg, const Tensor<Scalar>* rpe,
                                         const AttentionDropout& drop) {
  check_qkv(q, k, v, cfg.heads);
  check_rpe(rpe, cfg.window, cfg.heads);
  KeyLayout layout = KeyLayout::make(pattern, q.rows(), cfg.window);
  Tensor<Scalar> probs = attention_probs(q, k, layout, cfg.heads, rpe);
  Tensor<Scalar> used = dropout(probs, drop.p, drop.rng, drop.train);
  Tensor<Scalar> out = attention_apply(used, v, layout, cfg.heads);
  return {out, AttentionRecord<Scalar>{probs, cfg.heads, std::move(layout)}};
}
}  // namespace detail

/// Each query i attends to keys [max(i − ⌊w/2⌋, 0), min(i + ⌊w/2⌋, T − 1)].
template <typename Scalar>
AttentionResult<Scalar> local_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                        const AttentionConfig& cfg, const Tensor<Scalar>* rpe = nullptr,
                                        const AttentionDropout& drop = {}) {
  return detail::sparse_attention(q, k, v, AttentionPattern::Local, cfg, rpe, drop);
}

/// Each query attends to itself and keys at power-of-two distances.
template <typename Scalar>
AttentionResult<Scalar> logsparse_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                            const AttentionConfig& cfg, const Tensor<Scalar>* rpe = nullptr,
                                            const AttentionDropout& drop = {}) {
  return detail::sparse_attention(q, k, v, AttentionPattern::LogSparse, cfg, rpe, drop);
}

/// Dense attention, Softmax(QKᵀ/√d_k)V per head, built from primitive ops.
template <typename Scalar>
AttentionResult<Scalar> full_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                       const AttentionConfig& cfg, const Tensor<Scalar>* rpe = nullptr,
                                       const AttentionDropout& drop = {}) {
  detail::check_qkv(q, k, v, cfg.heads);
  detail::check_rpe(rpe, cfg.window, cfg.heads);
  const Index T = q.rows();
  const Index dk = q.cols() / cfg.heads;
  const Scalar inv = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));
  std::vector<Tensor<Scalar>> head_probs;
  for (Index h = 0; h < cfg.heads; ++h) {
    Tensor<Scalar> scores = scale(matmul(slice_cols(q, h * dk, dk), transpose(slice_cols(k, h * dk, dk))), inv);
    if (rpe) scores = positional_encoding_apply(scores, *rpe, h);
    head_probs.push_back(softmax_lastdim(scores));
  }
  Tensor<Scalar> probs = concat_rows(head_probs);
  Tensor<Scalar> used = dropout(probs, drop.p, drop.rng, drop.train);
  std::vector<Tensor<Scalar>> outs;
  for (Index h = 0; h < cfg.heads; ++h) outs.push_back(matmul(slice_rows(used, h * T, T), slice_cols(v, h * dk, dk)));
  return {concat_cols(outs), AttentionRecord<Scalar>{probs, cfg.heads, KeyLayout::make(AttentionPattern::Full, T, cfg.window)}};
}

template <typename Scalar>
AttentionResult<Scalar> attend(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                               const AttentionConfig& cfg, const Tensor<Scalar>* rpe, const AttentionDropout& drop) {
  switch (cfg.pattern) {
    case AttentionPattern::Full:
      return full_attention(q, k, v, cfg, rpe, drop);
    case AttentionPattern::LogSparse:
      return logsparse_attention(q, k, v, cfg, rpe, drop);
    case AttentionPattern::Local:
      break;
  }
  return local_attention(q, k, v, cfg, rpe, drop);
}

/// Retained probability entries for one attention layer over a sequence of
/// `length` frames.
inline Index attention_entry_count(AttentionPattern pattern, Index length, Index window, Index heads) {
  return heads * length * KeyLayout::make(pattern, length, window).slots();
}

/// Standard sinusoidal table, rows = positions.
template <typename Scalar>
Matrix<Scalar> sinusoidal_encoding(Index length, Index dim) {
  Matrix<Scalar> pe(length, dim);
  for (Index t = 0; t < length; ++t)
    for (Index c = 0; c < dim; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / static_cast<double>(dim));
      pe(t, c) = static_cast<Scalar>(c % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq));
    }
  return pe;
}

/// Parameter name of the relative-position table used by a layer.
/// `coder` is "enc" or "dec"; `layer` is 1-based; `scale` is the number of
/// halvings applied to the sequence the layer attends over.
inline std::string rpe_table_name(RpeShare share, int stage, const std::string& coder, int layer, int scale,
                                  bool split_coders = false) {
  switch (share) {
    case RpeShare::NoShare:
      return "stage" + std::to_string(stage) + "." + coder + std::to_string(layer) + ".rpe.w";
    case RpeShare::StageShared:
      return "stage" + std::to_string(stage) + ".rpe.w";
    case RpeShare::ScaleShared:
      break;
  }
  return split_coders ? "rpe." + coder + ".scale" + std::to_string(scale) + ".w" : "rpe.scale" + std::to_string(scale) + ".w";
}

std::string to_string(AttentionPattern p);
std::string to_string(PeMode p);
std::string to_string(RpeShare p);
AttentionPattern parse_attention_pattern(const std::string& s);
PeMode parse_pe_mode(const std::string& s);
RpeShare parse_rpe_share(const std::string& s);

}  // namespace tut
