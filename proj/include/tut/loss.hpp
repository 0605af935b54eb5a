#pragma once

// Training objective per stage: CE + λ·T-MSE + β·BA, summed over stages.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tut/attention.hpp"
#include "tut/metrics.hpp"
#include "tut/net.hpp"
#include "tut/ops.hpp"

namespace tut {

/// Start frames open a segment, end frames close one, regardless of class.
struct BoundarySet {
  std::vector<Index> starts;
  std::vector<Index> ends;
};

BoundarySet derive_boundaries(std::span<const int> labels);

enum class PriorVariant { Start, End };
enum class BaDistance { KL, JS, L2, Wasserstein };

std::string to_string(BaDistance d);
BaDistance parse_ba_distance(const std::string& s);

struct LossWeights {
  double lambda = 0.15;
  double beta = 0.02;
  double theta = 4.0;
  BaDistance distance = BaDistance::KL;
  // Frame t−1 is a constant inside T-MSE; off gives the plain derivative.
  bool tmse_stop_gradient = true;

  void validate() const {
    if (lambda < 0.0 || beta < 0.0) throw ConfigError("loss weights must be non-negative");
    if (theta <= 0.0) throw ConfigError("truncation threshold must be positive");
  }
};

/// Idealized window distribution of a boundary frame, indexed by slot
/// (offset + ⌊w/2⌋). Start: uniform over offsets 0..⌊w/2⌋. End: uniform over
/// offsets −⌊w/2⌋..−1.
std::vector<double> prior(PriorVariant variant, Index window);

template <typename Scalar>
Tensor<Scalar> ce_loss(const Tensor<Scalar>& logits, std::span<const int> labels) {
  return cross_entropy_from_logits(logits, labels);
}

/// Per-pair clamped squared log-probability differences, (T−1)×C.
/// With `stop_gradient`, frame t−1 is a constant.
template <typename Scalar>
Tensor<Scalar> tmse_terms(const Tensor<Scalar>& logits, double theta, bool stop_gradient = true) {
  const Index T = logits.rows();
  Tensor<Scalar> logp = log_softmax_lastdim(logits);
  Tensor<Scalar> prev = slice_rows(logp, 0, T - 1);
  if (stop_gradient) prev = detach(prev);
  const Scalar th = static_cast<Scalar>(theta);
  return square(clamp(sub(slice_rows(logp, 1, T - 1), prev), -th, th));
}

template <typename Scalar>
Tensor<Scalar> tmse_loss(const Tensor<Scalar>& logits, double theta, bool stop_gradient = true) {
  if (logits.rows() < 2) return Tensor<Scalar>::scalar(Scalar(0));
  return mean(tmse_terms(logits, theta, stop_gradient));
}

/// Index of frame `t` (at `length` frames) after repeated ⌈·/2⌉ halving down
/// to `target_length` frames; -1 when the lengths are not related that way.
inline Index map_to_resolution(Index t, Index length, Index target_length) {
  while (length > target_length) {
    t /= 2;
    length = (length + 1) / 2;
  }
  return length == target_length ? t : -1;
}

/// Window distribution of frame `t`: the record row restricted to
/// [t − ⌊w/2⌋, t + ⌊w/2⌋], averaged over heads and renormalized. Empty when
/// the window is clipped by a sequence edge or the pattern does not cover it.
template <typename Scalar>
std::optional<RowVector<Scalar>> extract_lad(const AttentionRecord<Scalar>& record, Index t, Index window) {
  const Index r = window / 2;
  const Index L = record.length();
  if (t < r || t > L - 1 - r) return std::nullopt;
  if (record.layout.pattern == AttentionPattern::LogSparse) return std::nullopt;
  if (record.layout.pattern == AttentionPattern::Local && record.layout.radius != r) return std::nullopt;
  RowVector<Scalar> acc = RowVector<Scalar>::Zero(window);
  for (Index h = 0; h < record.heads; ++h) {
    const RowVector<Scalar> row = record.row(h, t);
    acc += record.layout.pattern == AttentionPattern::Full ? RowVector<Scalar>(row.segment(t - r, window)) : row;
  }
  return RowVector<Scalar>(acc / acc.sum());
}

/// Differentiable batch of window distributions for frames that already lie
/// in the full-window range. Rows follow `frames`.
template <typename Scalar>
Tensor<Scalar> lad_rows(const AttentionRecord<Scalar>& record, const std::vector<Index>& frames, Index window) {
  const Index r = window / 2;
  const Index L = record.length();
  Tensor<Scalar> total;
  for (Index h = 0; h < record.heads; ++h) {
    std::vector<Index> rows;
    for (Index t : frames) rows.push_back(h * L + t);
    Tensor<Scalar> part = gather_rows(record.probs, rows);
    if (record.layout.pattern == AttentionPattern::Full) {
      std::vector<Tensor<Scalar>> pieces;
      for (std::size_t k = 0; k < frames.size(); ++k)
        pieces.push_back(slice_cols(slice_rows(part, static_cast<Index>(k), 1), frames[k] - r, window));
      part = concat_rows(pieces);
    }
    total = total.defined() ? add(total, part) : part;
  }
  return normalize_rows(total);
}

/// Σ over rows of distance(target_row, dist_row).
template <typename Scalar>
Tensor<Scalar> distribution_distance(const Matrix<Scalar>& target, const Tensor<Scalar>& dist, BaDistance metric) {
  Tensor<Scalar> p = Tensor<Scalar>::constant(target);
  switch (metric) {
    case BaDistance::KL:
      return kl_from_probs(p, dist);
    case BaDistance::JS: {
      Tensor<Scalar> m = scale(add(p, dist), Scalar(0.5));
      return scale(add(kl_from_probs(p, m), kl_from_probs(dist, m)), Scalar(0.5));
    }
    case BaDistance::L2:
      return sum(square(sub(p, dist)));
    case BaDistance::Wasserstein:
      return sum(abs(cumsum_lastdim(sub(p, dist))));
  }
  throw std::logic_error("unknown distance");
}

/// Boundary frames of a `video_length` sequence mapped to the record's
/// resolution, keeping only those with a full window. Duplicates collapse.
struct MappedBoundaries {
  std::vector<Index> starts;
  std::vector<Index> ends;
  bool empty() const { return starts.empty() && ends.empty(); }
};

MappedBoundaries map_boundaries(const BoundarySet& b, Index video_length, Index record_length, Index window);

/// (1/T)·Σ distance(prior_t, LAD_t) over in-range boundary frames of one record.
template <typename Scalar>
Tensor<Scalar> ba_loss_record(const AttentionRecord<Scalar>& record, const BoundarySet& boundaries, Index video_length,
                              Index window, BaDistance metric) {
  if (!record.probs.defined() || record.layout.pattern == AttentionPattern::LogSparse || window < 3)
    return Tensor<Scalar>::scalar(Scalar(0));
  const MappedBoundaries mb = map_boundaries(boundaries, video_length, record.length(), window);
  if (mb.empty()) return Tensor<Scalar>::scalar(Scalar(0));
  std::vector<Index> frames = mb.starts;
  frames.insert(frames.end(), mb.ends.begin(), mb.ends.end());
  Matrix<Scalar> target(static_cast<Index>(frames.size()), window);
  const auto ps = prior(PriorVariant::Start, window);
  const auto pe = prior(PriorVariant::End, window);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& src = k < mb.starts.size() ? ps : pe;
    for (Index j = 0; j < window; ++j) target(static_cast<Index>(k), j) = static_cast<Scalar>(src[static_cast<std::size_t>(j)]);
  }
  Tensor<Scalar> d = lad_rows(record, frames, window);
  return scale(distribution_distance(target, d, metric), Scalar(1) / static_cast<Scalar>(video_length));
}

/// BA loss of one stage: first encoder layer plus last decoder layer.
template <typename Scalar>
Tensor<Scalar> ba_loss(const StageResult<Scalar>& stage, const BoundarySet& boundaries, Index window, BaDistance metric) {
  const Index T = stage.logits.rows();
  return add(ba_loss_record(stage.encoder_first, boundaries, T, window, metric),
             ba_loss_record(stage.decoder_last, boundaries, T, window, metric));
}

/// Mean KL(prior‖LAD) over in-range boundary frames of one record; NaN when
/// no boundary frame has a full window.
template <typename Scalar>
double boundary_kl_mean(const AttentionRecord<Scalar>& record, const BoundarySet& boundaries, Index video_length, Index window) {
  const MappedBoundaries mb = map_boundaries(boundaries, video_length, record.length(), window);
  const auto ps = prior(PriorVariant::Start, window);
  const auto pe = prior(PriorVariant::End, window);
  double total = 0.0;
  int n = 0;
  auto accumulate = [&](const std::vector<Index>& frames, const std::vector<double>& p) {
    for (Index t : frames) {
      auto lad = extract_lad(record, t, window);
      if (!lad) continue;
      for (Index j = 0; j < window; ++j)
        if (p[static_cast<std::size_t>(j)] > 0.0)
          total += p[static_cast<std::size_t>(j)] * (std::log(p[static_cast<std::size_t>(j)]) - std::log(static_cast<double>((*lad)(j))));
      ++n;
    }
  };
  accumulate(mb.starts, ps);
  accumulate(mb.ends, pe);
  return n > 0 ? total / n : std::nan("");
}

template <typename Scalar>
struct LossBreakdown {
  Tensor<Scalar> total;
  double ce = 0.0;
  double tmse = 0.0;
  double ba = 0.0;
  std::vector<double> stage_totals;
};

/// Σ_s (CE + λ·T-MSE + β·BA).
template <typename Scalar>
LossBreakdown<Scalar> total_loss(const StageOutputs<Scalar>& outputs, std::span<const int> labels, const LossWeights& w,
                                 Index window) {
  LossBreakdown<Scalar> out;
  const BoundarySet boundaries = derive_boundaries(labels);
  for (const auto& stage : outputs.stages) {
    Tensor<Scalar> ce = ce_loss(stage.logits, labels);
    Tensor<Scalar> tm = tmse_loss(stage.logits, w.theta, w.tmse_stop_gradient);
    Tensor<Scalar> st = add(ce, scale(tm, static_cast<Scalar>(w.lambda)));
    out.ce += static_cast<double>(ce.item());
    out.tmse += static_cast<double>(tm.item());
    if (w.beta > 0.0) {
      Tensor<Scalar> ba = ba_loss(stage, boundaries, window, w.distance);
      out.ba += static_cast<double>(ba.item());
      st = add(st, scale(ba, static_cast<Scalar>(w.beta)));
    }
    out.stage_totals.push_back(static_cast<double>(st.item()));
    out.total = out.total.defined() ? add(out.total, st) : st;
  }
  return out;
}

}  // namespace tut
