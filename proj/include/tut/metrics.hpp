#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tut {

/// A maximal run of one class; `start` and `end` are inclusive frame indices.
struct Segment {
  int label = 0;
  std::int64_t start = 0;
  std::int64_t end = 0;

  std::int64_t length() const { return end - start + 1; }
  bool operator==(const Segment&) const = default;
};

using SegmentLabeling = std::vector<Segment>;

SegmentLabeling extract_segments(std::span<const int> labels);
std::vector<int> reconstruct_labels(const SegmentLabeling& segments);

/// Percent of frames where prediction and ground truth agree.
double frame_accuracy(std::span<const int> pred, std::span<const int> gt);

/// 100·(1 − Levenshtein(S_pred, S_gt) / max(|S_pred|, |S_gt|)) over segment
/// class sequences with `ignored` classes removed. Both empty scores 100.
double edit_score(std::span<const int> pred, std::span<const int> gt, std::span<const int> ignored = {});

struct F1Counts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  F1Counts& operator+=(const F1Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  /// 2PR/(P+R) in percent; 0 when undefined.
  double f1() const;
};

/// Greedy segment matching in temporal order of predictions. A prediction is
/// a true positive when its best IoU against unmatched same-class ground-truth
/// segments reaches `threshold`; that segment is then consumed.
F1Counts f1_counts(std::span<const int> pred, std::span<const int> gt, double threshold, std::span<const int> ignored = {});
double f1_overlap(std::span<const int> pred, std::span<const int> gt, double threshold, std::span<const int> ignored = {});

inline const std::vector<double>& default_thresholds() {
  static const std::vector<double> t{0.10, 0.25, 0.50};
  return t;
}

struct EvalReport {
  double acc = 0.0;
  double edit = 0.0;
  std::vector<std::pair<double, double>> f1;  // (threshold, percent)
  std::int64_t frames = 0;

  double f1_at(double threshold) const;
};

EvalReport evaluate(std::span<const int> pred, std::span<const int> gt, std::span<const double> thresholds,
                    std::span<const int> ignored = {});

enum class F1Pooling { Pooled, PerVideoMean };

struct LabeledPrediction {
  std::string id;
  std::vector<int> pred;
  std::vector<int> gt;
};

/// Accuracy is pooled over frames, edit averaged over videos, F1 pooled over
/// TP/FP/FN counts unless `pooling` asks for the per-video mean.
EvalReport evaluate_corpus(const std::vector<LabeledPrediction>& videos, std::span<const double> thresholds,
                           std::span<const int> ignored = {}, F1Pooling pooling = F1Pooling::Pooled);

/// "metric,threshold,value" rows.
std::string report_csv(const EvalReport& report);
/// Aligned human-readable table.
std::string report_table(const EvalReport& report);

}  // namespace tut
