#include "tut/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "tut/tensor.hpp"

namespace tut {

namespace {

bool is_ignored(int label, std::span<const int> ignored) {
  return std::find(ignored.begin(), ignored.end(), label) != ignored.end();
}

SegmentLabeling kept_segments(std::span<const int> labels, std::span<const int> ignored) {
  SegmentLabeling out;
  for (const auto& s : extract_segments(labels))
    if (!is_ignored(s.label, ignored)) out.push_back(s);
  return out;
}

std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

SegmentLabeling extract_segments(std::span<const int> labels) {
  SegmentLabeling out;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const auto ti = static_cast<std::int64_t>(t);
    if (out.empty() || out.back().label != labels[t])
      out.push_back({labels[t], ti, ti});
    else
      out.back().end = ti;
  }
  return out;
}

std::vector<int> reconstruct_labels(const SegmentLabeling& segments) {
  std::vector<int> out;
  for (const auto& s : segments) out.insert(out.end(), static_cast<std::size_t>(s.length()), s.label);
  return out;
}

double frame_accuracy(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size())
    throw DimensionError("frame_accuracy: prediction has " + std::to_string(pred.size()) + " frames, ground truth " +
                         std::to_string(gt.size()));
  if (gt.empty()) return 100.0;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) hits += pred[t] == gt[t] ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gt.size());
}

double edit_score(std::span<const int> pred, std::span<const int> gt, std::span<const int> ignored) {
  std::vector<int> a, b;
  for (const auto& s : kept_segments(pred, ignored)) a.push_back(s.label);
  for (const auto& s : kept_segments(gt, ignored)) b.push_back(s.label);
  const std::size_t denom = std::max(a.size(), b.size());
  if (denom == 0) return 100.0;
  return 100.0 * (1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(denom));
}

double F1Counts::f1() const {
  const double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return p + r > 0.0 ? 100.0 * 2.0 * p * r / (p + r) : 0.0;
}

F1Counts f1_counts(std::span<const int> pred, std::span<const int> gt, double threshold, std::span<const int> ignored) {
  const auto ps = kept_segments(pred, ignored);
  const auto gs = kept_segments(gt, ignored);
  std::vector<bool> used(gs.size(), false);
  F1Counts c;
  for (const auto& p : ps) {
    double best = -1.0;
    std::size_t best_idx = gs.size();
    for (std::size_t g = 0; g < gs.size(); ++g) {
      if (used[g] || gs[g].label != p.label) continue;
      const auto inter = std::min(p.end, gs[g].end) - std::max(p.start, gs[g].start) + 1;
      const auto uni = std::max(p.end, gs[g].end) - std::min(p.start, gs[g].start) + 1;
      const double iou = inter > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
      if (iou > best) {
        best = iou;
        best_idx = g;
      }
    }
    if (best_idx < gs.size() && best >= threshold) {
      ++c.tp;
      used[best_idx] = true;
    } else {
      ++c.fp;
    }
  }
  c.fn = static_cast<std::int64_t>(gs.size()) - c.tp;
  return c;
}

double f1_overlap(std::span<const int> pred, std::span<const int> gt, double threshold, std::span<const int> ignored) {
  return f1_counts(pred, gt, threshold, ignored).f1();
}

double EvalReport::f1_at(double threshold) const {
  for (const auto& [t, v] : f1)
    if (std::abs(t - threshold) < 1e-9) return v;
  throw std::out_of_range("no F1 entry at threshold " + fmt(threshold, 2));
}

EvalReport evaluate(std::span<const int> pred, std::span<const int> gt, std::span<const double> thresholds,
                    std::span<const int> ignored) {
  EvalReport r;
  r.acc = frame_accuracy(pred, gt);
  r.edit = edit_score(pred, gt, ignored);
  for (double t : thresholds) r.f1.emplace_back(t, f1_overlap(pred, gt, t, ignored));
  r.frames = static_cast<std::int64_t>(gt.size());
  return r;
}

EvalReport evaluate_corpus(const std::vector<LabeledPrediction>& videos, std::span<const double> thresholds,
                           std::span<const int> ignored, F1Pooling pooling) {
  EvalReport r;
  if (videos.empty()) return r;
  std::int64_t hits = 0;
  std::vector<F1Counts> counts(thresholds.size());
  std::vector<double> f1_sum(thresholds.size(), 0.0);
  double edit_sum = 0.0;
  for (const auto& v : videos) {
    if (v.pred.size() != v.gt.size()) throw DimensionError("evaluate_corpus: length mismatch in video " + v.id);
    for (std::size_t t = 0; t < v.gt.size(); ++t) hits += v.pred[t] == v.gt[t] ? 1 : 0;
    r.frames += static_cast<std::int64_t>(v.gt.size());
    edit_sum += edit_score(v.pred, v.gt, ignored);
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      const auto c = f1_counts(v.pred, v.gt, thresholds[k], ignored);
      counts[k] += c;
      f1_sum[k] += c.f1();
    }
  }
  r.acc = r.frames > 0 ? 100.0 * static_cast<double>(hits) / static_cast<double>(r.frames) : 100.0;
  r.edit = edit_sum / static_cast<double>(videos.size());
  for (std::size_t k = 0; k < thresholds.size(); ++k)
    r.f1.emplace_back(thresholds[k], pooling == F1Pooling::Pooled ? counts[k].f1() : f1_sum[k] / static_cast<double>(videos.size()));
  return r;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "metric,threshold,value\n";
  for (const auto& [t, v] : report.f1) os << "f1," << fmt(t, 2) << "," << fmt(v, 4) << "\n";
  os << "edit,," << fmt(report.edit, 4) << "\n";
  os << "acc,," << fmt(report.acc, 4) << "\n";
  return os.str();
}

std::string report_table(const EvalReport& report) {
  std::ostringstream os;
  for (const auto& [t, v] : report.f1) os << "F1@" << fmt(100.0 * t, 0) << "\t" << fmt(v, 2) << "\n";
  os << "Edit\t" << fmt(report.edit, 2) << "\n";
  os << "Acc\t" << fmt(report.acc, 2) << "\n";
  return os.str();
}

}  // namespace tut
