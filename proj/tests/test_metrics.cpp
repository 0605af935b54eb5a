#include <map>

#include "doctest.h"
#include "tut/metrics.hpp"
#include "tut/rng.hpp"
#include "tut/tensor.hpp"

using namespace tut;

namespace {

std::vector<int> runs(const std::vector<int>& labels) {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (i == 0 || labels[i] != labels[i - 1]) out.push_back(labels[i]);
  return out;
}

// Recursive Levenshtein straight from the definition; fine for length <= 6.
int lev(const std::vector<int>& a, std::size_t i, const std::vector<int>& b, std::size_t j) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  if (a[i] == b[j]) return lev(a, i + 1, b, j + 1);
  return 1 + std::min({lev(a, i + 1, b, j), lev(a, i, b, j + 1), lev(a, i + 1, b, j + 1)});
}

double edit_ref(const std::vector<int>& pred, const std::vector<int>& gt) {
  const auto a = runs(pred), b = runs(gt);
  const auto denom = std::max(a.size(), b.size());
  return denom == 0 ? 100.0 : 100.0 * (1.0 - static_cast<double>(lev(a, 0, b, 0)) / static_cast<double>(denom));
}

struct Seg {
  int label;
  std::vector<bool> mask;
};

std::vector<Seg> frame_sets(const std::vector<int>& labels) {
  std::vector<Seg> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i == 0 || labels[i] != labels[i - 1]) out.push_back({labels[i], std::vector<bool>(labels.size(), false)});
    out.back().mask[i] = true;
  }
  return out;
}

// IoU from explicit frame sets, greedy over predictions in order.
double f1_ref(const std::vector<int>& pred, const std::vector<int>& gt, double tau) {
  const auto ps = frame_sets(pred), gs = frame_sets(gt);
  std::vector<bool> used(gs.size(), false);
  int tp = 0, fp = 0;
  for (const auto& p : ps) {
    double best = -1;
    std::size_t arg = gs.size();
    for (std::size_t g = 0; g < gs.size(); ++g) {
      if (used[g] || gs[g].label != p.label) continue;
      int inter = 0, uni = 0;
      for (std::size_t t = 0; t < pred.size(); ++t) {
        inter += p.mask[t] && gs[g].mask[t];
        uni += p.mask[t] || gs[g].mask[t];
      }
      const double iou = static_cast<double>(inter) / uni;
      if (iou > best) best = iou, arg = g;
    }
    if (arg < gs.size() && best >= tau) {
      ++tp;
      used[arg] = true;
    } else {
      ++fp;
    }
  }
  const int fn = static_cast<int>(gs.size()) - tp;
  if (tp == 0) return 0.0;
  const double prec = static_cast<double>(tp) / (tp + fp), rec = static_cast<double>(tp) / (tp + fn);
  return 100.0 * 2 * prec * rec / (prec + rec);
}

std::vector<int> random_labels(CounterRng& rng, std::size_t len) {
  std::vector<int> out(len);
  for (auto& v : out) v = static_cast<int>(rng.uniform_int(0, 2));
  return out;
}

}  // namespace

TEST_CASE("segment extraction round trip") {
  const std::vector<int> labels{1, 1, 0, 2, 2, 2, 1};
  const auto segs = extract_segments(labels);
  REQUIRE(segs.size() == 4);
  CHECK(segs[1] == Segment{0, 2, 2});
  CHECK(segs[2] == Segment{2, 3, 5});
  CHECK(reconstruct_labels(segs) == labels);
  CHECK(extract_segments(std::vector<int>{}).empty());
}

TEST_CASE("edit and F1 agree with brute force on random short sequences") {
  CounterRng rng(31337);
  for (int rep = 0; rep < 10000; ++rep) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto pred = random_labels(rng, len), gt = random_labels(rng, len);
    REQUIRE(edit_score(pred, gt) == doctest::Approx(edit_ref(pred, gt)).epsilon(1e-12));
    for (double tau : {0.1, 0.25, 0.5, 0.75})
      REQUIRE(f1_overlap(pred, gt, tau) == doctest::Approx(f1_ref(pred, gt, tau)).epsilon(1e-12));
  }
}

TEST_CASE("hand-worked examples") {
  // gt: A A A B B B B C C C   pred: A A B B B B B B C C
  const std::vector<int> gt{0, 0, 0, 1, 1, 1, 1, 2, 2, 2};
  const std::vector<int> pred{0, 0, 1, 1, 1, 1, 1, 1, 2, 2};
  CHECK(frame_accuracy(pred, gt) == doctest::Approx(80.0));
  CHECK(edit_score(pred, gt) == doctest::Approx(100.0));
  // IoUs: A 2/3, B 4/6, C 2/3
  CHECK(f1_overlap(pred, gt, 0.5) == doctest::Approx(100.0));
  CHECK(f1_overlap(pred, gt, 0.7) == doctest::Approx(0.0));
  // over-segmentation: one spurious insert
  const std::vector<int> noisy{0, 0, 0, 1, 2, 1, 1, 2, 2, 2};
  CHECK(edit_score(noisy, gt) == doctest::Approx(100.0 * (1.0 - 2.0 / 5.0)));
  // pred segs A(0-2) B(3) C(4) B(5-6) C(7-9): A and C(7-9) match exactly; B(3)
  // has IoU 1/4 with B(3-6) and is consumed at tau .25, then B(5-6) finds nothing
  const auto c = f1_counts(noisy, gt, 0.25);
  CHECK(c.tp == 3);
  CHECK(c.fp == 2);
  CHECK(c.fn == 0);
  CHECK(c.f1() == doctest::Approx(100.0 * 2 * 0.6 / 1.6));
  CHECK_THROWS_AS(frame_accuracy(pred, std::vector<int>{0}), DimensionError);
  // IoUs 2/3, 1/2, 1
  const std::vector<int> g2{0, 0, 0, 1, 2}, p2{0, 0, 1, 1, 2};
  CHECK(f1_overlap(p2, g2, 0.5) == doctest::Approx(100.0));
  const auto c2 = f1_counts(p2, g2, 0.75);
  CHECK(c2.tp == 1);
  CHECK(c2.fp == 2);
  CHECK(c2.fn == 2);
  CHECK(c2.f1() == doctest::Approx(100.0 / 3));
}

TEST_CASE("identical sequences score 100") {
  CounterRng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    const auto l = random_labels(rng, static_cast<std::size_t>(rng.uniform_int(1, 40)));
    const auto r = evaluate(l, l, default_thresholds());
    CHECK(r.acc == 100.0);
    CHECK(r.edit == 100.0);
    for (const auto& [t, v] : r.f1) CHECK(v == 100.0);
  }
}

TEST_CASE("F1 does not increase with the overlap threshold") {
  CounterRng rng(6);
  for (int rep = 0; rep < 500; ++rep) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(1, 30));
    const auto pred = random_labels(rng, len), gt = random_labels(rng, len);
    double last = 101;
    for (double tau = 0.05; tau <= 1.0; tau += 0.05) {
      const double v = f1_overlap(pred, gt, tau);
      CHECK(v <= last + 1e-12);
      last = v;
    }
  }
}

TEST_CASE("ignored classes are dropped from segment metrics only") {
  const std::vector<int> gt{0, 0, 9, 9, 1, 1};
  const std::vector<int> pred{0, 0, 0, 0, 1, 1};
  const std::vector<int> ignore{9};
  CHECK(edit_score(pred, gt, ignore) == 100.0);
  CHECK(edit_score(pred, gt) < 100.0);
  const auto c = f1_counts(pred, gt, 0.5, ignore);
  CHECK(c.tp == 2);
  CHECK(c.fn == 0);
  CHECK(evaluate(pred, gt, default_thresholds(), ignore).acc == doctest::Approx(100.0 * 4 / 6));
}

TEST_CASE("corpus pooling") {
  std::vector<LabeledPrediction> videos{
      {"a", {0, 0, 1, 1}, {0, 0, 1, 1}},
      {"b", {0, 0, 0, 0, 0, 0}, {1, 1, 1, 0, 0, 0}},
  };
  const std::vector<double> thr{0.5};
  const auto pooled = evaluate_corpus(videos, thr);
  // frames: 4 + 3 hits of 10
  CHECK(pooled.acc == doctest::Approx(70.0));
  // edits: 100 and 50
  CHECK(pooled.edit == doctest::Approx(75.0));
  // a: tp 2; b: pred 0(0-5) vs gt 0(3-5) IoU .5 -> tp 1, fn 1. P = 3/3, R = 3/4
  CHECK(pooled.f1_at(0.5) == doctest::Approx(100.0 * 2 * 0.75 / 1.75));
  const auto mean = evaluate_corpus(videos, thr, {}, F1Pooling::PerVideoMean);
  CHECK(mean.f1_at(0.5) == doctest::Approx((100.0 + 100.0 * 2 * 0.5 / 1.5) / 2));
  CHECK_THROWS_AS(pooled.f1_at(0.25), std::out_of_range);
  const std::string csv = report_csv(pooled);
  CHECK(csv.rfind("metric,threshold,value\nf1,0.50,", 0) == 0);
}
