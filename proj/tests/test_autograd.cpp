#include "doctest.h"
#include "support.hpp"
#include "tut/attention.hpp"
#include "tut/net.hpp"

using namespace tut;
using namespace tut::testing;
using T = Tensor<double>;

namespace {

constexpr double kTol = 1e-4;

T param(Index r, Index c, std::uint64_t seed) { return T::parameter(random_matrix(r, c, seed)); }

void check(const std::vector<T>& in, const std::function<T()>& f) {
  const GradReport rep = gradcheck(in, f);
  CHECK(rep.max_rel < kTol);
}

}  // namespace

TEST_CASE("elementwise and linear algebra gradients") {
  T a = param(3, 4, 1), b = param(3, 4, 2), w = param(4, 5, 3), row = param(1, 4, 4);
  SUBCASE("matmul") { check({a, w}, [&] { return probe(matmul(a, w)); }); }
  SUBCASE("transpose") { check({a}, [&] { return probe(transpose(a)); }); }
  SUBCASE("add/sub/mul") {
    check({a, b}, [&] { return probe(add(a, b)); });
    check({a, b}, [&] { return probe(sub(a, b)); });
    check({a, b}, [&] { return probe(mul(a, b)); });
  }
  SUBCASE("scale") { check({a}, [&] { return probe(scale(a, 2.5)); }); }
  SUBCASE("add_row") { check({a, row}, [&] { return probe(add_row(a, row)); }); }
  SUBCASE("linear") {
    T bias = param(1, 5, 5);
    check({a, w, bias}, [&] { return probe(linear(a, w, bias)); });
  }
  SUBCASE("sum and mean") {
    check({a}, [&] { return scale(sum(a), 1.7); });
    check({a}, [&] { return scale(mean(square(a)), 3.0); });
  }
  SUBCASE("shared subexpression accumulates") {
    check({a}, [&] {
      T s = square(a);
      return probe(add(mul(s, a), s));
    });
  }
}

TEST_CASE("piecewise gradients away from kinks") {
  T a = T::parameter(away_from_zero(4, 3, 11));
  SUBCASE("relu") { check({a}, [&] { return probe(relu(a)); }); }
  SUBCASE("abs") { check({a}, [&] { return probe(abs(a)); }); }
  SUBCASE("square") { check({a}, [&] { return probe(square(a)); }); }
  SUBCASE("clamp") {
    // bounds sit between sample values; no entry lies within h of either
    Matrix<double> m(2, 3);
    m << -2.0, -0.4, 0.1, 0.7, 1.9, -0.9;
    T x = T::parameter(m);
    check({x}, [&] { return probe(clamp(x, -1.0, 1.0)); });
  }
}

TEST_CASE("softmax family gradients") {
  T a = param(5, 4, 21);
  SUBCASE("softmax") { check({a}, [&] { return probe(softmax_lastdim(a)); }); }
  SUBCASE("log_softmax") { check({a}, [&] { return probe(log_softmax_lastdim(a)); }); }
  SUBCASE("cross entropy") {
    const std::vector<int> labels{0, 3, 1, 1, 2};
    check({a}, [&] { return cross_entropy_from_logits(a, labels); });
  }
  SUBCASE("kl in both arguments") {
    T p = T::parameter(random_probs(3, 5, 22));
    T q = T::parameter(random_probs(3, 5, 23));
    check({p, q}, [&] { return kl_from_probs(p, q); });
  }
  SUBCASE("normalize_rows") {
    T x = T::parameter(random_matrix(3, 4, 24, 0.2, 1.0));
    check({x}, [&] { return probe(normalize_rows(x)); });
  }
  SUBCASE("cumsum") { check({a}, [&] { return probe(cumsum_lastdim(a)); }); }
}

TEST_CASE("instance norm gradients") {
  T x = param(7, 3, 31);
  T gain = T::parameter(random_matrix(1, 3, 32, 0.5, 1.5));
  T bias = param(1, 3, 33);
  check({x, gain, bias}, [&] { return probe(instance_norm_temporal(x, gain, bias, 1e-5)); });
}

TEST_CASE("dropout gradient uses the forward mask") {
  T x = param(6, 4, 41);
  const CounterRng rng(1234);
  check({x}, [&] { return probe(dropout(x, 0.3, rng, true)); });
}

TEST_CASE("row and column plumbing gradients") {
  T x = param(5, 6, 51);
  SUBCASE("gather with repeats") { check({x}, [&] { return probe(gather_rows(x, {4, 0, 0, 2})); }); }
  SUBCASE("scatter_add") { check({x}, [&] { return probe(scatter_add_rows(x, {1, 0, 1, 3, 0}, 4)); }); }
  SUBCASE("slices") {
    check({x}, [&] { return probe(slice_cols(x, 2, 3)); });
    check({x}, [&] { return probe(slice_rows(x, 1, 3)); });
  }
  SUBCASE("concat") {
    T y = param(5, 2, 52), z = param(2, 6, 53);
    check({x, y}, [&] { return probe(concat_cols(std::vector<T>{x, y})); });
    check({x, z}, [&] { return probe(concat_rows(std::vector<T>{x, z})); });
  }
  SUBCASE("nearest resampling") {
    check({x}, [&] { return probe(downsample_nearest(x)); });
    check({x}, [&] { return probe(upsample_nearest(x, 9)); });
    check({x}, [&] { return probe(upsample_nearest(x, 10)); });
  }
}

TEST_CASE("upsample gradient counts source rows") {
  // d Σ up(x) / dx_k = number of output rows copied from row k
  T x = param(3, 2, 61);
  sum(upsample_nearest(x, 5)).backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(2.0));
  CHECK(x.grad()(1, 1) == doctest::Approx(2.0));
  CHECK(x.grad()(2, 0) == doctest::Approx(1.0));
}

TEST_CASE("detach blocks the gradient") {
  // Σ W ⊙ (stop(x²) + x) has gradient exactly W
  T x = param(3, 3, 71);
  probe(add(detach(square(x)), x), 5).backward();
  CHECK((x.grad() - random_matrix(3, 3, 5)).cwiseAbs().maxCoeff() < 1e-15);
  x.zero_grad();
  sum(detach(square(x))).backward();
  CHECK((!x.has_grad() || x.grad().isZero()));
}

TEST_CASE("attention kernel gradients") {
  const Index len = 9, d = 4, heads = 2;
  T q = param(len, d, 81), k = param(len, d, 82), v = param(len, d, 83);
  T rpe = param(5, heads, 84);
  for (auto pattern : {AttentionPattern::Local, AttentionPattern::LogSparse}) {
    CAPTURE(to_string(pattern));
    const KeyLayout layout = KeyLayout::make(pattern, len, 5);
    check({q, k, rpe}, [&] { return probe(attention_probs(q, k, layout, heads, &rpe)); });
    T p = T::parameter(random_probs(heads * len, layout.slots(), 85));
    check({p, v}, [&] { return probe(attention_apply(p, v, layout, heads)); });
  }
  SUBCASE("relative bias and dense attention") {
    T scores = param(len, len, 86);
    check({scores, rpe}, [&] { return probe(positional_encoding_apply(scores, rpe, 1)); });
    AttentionConfig cfg;
    cfg.window = 5;
    cfg.heads = heads;
    check({q, k, v, rpe}, [&] { return probe(full_attention(q, k, v, cfg, &rpe).output); });
  }
  SUBCASE("local attention end to end") {
    AttentionConfig cfg;
    cfg.window = 3;
    cfg.heads = heads;
    T table = param(3, heads, 87);
    check({q, k, v, table}, [&] { return probe(local_attention(q, k, v, cfg, &table).output); });
  }
}
