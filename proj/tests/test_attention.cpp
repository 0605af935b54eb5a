#include <algorithm>
#include <set>

#include "doctest.h"
#include "support.hpp"
#include "tut/attention.hpp"

using namespace tut;
using namespace tut::testing;
using T = Tensor<double>;

namespace {

// Plain-loop masked attention: softmax over allowed keys of q·k/√d_k + bias.
Matrix<double> brute_attention(const Matrix<double>& q, const Matrix<double>& k, const Matrix<double>& v, Index heads,
                               const std::function<bool(Index, Index)>& allowed, const Matrix<double>* rpe) {
  const Index n = q.rows(), dk = q.cols() / heads;
  Matrix<double> out = Matrix<double>::Zero(n, q.cols());
  for (Index h = 0; h < heads; ++h)
    for (Index i = 0; i < n; ++i) {
      std::vector<double> s(static_cast<std::size_t>(n), -1e300);
      double mx = -1e300;
      for (Index j = 0; j < n; ++j) {
        if (!allowed(i, j)) continue;
        double dot = 0;
        for (Index c = 0; c < dk; ++c) dot += q(i, h * dk + c) * k(j, h * dk + c);
        double val = dot / std::sqrt(static_cast<double>(dk));
        if (rpe) {
          const Index r = rpe->rows() / 2;
          val += (*rpe)(std::clamp(j - i, -r, r) + r, h);
        }
        s[static_cast<std::size_t>(j)] = val;
        mx = std::max(mx, val);
      }
      double z = 0;
      for (Index j = 0; j < n; ++j)
        if (allowed(i, j)) z += std::exp(s[static_cast<std::size_t>(j)] - mx);
      for (Index j = 0; j < n; ++j)
        if (allowed(i, j))
          for (Index c = 0; c < dk; ++c) out(i, h * dk + c) += std::exp(s[static_cast<std::size_t>(j)] - mx) / z * v(j, h * dk + c);
    }
  return out;
}

bool power_of_two(Index x) { return x > 0 && (x & (x - 1)) == 0; }

AttentionConfig make_cfg(Index window, Index heads) {
  AttentionConfig c;
  c.window = window;
  c.heads = heads;
  return c;
}

}  // namespace

TEST_CASE("local attention with a covering window equals full attention") {
  CounterRng rng(2024);
  for (int rep = 0; rep < 50; ++rep) {
    const Index len = rng.uniform_int(1, 32);
    const Index heads = rng.uniform_int(1, 3);
    const Index d = heads * rng.uniform_int(1, 4);
    const Index w = 2 * len - 1 + 2 * rng.uniform_int(0, 2);
    CAPTURE(len);
    CAPTURE(w);
    T q = T::constant(random_matrix(len, d, 10 * rep + 1, -2, 2));
    T k = T::constant(random_matrix(len, d, 10 * rep + 2, -2, 2));
    T v = T::constant(random_matrix(len, d, 10 * rep + 3));
    const auto cfg = make_cfg(w, heads);
    const Matrix<double> local = local_attention(q, k, v, cfg).output.value();
    const Matrix<double> full = full_attention(q, k, v, cfg).output.value();
    CHECK((local - full).cwiseAbs().maxCoeff() < 1e-6);
    T rpe = T::constant(random_matrix(w, heads, 10 * rep + 4));
    const Matrix<double> local_r = local_attention(q, k, v, cfg, &rpe).output.value();
    const Matrix<double> full_r = full_attention(q, k, v, cfg, &rpe).output.value();
    CHECK((local_r - full_r).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("windowed attention matches a masked brute-force reference") {
  for (Index len : {1, 2, 5, 12, 17}) {
    for (Index w : {1, 3, 7}) {
      const Index heads = 2, d = 6;
      Matrix<double> q = random_matrix(len, d, 100 + len), k = random_matrix(len, d, 200 + w), v = random_matrix(len, d, 300);
      Matrix<double> rpe = random_matrix(w, heads, 400 + w);
      T tq = T::constant(q), tk = T::constant(k), tv = T::constant(v), tr = T::constant(rpe);
      const Index r = w / 2;
      const Matrix<double> expect = brute_attention(q, k, v, heads, [&](Index i, Index j) { return std::abs(i - j) <= r; }, &rpe);
      const Matrix<double> got = local_attention(tq, tk, tv, make_cfg(w, heads), &tr).output.value();
      CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("logsparse attention matches a masked brute-force reference") {
  for (Index len : {1, 3, 8, 13, 33}) {
    const Index heads = 2, d = 4;
    Matrix<double> q = random_matrix(len, d, 500 + len), k = random_matrix(len, d, 600), v = random_matrix(len, d, 700);
    Matrix<double> rpe = random_matrix(5, heads, 800);
    T tq = T::constant(q), tk = T::constant(k), tv = T::constant(v), tr = T::constant(rpe);
    auto allowed = [](Index i, Index j) { return i == j || power_of_two(std::abs(i - j)); };
    const Matrix<double> expect = brute_attention(q, k, v, heads, allowed, &rpe);
    const Matrix<double> got = logsparse_attention(tq, tk, tv, make_cfg(5, heads), &tr).output.value();
    CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("logsparse key sets equal exhaustive power-of-two enumeration") {
  for (Index len = 1; len <= 64; ++len)
    for (Index i = 0; i < len; ++i) {
      std::vector<Index> expect;
      for (Index j = 0; j < len; ++j)
        if (j == i || power_of_two(std::abs(j - i))) expect.push_back(j);
      REQUIRE(logsparse_keys(len, i) == expect);
    }
}

TEST_CASE("attention probabilities are distributions over valid keys") {
  const Index len = 10, heads = 2;
  T q = T::constant(random_matrix(len, 4, 1)), k = T::constant(random_matrix(len, 4, 2));
  for (auto pattern : {AttentionPattern::Local, AttentionPattern::LogSparse}) {
    const KeyLayout layout = KeyLayout::make(pattern, len, 5);
    const Matrix<double> p = attention_probs(q, k, layout, heads, static_cast<const T*>(nullptr)).value();
    for (Index h = 0; h < heads; ++h)
      for (Index i = 0; i < len; ++i) {
        CHECK(p.row(h * len + i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (Index s = 0; s < layout.slots(); ++s)
          if (layout.key(i, s) < 0) CHECK(p(h * len + i, s) == 0.0);
      }
  }
}

TEST_CASE("window edges: query 0 sees only keys 0..radius") {
  const Index len = 8;
  T q = T::constant(random_matrix(len, 2, 3)), k = T::constant(random_matrix(len, 2, 4));
  const KeyLayout layout = KeyLayout::make(AttentionPattern::Local, len, 5);
  CHECK(layout.valid_count(0) == 3);
  CHECK(layout.valid_count(3) == 5);
  CHECK(layout.valid_count(len - 1) == 3);
  const Matrix<double> p = attention_probs(q, k, layout, 1, static_cast<const T*>(nullptr)).value();
  CHECK(p(0, 0) == 0.0);
  CHECK(p(0, 1) == 0.0);
}

TEST_CASE("constant keys and values give constant output rows") {
  const Index len = 9, d = 4;
  Matrix<double> row = random_matrix(1, d, 9);
  T q = T::constant(random_matrix(len, d, 8));
  T kv = T::constant(row.replicate(len, 1));
  for (auto pattern : {AttentionPattern::Local, AttentionPattern::LogSparse, AttentionPattern::Full}) {
    auto cfg = make_cfg(3, 2);
    cfg.pattern = pattern;
    const Matrix<double> out = attend(q, kv, kv, cfg, static_cast<const T*>(nullptr), {}).output.value();
    CHECK((out - row.replicate(len, 1)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("retained entry counts follow the slot layouts") {
  CHECK(attention_entry_count(AttentionPattern::Full, 1024, 51, 4) == 4 * 1024 * 1024);
  CHECK(attention_entry_count(AttentionPattern::Local, 1024, 51, 4) == 4 * 1024 * 51);
  // offsets 0, ±1, ±2, …, ±512
  CHECK(attention_entry_count(AttentionPattern::LogSparse, 1024, 51, 4) == 4 * 1024 * 21);
  CHECK(attention_entry_count(AttentionPattern::LogSparse, 1025, 51, 4) == 4 * 1025 * 23);
}

TEST_CASE("relative offsets: clipped for dense patterns, rejected for local") {
  const KeyLayout full = KeyLayout::make(AttentionPattern::Full, 20, 5);
  CHECK(full.rpe_row(10, 10) == 2);
  CHECK(full.rpe_row(10, 19) == 4);
  CHECK(full.rpe_row(10, 0) == 0);
  const KeyLayout local = KeyLayout::make(AttentionPattern::Local, 20, 5);
  CHECK(local.rpe_row(10, 8) == 0);
  CHECK_THROWS_AS(local.rpe_row(10, 13), std::logic_error);
}

TEST_CASE("relative position table names per sharing mode") {
  CHECK(rpe_table_name(RpeShare::NoShare, 1, "enc", 2, 2) == "stage1.enc2.rpe.w");
  CHECK(rpe_table_name(RpeShare::StageShared, 1, "dec", 3, 2) == "stage1.rpe.w");
  CHECK(rpe_table_name(RpeShare::ScaleShared, 0, "enc", 2, 2) == "rpe.scale2.w");
  CHECK(rpe_table_name(RpeShare::ScaleShared, 3, "dec", 3, 2) == "rpe.scale2.w");
  CHECK(rpe_table_name(RpeShare::ScaleShared, 3, "dec", 3, 2, true) == "rpe.dec.scale2.w");
}

TEST_CASE("attention config validation") {
  CHECK_THROWS_AS(make_cfg(4, 2).validate(8), ConfigError);
  CHECK_THROWS_AS(make_cfg(5, 3).validate(8), ConfigError);
  CHECK_NOTHROW(make_cfg(5, 4).validate(8));
  CHECK(parse_attention_pattern("log-sparse") == AttentionPattern::LogSparse);
  CHECK(parse_pe_mode("abs_sinusoidal") == PeMode::AbsSinusoidal);
  CHECK(parse_rpe_share("ScaleShared") == RpeShare::ScaleShared);
  CHECK_THROWS_AS(parse_attention_pattern("dilated"), ConfigError);
}

TEST_CASE("attention dropout leaves the retained record untouched") {
  const Index len = 12;
  T q = T::constant(random_matrix(len, 4, 1)), k = T::constant(random_matrix(len, 4, 2)), v = T::constant(random_matrix(len, 4, 3));
  const auto cfg = make_cfg(5, 2);
  const auto plain = local_attention(q, k, v, cfg);
  const auto dropped = local_attention(q, k, v, cfg, static_cast<const T*>(nullptr), AttentionDropout{0.5, CounterRng(7), true});
  CHECK(plain.record.probs.value() == dropped.record.probs.value());
  CHECK(plain.output.value() != dropped.output.value());
}

TEST_CASE("sinusoidal table") {
  const Matrix<double> pe = sinusoidal_encoding<double>(4, 6);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(3, 0) == doctest::Approx(std::sin(3.0)));
  CHECK(pe(2, 3) == doctest::Approx(std::cos(2.0 * std::pow(10000.0, -2.0 / 6.0))));
}
