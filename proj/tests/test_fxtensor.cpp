// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fixnet/fxtensor.hpp"
#include "fixnet/parallel.hpp"
#include "oracle.hpp"

using namespace fixnet;
using fxp::Draw;
using fxp::Dyadic;
using fxp::FxFormat;
using fxp::Rational;
using fxp::RoundingMode;
using fxt::FxTensor;
using fxt::GemmExt;
using fxt::GemmSpec;
using fxt::KeyedDraws;

namespace {

FxFormat fmt(int il, int fl) { return FxFormat::make(il, fl); }

FxTensor random_tensor(std::vector<int64_t> shape, FxFormat f, fxp::SplitMix64& rng,
                       std::string tag) {
  FxTensor t = FxTensor::zeros(std::move(shape), f, std::move(tag));
  const uint64_t span =
      static_cast<uint64_t>(f.max_mantissa()) - static_cast<uint64_t>(f.min_mantissa()) + 1;
  for (auto& v : t.data)
    v = static_cast<int32_t>(f.min_mantissa() + static_cast<int64_t>(rng.next_below(span)));
  return t;
}

FxTensor vec_of(std::vector<int32_t> mants, FxFormat f, std::string tag) {
  FxTensor t = FxTensor::zeros({static_cast<int64_t>(mants.size())}, f, std::move(tag));
  t.data = std::move(mants);
  return t;
}

}  // namespace

TEST_CASE("inner_product: tiny sums below eps/2 round to zero (nearest)") {
  FxFormat f = fmt(2, 14);
  FxTensor a = vec_of({1, 1, 1}, f, "a");  // values = eps each
  GemmSpec spec{f, RoundingMode::Nearest};
  KeyedDraws src(1, 0);
  auto r = fxt::inner_product(a, a, spec, src);
  CHECK(r.mantissa == 0);  // z = 3*2^-28 < eps/2
}

TEST_CASE("inner_product: stochastic keeps the sum alive with P = 3*2^-14") {
  FxFormat f = fmt(2, 14);
  FxTensor a = vec_of({1, 1, 1}, f, "a");
  GemmSpec spec{f, RoundingMode::Stochastic};
  const int n = 1'000'000;
  int64_t ups = 0;
  for (int i = 0; i < n; ++i) {
    KeyedDraws src(55, static_cast<uint64_t>(i));
    ups += fxt::inner_product(a, a, spec, src).mantissa == 1;
  }
  const double p = 3.0 * std::pow(2.0, -14);
  const double se = std::sqrt(p * (1 - p) * n);
  CHECK(std::abs(static_cast<double>(ups) - p * n) <= 4.0 * se);
}

TEST_CASE("inner_product: identity vector passes a representable value through") {
  FxFormat f = fmt(4, 12);
  FxTensor a = vec_of({1 << 12, 0, 0, 0}, f, "a");  // [1.0, 0, 0, 0]
  FxTensor b = vec_of({1234, -77, 4095, 9}, f, "b");
  KeyedDraws src(1, 0);
  auto r = fxt::inner_product(a, b, GemmSpec{f, RoundingMode::Nearest}, src);
  CHECK(r.mantissa == 1234);
}

TEST_CASE("inner_product: length and format mismatches error") {
  FxFormat f = fmt(4, 12);
  KeyedDraws src(1, 0);
  GemmSpec spec{f, RoundingMode::Nearest};
  FxTensor a = vec_of({1, 2}, f, "a");
  FxTensor b = vec_of({1, 2, 3}, f, "b");
  CHECK_THROWS_AS(fxt::inner_product(a, b, spec, src), fxt::ShapeError);
  FxTensor c = vec_of({1, 2}, fmt(2, 14), "c");
  CHECK_THROWS_AS(fxt::inner_product(a, c, spec, src), fxp::FormatError);
}

TEST_CASE("gemm: identity matrix reproduces B bit-for-bit") {
  FxFormat f = fmt(4, 12);
  fxp::SplitMix64 rng(2);
  FxTensor a = FxTensor::zeros({5, 5}, f, "I");
  for (int i = 0; i < 5; ++i) a.data[i * 5 + i] = 1 << 12;  // 1.0
  FxTensor b = random_tensor({5, 3}, f, rng, "B");
  KeyedDraws src(1, 0);
  FxTensor c = fxt::gemm(a, b, {f, RoundingMode::Nearest}, src, "C");
  CHECK(c.data == b.data);
}

TEST_CASE("gemm: equals the big-integer oracle bit-for-bit (7x5 . 5x3)") {
  FxFormat f = fmt(4, 12);
  fxp::SplitMix64 rng(3);
  FxTensor a = random_tensor({7, 5}, f, rng, "A");
  FxTensor b = random_tensor({5, 3}, f, rng, "B");
  for (auto mode : {RoundingMode::Nearest, RoundingMode::Stochastic}) {
    KeyedDraws src(77, 4);
    GemmSpec spec{f, mode};
    FxTensor c = fxt::gemm(a, b, spec, src, "C");
    auto want = oracle::gemm_mantissas(a, b, spec, {}, src, c.tag_hash);
    for (size_t i = 0; i < want.size(); ++i) CHECK(c.data[i] == want[i]);
  }
}

TEST_CASE("gemm: worst-case accumulator width bound holds (d = 64, saturated)") {
  FxFormat f = fmt(8, 8);  // wl = 16
  FxTensor a = FxTensor::zeros({1, 64}, f, "a");
  for (auto& v : a.data) v = static_cast<int32_t>(f.min_mantissa());
  KeyedDraws src(1, 0);
  FxTensor b = FxTensor::zeros({64, 1}, f, "b");
  for (auto& v : b.data) v = static_cast<int32_t>(f.min_mantissa());
  // Exact accumulator magnitude: d * 2^(2(wl-1)) fits ceil(log2 d) + 2 wl bits.
  oracle::BigInt z = oracle::BigInt(64) * (oracle::BigInt(1) << 30);
  CHECK(z < (oracle::BigInt(1) << (6 + 32)));
  GemmSpec spec{fmt(8, 8), RoundingMode::Nearest};
  FxTensor c = fxt::gemm(a, b, spec, src, "C");  // must not throw or overflow
  CHECK(c.data[0] == f.max_mantissa());          // huge positive sum saturates
}

TEST_CASE("gemm_bias: zero A passes requantized bias; saturation at the limit") {
  FxFormat f = fmt(4, 12);
  fxp::SplitMix64 rng(5);
  FxTensor a = FxTensor::zeros({3, 4}, f, "A");
  FxTensor b = random_tensor({4, 2}, f, rng, "B");
  FxTensor bias = vec_of({1111, -2222}, f, "bias");
  KeyedDraws src(9, 0);
  GemmSpec spec{f, RoundingMode::Nearest};
  FxTensor c = fxt::gemm_bias(a, b, bias, spec, src, "C");
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(c.data[i * 2 + 0] == 1111);
    CHECK(c.data[i * 2 + 1] == -2222);
  }

  // Random case matches the oracle.
  FxTensor a2 = random_tensor({4, 6}, f, rng, "A2");
  FxTensor b2 = random_tensor({6, 2}, f, rng, "B2");
  FxTensor bias2 = random_tensor({2}, f, rng, "bias2");
  for (auto mode : {RoundingMode::Nearest, RoundingMode::Stochastic}) {
    GemmSpec sp{f, mode};
    FxTensor c2 = fxt::gemm_bias(a2, b2, bias2, sp, src, "C2");
    oracle::GemmCase oc;
    oc.bias = &bias2;
    auto want = oracle::gemm_mantissas(a2, b2, sp, oc, src, c2.tag_hash);
    for (size_t i = 0; i < want.size(); ++i) CHECK(c2.data[i] == want[i]);
  }

  // Bias at the upper limit plus a positive product saturates at the limit.
  FxTensor ones = FxTensor::zeros({1, 2}, f, "ones");
  ones.data = {1 << 12, 1 << 12};
  FxTensor pos = FxTensor::zeros({2, 1}, f, "pos");
  pos.data = {1 << 12, 1 << 12};
  FxTensor blim = vec_of({static_cast<int32_t>(f.max_mantissa())}, f, "blim");
  FxTensor cs = fxt::gemm_bias(ones, pos, blim, spec, src, "CS");
  CHECK(cs.data[0] == f.max_mantissa());
}

TEST_CASE("oracle equivalence: 200 random shape/format/mode combinations") {
  fxp::SplitMix64 rng(123);
  for (int t = 0; t < 200; ++t) {
    const int il = 2 + static_cast<int>(rng.next_below(6));
    const int fl = 1 + static_cast<int>(rng.next_below(12));
    FxFormat f = fmt(il, fl);
    const int il2 = 2 + static_cast<int>(rng.next_below(6));
    const int fl2 = 1 + static_cast<int>(rng.next_below(12));
    FxFormat fo = fmt(il2, fl2);
    if (fo.wl() > 2 * f.wl()) fo = f;  // out format can never exceed the exact product
    auto mode = rng.next_below(2) ? RoundingMode::Stochastic : RoundingMode::Nearest;
    GemmSpec spec{fo, mode};
    KeyedDraws src(1000 + t, t);

    const int64_t l = 1 + static_cast<int64_t>(rng.next_below(8));
    const int64_t k = 1 + static_cast<int64_t>(rng.next_below(8));
    const int64_t m = 1 + static_cast<int64_t>(rng.next_below(8));
    FxTensor a = random_tensor({l, k}, f, rng, "A" + std::to_string(t));
    FxTensor b = random_tensor({k, m}, f, rng, "B" + std::to_string(t));

    const int which = static_cast<int>(rng.next_below(3));
    if (which == 0) {
      FxTensor c = fxt::gemm(a, b, spec, src, "C" + std::to_string(t));
      auto want = oracle::gemm_mantissas(a, b, spec, {}, src, c.tag_hash);
      REQUIRE(std::equal(want.begin(), want.end(), c.data.begin()));
    } else if (which == 1) {
      FxTensor bias = random_tensor({m}, f, rng, "bias" + std::to_string(t));
      FxTensor c = fxt::gemm_bias(a, b, bias, spec, src, "C" + std::to_string(t));
      oracle::GemmCase oc;
      oc.bias = &bias;
      auto want = oracle::gemm_mantissas(a, b, spec, oc, src, c.tag_hash);
      REQUIRE(std::equal(want.begin(), want.end(), c.data.begin()));
    } else {
      // conv2d: reinterpret the random dims as a small image problem.
      const int64_t n = 1 + static_cast<int64_t>(rng.next_below(2));
      const int64_t ch = 1 + static_cast<int64_t>(rng.next_below(2));
      const int64_t hw = 3 + static_cast<int64_t>(rng.next_below(4));
      const int kk = 1 + static_cast<int>(rng.next_below(3));
      const int pad = static_cast<int>(rng.next_below(2));
      const int64_t filters = 1 + static_cast<int64_t>(rng.next_below(3));
      if (hw + 2 * pad < kk) continue;
      FxTensor x = random_tensor({n, ch, hw, hw}, f, rng, "x" + std::to_string(t));
      FxTensor w = random_tensor({filters, ch, kk, kk}, f, rng, "w" + std::to_string(t));
      FxTensor bias = random_tensor({filters}, f, rng, "cb" + std::to_string(t));
      FxTensor y = fxt::conv2d(x, w, bias, 1, pad, spec, src, "y" + std::to_string(t));
      auto want = oracle::conv2d_mantissas(x, w, bias, 1, pad, spec, src,
                                           fxp::hash_tag("y" + std::to_string(t) + "/g"));
      REQUIRE(std::equal(want.begin(), want.end(), y.data.begin()));
    }
  }
}

TEST_CASE("gemm_ext: scale and addend (the weight-update path) match the oracle") {
  FxFormat f = fmt(6, 10);
  FxFormat fu = fmt(2, 14);
  fxp::SplitMix64 rng(9);
  FxTensor a = random_tensor({6, 4}, f, rng, "X");    // k x l layout for trans_a
  FxTensor b = random_tensor({6, 3}, f, rng, "D");
  FxTensor w = random_tensor({4, 3}, fu, rng, "W");
  for (auto mode : {RoundingMode::Nearest, RoundingMode::Stochastic}) {
    GemmSpec spec{fu, mode};
    GemmExt ext;
    ext.trans_a = true;
    ext.scale = Dyadic::from_rational(Rational(1, 100));
    ext.addend = &w;
    ext.addend_scale = Dyadic::from_double(0.0005);
    KeyedDraws src(31, 7);
    FxTensor c = fxt::gemm_ext(a, b, spec, ext, src, "dW");

    oracle::GemmCase oc;
    oc.trans_a = true;
    oc.scale = ext.scale.to_rational();
    oc.addend = &w;
    oc.coeff = ext.addend_scale.to_rational();
    auto want = oracle::gemm_mantissas(a, b, spec, oc, src, c.tag_hash);
    REQUIRE(std::equal(want.begin(), want.end(), c.data.begin()));
  }
}

TEST_CASE("im2col: hand-enumerated patches") {
  FxFormat f = fmt(4, 2);
  FxTensor x = FxTensor::zeros({1, 1, 2, 2}, f, "x");
  x.data = {1, 2, 3, 4};
  FxTensor c1 = fxt::im2col(x, 1, 1, 1, 0);
  CHECK(c1.shape == std::vector<int64_t>{1, 4});
  CHECK(c1.data == std::vector<int32_t>{1, 2, 3, 4});

  FxTensor y = FxTensor::zeros({1, 1, 3, 3}, f, "y");
  for (int i = 0; i < 9; ++i) y.data[i] = i + 1;
  FxTensor c2 = fxt::im2col(y, 2, 2, 1, 0);
  CHECK(c2.shape == std::vector<int64_t>{4, 4});
  // Rows are kernel positions (ki,kj); columns are output positions.
  CHECK(c2.data == std::vector<int32_t>{1, 2, 4, 5,   2, 3, 5, 6,
                                        4, 5, 7, 8,   5, 6, 8, 9});

  FxTensor c3 = fxt::im2col(x, 2, 2, 1, 1);  // 3x3 padded output
  CHECK(c3.shape == std::vector<int64_t>{4, 9});
  // Top-left patch sees only padding except its bottom-right corner.
  CHECK(c3.data[0 * 9 + 0] == 0);
  CHECK(c3.data[3 * 9 + 0] == 1);
  int zeros = 0;
  for (auto v : c3.data) zeros += (v == 0);
  CHECK(zeros == 36 - 16);  // 4 copies of the 2x2 image; the rest is the pad ring

  CHECK_THROWS_AS(fxt::im2col(y, 2, 2, 2, 0), fxt::ShapeError);  // non-integral dims
}

TEST_CASE("conv2d: delta kernel shifts the input") {
  FxFormat f = fmt(4, 8);
  fxp::SplitMix64 rng(11);
  FxTensor x = random_tensor({1, 1, 4, 4}, f, rng, "x");
  FxTensor w = FxTensor::zeros({1, 1, 3, 3}, f, "w");
  w.data[4] = 1 << 8;  // centered 1.0: identity under pad=1
  FxTensor bias = FxTensor::zeros({1}, f, "b");
  KeyedDraws src(1, 0);
  FxTensor y = fxt::conv2d(x, w, bias, 1, 1, {f, RoundingMode::Nearest}, src, "y");
  CHECK(y.data == x.data);
}

TEST_CASE("maxpool: ties break to the lowest flat index; floor-mode dims") {
  FxFormat f = fmt(4, 4);
  FxTensor x = FxTensor::zeros({1, 1, 4, 4}, f, "x");
  for (auto& v : x.data) v = 7;
  auto r = fxt::maxpool(x, 2, 2);
  CHECK(r.out.shape == std::vector<int64_t>{1, 1, 2, 2});
  for (auto v : r.out.data) CHECK(v == 7);
  CHECK(r.argmax == std::vector<int64_t>{0, 2, 8, 10});

  // 5x5 with window 2 stride 2: trailing row/col dropped.
  FxTensor y = FxTensor::zeros({1, 1, 5, 5}, f, "y");
  auto r2 = fxt::maxpool(y, 2, 2);
  CHECK(r2.out.shape == std::vector<int64_t>{1, 1, 2, 2});

  CHECK_THROWS_AS(fxt::maxpool(x, 5, 1), fxt::ShapeError);
}

TEST_CASE("relu zeroes negatives exactly") {
  FxFormat f = fmt(2, 14);
  FxTensor x = vec_of({-1, 1, 0, -32768, 32767}, f, "x");
  x.shape = {5};
  FxTensor y = fxt::relu(x);
  CHECK(y.data == std::vector<int32_t>{0, 1, 0, 0, 32767});
}

TEST_CASE("quantize: format change matches the scalar convert") {
  FxFormat from = fmt(2, 14), to = fmt(2, 8);
  // 0.30 is not representable; nearest multiple of 2^-8 is 77 * 2^-8.
  KeyedDraws src(1, 0);
  FxTensor x = fxt::from_doubles({1}, std::vector<double>{0.30}, from,
                                 RoundingMode::Nearest, src, "x");
  FxTensor y = fxt::quantize(x, to, RoundingMode::Nearest, src, "y");
  int64_t want = oracle::convert_mantissa(
      Rational(x.data[0], 1) * Rational::pow2(-14), to, RoundingMode::Nearest, Draw{});
  CHECK(y.data[0] == want);
  CHECK(y.data[0] == 77);
}

TEST_CASE("single rounding event per gemm output element") {
  fxp::set_rounding_counter_enabled(true);
  fxp::reset_rounding_event_count();
  FxFormat f = fmt(4, 12);
  fxp::SplitMix64 rng(31);
  FxTensor a = random_tensor({7, 9}, f, rng, "A");
  FxTensor b = random_tensor({9, 5}, f, rng, "B");
  FxTensor bias = random_tensor({5}, f, rng, "bias");
  KeyedDraws src(3, 0);
  fxt::gemm_bias(a, b, bias, {f, RoundingMode::Stochastic}, src, "C");
  CHECK(fxp::rounding_event_count() == 7 * 5);
  fxp::set_rounding_counter_enabled(false);
}

TEST_CASE("order independence: identical results for 1, 2 and 4 workers") {
  FxFormat f = fmt(6, 10);
  fxp::SplitMix64 rng(41);
  FxTensor a = random_tensor({33, 17}, f, rng, "A");
  FxTensor b = random_tensor({17, 29}, f, rng, "B");
  GemmSpec spec{f, RoundingMode::Stochastic};
  std::vector<std::vector<int32_t>> results;
  for (int workers : {1, 2, 4}) {
    util::set_parallel_threads(workers);
    KeyedDraws src(5, 1);
    results.push_back(fxt::gemm(a, b, spec, src, "C").data);
  }
  util::set_parallel_threads(0);
  CHECK(results[0] == results[1]);
  CHECK(results[0] == results[2]);
}

TEST_CASE("quantized relu outputs never exceed the format ceiling") {
  FxFormat wide = fmt(8, 8), narrow = fmt(2, 8);
  fxp::SplitMix64 rng(51);
  FxTensor x = random_tensor({64}, wide, rng, "x");
  KeyedDraws src(2, 0);
  FxTensor q = fxt::quantize(x, narrow, RoundingMode::Stochastic, src, "q");
  FxTensor y = fxt::relu(q);
  for (auto v : y.data) {
    CHECK(v <= narrow.max_mantissa());
    CHECK(v >= 0);
  }
}

TEST_CASE("wide chain: gemm_wide + convert_wide round once per element") {
  FxFormat f = fmt(6, 10);
  fxp::SplitMix64 rng(61);
  FxTensor a = random_tensor({4, 6}, f, rng, "A");
  FxTensor b = random_tensor({4, 5}, f, rng, "B");  // trans_a path: 6x4 . 4x5
  fxt::WideTensor wt = fxt::gemm_wide(a, b, true, false);
  CHECK(wt.shape == std::vector<int64_t>{6, 5});
  CHECK(wt.point == 20);
  KeyedDraws src(8, 2);
  FxTensor c = fxt::convert_wide(wt, f, RoundingMode::Stochastic, src, "C");
  oracle::GemmCase oc;
  oc.trans_a = true;
  auto want = oracle::gemm_mantissas(a, b, {f, RoundingMode::Stochastic}, oc, src, c.tag_hash);
  REQUIRE(std::equal(want.begin(), want.end(), c.data.begin()));
}

TEST_CASE("gemm shape errors") {
  FxFormat f = fmt(4, 12);
  fxp::SplitMix64 rng(71);
  FxTensor a = random_tensor({3, 4}, f, rng, "A");
  FxTensor b = random_tensor({5, 2}, f, rng, "B");
  KeyedDraws src(1, 0);
  CHECK_THROWS_AS(fxt::gemm(a, b, {f, RoundingMode::Nearest}, src, "C"), fxt::ShapeError);
  // Output wider than the exact product is rejected.
  FxTensor b2 = random_tensor({4, 2}, f, rng, "B2");
  CHECK_THROWS_AS(fxt::gemm(a, b2, {fmt(20, 14), RoundingMode::Nearest}, src, "C"),
                  fxp::FormatError);
}
