// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: runs every shipped criterion end to end and prints one
// PASS/FAIL line per criterion. Exit code 0 iff all selected criteria pass.
//
//   fixnet_acceptance [--cli PATH] [--work DIR] [--criterion N ...]
//
// Training criteria use synthetic datasets written in the standard MNIST /
// CIFAR-10 file formats (generated into the work directory on first use);
// point real data at the runs via the documented CLI instead for full-scale
// experiments.
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fixnet/data.hpp"
#include "fixnet/experiment.hpp"
#include "fixnet/fxtensor.hpp"
#include "fixnet/net.hpp"
#include "fixnet/sysarray.hpp"
#include "../oracle.hpp"

using namespace fixnet;
using fxp::Draw;
using fxp::FxFormat;
using fxp::Rational;
using fxp::RoundingMode;
using fxt::FxTensor;
using fxt::GemmSpec;
using fxt::KeyedDraws;

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string cli;
  fs::path work = "acceptance_work";
  std::vector<int> criteria;  // empty = all

  bool wants(int n) const {
    return criteria.empty() || std::find(criteria.begin(), criteria.end(), n) != criteria.end();
  }
};

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", v);
  return buf;
}

FxTensor random_tensor(std::vector<int64_t> shape, FxFormat f, fxp::SplitMix64& rng,
                       std::string tag) {
  FxTensor t = FxTensor::zeros(std::move(shape), f, std::move(tag));
  const uint64_t span =
      static_cast<uint64_t>(f.max_mantissa()) - static_cast<uint64_t>(f.min_mantissa()) + 1;
  for (auto& v : t.data)
    v = static_cast<int32_t>(f.min_mantissa() + static_cast<int64_t>(rng.next_below(span)));
  return t;
}

// ---------------------------------------------------------------------------
// Criterion 1: arithmetic property suite
// ---------------------------------------------------------------------------

bool check_unbiasedness(std::string& why) {
  const int kDraws = 100'000;
  fxp::SplitMix64 rng(7);
  int fmt_idx = 0;
  for (FxFormat f : {FxFormat::make(2, 14), FxFormat::make(4, 12), FxFormat::make(8, 8)}) {
    ++fmt_idx;
    for (int t = 0; t < 100; ++t) {
      const int extra = 20;
      int64_t span = (f.max_mantissa() - f.min_mantissa() - 1) << extra;
      __int128 num = ((__int128(f.min_mantissa()) + 1) << extra) +
                     static_cast<int64_t>(rng.next_below(span));
      const int64_t base = static_cast<int64_t>(num >> extra);
      const double p =
          static_cast<double>(static_cast<int64_t>(num & ((1 << extra) - 1))) / (1 << extra);
      int64_t ups = 0;
      const uint64_t tag = fxp::hash_tag("acc/unbias");
      for (int i = 0; i < kDraws; ++i) {
        int64_t m = fxp::convert_dyadic(
            num, f.fl + extra, f, RoundingMode::Stochastic,
            fxp::keyed_draw(fxp::RngKey{uint64_t(fmt_idx * 7919 + t), tag, uint64_t(i), 0}));
        if (m != base && m != base + 1) {
          why = "stochastic result left the bracketing grid points";
          return false;
        }
        ups += (m == base + 1);
      }
      const double se = std::sqrt(std::max(p * (1 - p), 1e-12) * kDraws);
      if (std::abs(static_cast<double>(ups) - p * kDraws) > 4.0 * se + 1.0) {
        why = "empirical mean beyond 4 standard errors in format " + f.str();
        return false;
      }
    }
  }
  return true;
}

bool check_nearest_properties(std::string& why) {
  // Midpoint-down tie: x = floor + eps/2 exactly.
  FxFormat f4 = FxFormat::make(4, 2);
  if (fxp::round_nearest(Rational::from_decimal("0.125"), f4) != Rational(0)) {
    why = "midpoint did not round down";
    return false;
  }
  fxp::SplitMix64 rng(3);
  for (int i = 0; i < 5000; ++i) {
    FxFormat f = FxFormat::make(2 + static_cast<int>(rng.next_below(6)),
                                1 + static_cast<int>(rng.next_below(12)));
    Rational x(static_cast<int64_t>(rng.next_below(1 << 22)) - (1 << 21), 1 << 12);
    Rational y(static_cast<int64_t>(rng.next_below(1 << 22)) - (1 << 21), 1 << 12);
    if (y < x) std::swap(x, y);
    // Monotonicity.
    if (fxp::convert(x, f).mantissa > fxp::convert(y, f).mantissa) {
      why = "nearest-mode convert is not monotone";
      return false;
    }
    // Nearest optimality.
    if (x > f.lower() && x < f.upper()) {
      Rational r = fxp::round_nearest(x, f);
      Rational d = r - x;
      if (d.is_negative()) d = -d;
      if (!(d <= f.epsilon() * Rational(1, 2))) {
        why = "nearest rounding farther than eps/2";
        return false;
      }
    }
    // Saturation totality, both modes.
    Rational huge = x * Rational(fxp::BigInt(1) << 90, 1);
    for (auto mode : {RoundingMode::Nearest, RoundingMode::Stochastic}) {
      auto s = fxp::convert(huge, f, mode, fxp::keyed_draw(fxp::RngKey{1, 2, uint64_t(i), 0}));
      if (s.mantissa < f.min_mantissa() || s.mantissa > f.max_mantissa()) {
        why = "convert left the format range";
        return false;
      }
    }
  }
  return true;
}

bool check_oracle_equivalence(std::string& why) {
  fxp::SplitMix64 rng(123);
  for (int t = 0; t < 200; ++t) {
    const int il = 2 + static_cast<int>(rng.next_below(6));
    const int fl = 1 + static_cast<int>(rng.next_below(12));
    FxFormat f = FxFormat::make(il, fl);
    FxFormat fo = f;
    auto mode = rng.next_below(2) ? RoundingMode::Stochastic : RoundingMode::Nearest;
    GemmSpec spec{fo, mode};
    KeyedDraws src(5000 + t, t);
    const int64_t l = 1 + static_cast<int64_t>(rng.next_below(8));
    const int64_t k = 1 + static_cast<int64_t>(rng.next_below(8));
    const int64_t m = 1 + static_cast<int64_t>(rng.next_below(8));
    FxTensor a = random_tensor({l, k}, f, rng, "A" + std::to_string(t));
    FxTensor b = random_tensor({k, m}, f, rng, "B" + std::to_string(t));
    const int which = static_cast<int>(rng.next_below(3));
    if (which == 0) {
      FxTensor c = fxt::gemm(a, b, spec, src, "C" + std::to_string(t));
      auto want = oracle::gemm_mantissas(a, b, spec, {}, src, c.tag_hash);
      if (!std::equal(want.begin(), want.end(), c.data.begin())) {
        why = "gemm differed from the big-integer oracle (case " + std::to_string(t) + ")";
        return false;
      }
    } else if (which == 1) {
      FxTensor bias = random_tensor({m}, f, rng, "bias" + std::to_string(t));
      FxTensor c = fxt::gemm_bias(a, b, bias, spec, src, "C" + std::to_string(t));
      oracle::GemmCase oc;
      oc.bias = &bias;
      auto want = oracle::gemm_mantissas(a, b, spec, oc, src, c.tag_hash);
      if (!std::equal(want.begin(), want.end(), c.data.begin())) {
        why = "gemm_bias differed from the big-integer oracle (case " + std::to_string(t) + ")";
        return false;
      }
    } else {
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
      if (!std::equal(want.begin(), want.end(), y.data.begin())) {
        why = "conv2d differed from the direct-summation oracle (case " + std::to_string(t) + ")";
        return false;
      }
    }
  }
  return true;
}

void criterion1() {
  std::string why;
  bool ok = check_unbiasedness(why) && check_nearest_properties(why) &&
            check_oracle_equivalence(why);
  report(1, ok,
         ok ? "arithmetic properties: unbiasedness, monotonicity, saturation, midpoint-down, "
              "200-case oracle equivalence"
            : "arithmetic properties: " + why);
}

// ---------------------------------------------------------------------------
// Criterion 2: float-mode finite-difference gradient check
// ---------------------------------------------------------------------------

void criterion2() {
  net::NetSpec spec;
  spec.in_c = 1;
  spec.in_h = 1;
  spec.in_w = 6;
  spec.classes = 4;
  spec.input_format = FxFormat::make(4, 12);
  auto fc = [&](int64_t in, int64_t out) {
    net::LayerSpec l;
    l.kind = net::LayerKind::FullyConnected;
    l.in = in;
    l.out = out;
    l.weight_format = FxFormat::make(4, 12);
    l.output_format = FxFormat::make(4, 12);
    return l;
  };
  net::LayerSpec relu;
  relu.kind = net::LayerKind::ReLU;
  net::LayerSpec sm;
  sm.kind = net::LayerKind::SoftmaxXent;
  spec.layers = {fc(6, 8), relu, fc(8, 7), relu, fc(7, 4), sm};

  net::RealNetState st = net::init_weights_real(spec, 11);
  for (auto& p : st.params) {
    if (!p.used) continue;
    for (auto& v : p.w.data) v *= 30.0;
    for (size_t i = 0; i < p.b.data.size(); ++i) p.b.data[i] = 0.05 * ((i % 3) - 1.0);
  }
  const int64_t batch = 5;
  fxt::RealTensor x = fxt::RealTensor::zeros({batch, 1, 1, 6}, "x");
  fxp::SplitMix64 rng(12);
  for (auto& v : x.data) v = rng.next_double();
  std::vector<int32_t> labels(batch);
  for (auto& v : labels) v = static_cast<int32_t>(rng.next_below(4));

  auto loss_of = [&]() {
    auto tr = net::forward_real(spec, st, x);
    double loss = 0;
    for (int64_t i = 0; i < batch; ++i)
      loss -= std::log(std::max(tr.probs[i * spec.classes + labels[i]], 1e-300));
    return loss / batch;
  };
  auto tr = net::forward_real(spec, st, x);
  auto g = net::backward_real(spec, st, tr, x, labels, 1.0 / batch, 0.0);

  const double h = 1e-3;
  double worst = 0;
  int checked = 0;
  for (size_t li = 0; li < st.params.size(); ++li) {
    if (!st.params[li].used) continue;
    for (int64_t i = 0; i < st.params[li].w.numel(); ++i) {
      double keep = st.params[li].w.data[i];
      st.params[li].w.data[i] = keep + h;
      double up = loss_of();
      st.params[li].w.data[i] = keep - h;
      double dn = loss_of();
      st.params[li].w.data[i] = keep;
      double numeric = (up - dn) / (2 * h);
      double analytic = g.grads[li].w.data[i];
      double rel = std::abs(analytic - numeric) /
                   std::max({std::abs(analytic), std::abs(numeric), 1e-4});
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "gradient check: max relative error %.2e over %d parameters (tolerance 1e-4)",
                worst, checked);
  report(2, worst < 1e-4 && checked > 100, buf);
}

// ---------------------------------------------------------------------------
// Training criteria (3, 4, 5)
// ---------------------------------------------------------------------------

void ensure_dataset(const fs::path& dir, const char* kind, int64_t train_n, int64_t test_n,
                    uint64_t seed) {
  const char* probe = std::string(kind) == "mnist" ? "train-images-idx3-ubyte" : "data_batch_1.bin";
  if (fs::exists(dir / probe)) return;
  std::printf("  [generating %s-format dataset: %lld train / %lld test]\n", kind,
              static_cast<long long>(train_n), static_cast<long long>(test_n));
  std::fflush(stdout);
  if (std::string(kind) == "mnist")
    synth::write_mnist_style(dir.string(), train_n, test_n, seed);
  else
    synth::write_cifar_style(dir.string(), train_n, test_n, seed);
}

std::vector<experiment::EpochRecord> run_cfg(experiment::Config cfg, const char* label) {
  std::printf("  [run %s]\n", label);
  std::fflush(stdout);
  return experiment::run(cfg, [](const experiment::EpochRecord& r) {
    std::printf("    epoch %2d  train %6.2f  test %6.2f  zero %.4f\n", r.epoch, r.train_err,
                r.test_err, r.zero_update_frac);
    std::fflush(stdout);
  });
}

// Desk-scale MNIST DNN preset: 100 hidden units, 10 epochs, <6,10> layer
// outputs (the output-saturation remedy of the CNN experiments, needed at
// desk widths), lr 0.1 decayed by 0.9 per epoch.
experiment::Config dnn_desk(const fs::path& work, const char* name) {
  experiment::Config c;
  c.dataset = "mnist";
  c.model = "dnn";
  c.scale = 0.1;
  c.epochs = 10;
  c.batch = 100;
  c.lr = 0.1;
  c.lr_decay = 0.9;
  c.fl_outputs = 10;
  c.seed = 9;
  c.timing = false;
  c.data_dir = (work / "mnist").string();
  c.out = (work / (std::string(name) + ".csv")).string();
  return c;
}

void criterion3(const Options& opt) {
  ensure_dataset(opt.work / "mnist", "mnist", 60000, 10000, 5);

  auto cfg_float = dnn_desk(opt.work, "dnn_float");
  cfg_float.rounding = "float";
  auto cfg_s14 = dnn_desk(opt.work, "dnn_stoch14");
  cfg_s14.rounding = "stochastic";
  cfg_s14.fl_weights = 14;
  auto cfg_n8 = dnn_desk(opt.work, "dnn_near8");
  cfg_n8.rounding = "nearest";
  cfg_n8.fl_weights = 8;
  auto cfg_s8 = dnn_desk(opt.work, "dnn_stoch8");
  cfg_s8.rounding = "stochastic";
  cfg_s8.fl_weights = 8;

  auto rf = run_cfg(cfg_float, "MNIST DNN float baseline");
  auto rs14 = run_cfg(cfg_s14, "MNIST DNN stochastic <2,14>");
  auto rn8 = run_cfg(cfg_n8, "MNIST DNN nearest <8,8>");
  auto rs8 = run_cfg(cfg_s8, "MNIST DNN stochastic <8,8>");

  const double f_err = rf.back().test_err;
  const double s14_err = rs14.back().test_err;
  const double n8_err = rn8.back().test_err;
  const double s8_err = rs8.back().test_err;
  const double n8_zero = rn8.back().zero_update_frac;
  const double s8_zero = rs8.back().zero_update_frac;

  bool a = f_err <= 5.0;
  bool b = std::abs(s14_err - f_err) <= 1.0;
  bool c = (n8_err - s8_err >= 2.0) && (n8_zero > s8_zero);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "MNIST DNN desk: float %s (<=5%%: %s); stoch<2,14> %s (|d|<=1.0: %s); "
                "near<8,8> %s vs stoch<8,8> %s, gap>=2 & zero-frac %.4f > %.4f: %s",
                fmt_pct(f_err).c_str(), a ? "yes" : "NO", fmt_pct(s14_err).c_str(),
                b ? "yes" : "NO", fmt_pct(n8_err).c_str(), fmt_pct(s8_err).c_str(), n8_zero,
                s8_zero, c ? "yes" : "NO");
  report(3, a && b && c, buf);
}

// Desk-scale MNIST CNN preset: 4/8 feature maps, 64 FC units, 10 epochs.
// Init is fan-in scaled and deliberately small (x0.15): early updates sit
// below eps/2, which is where the two rounding modes part ways.
experiment::Config cnn_desk(const fs::path& work, const char* name) {
  experiment::Config c;
  c.dataset = "mnist";
  c.model = "cnn";
  c.scale = 0.5;
  c.epochs = 10;
  c.batch = 100;
  c.train_limit = 20000;
  c.init = "lecun";
  c.init_scale = 0.15;
  c.seed = 9;
  c.timing = false;
  c.data_dir = (work / "mnist").string();
  c.out = (work / (std::string(name) + ".csv")).string();
  return c;
}

void criterion4(const Options& opt) {
  ensure_dataset(opt.work / "mnist", "mnist", 60000, 10000, 5);
  auto cfg_s = cnn_desk(opt.work, "cnn_stoch14");
  cfg_s.rounding = "stochastic";
  auto cfg_n = cnn_desk(opt.work, "cnn_near14");
  cfg_n.rounding = "nearest";

  auto rs = run_cfg(cfg_s, "MNIST CNN stochastic <2,14>");
  auto rn = run_cfg(cfg_n, "MNIST CNN nearest <2,14>");

  // Nearest: no improvement past epoch 3 (best of epochs 4..10 is not below
  // the best of epochs 1..3 beyond eval noise), or outright divergence.
  double best_early = 1e9, best_late = 1e9;
  for (int e = 0; e < 3; ++e) best_early = std::min(best_early, rn[e].test_err);
  for (size_t e = 3; e < rn.size(); ++e) best_late = std::min(best_late, rn[e].test_err);
  const bool nearest_fails = (best_late >= best_early - 0.25) || (rn.back().test_err >= 85.0);

  // Stochastic: 3-epoch moving average keeps improving: never rises beyond
  // eval noise (0.25 points) and ends far below where it started.
  auto ma = [&](size_t e) {
    return (rs[e - 2].test_err + rs[e - 1].test_err + rs[e].test_err) / 3.0;
  };
  bool monotone = true;
  for (size_t e = 3; e < rs.size(); ++e)
    if (ma(e) > ma(e - 1) + 0.25) monotone = false;
  const bool improves = ma(rs.size() - 1) < ma(2) - 10.0;

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "MNIST CNN desk: nearest best %.2f%% (epochs 1-3) vs %.2f%% (4-10), stalls: %s; "
                "stochastic MA %.2f%% -> %.2f%%, monotone: %s",
                best_early, best_late, nearest_fails ? "yes" : "NO", ma(2), ma(rs.size() - 1),
                (monotone && improves) ? "yes" : "NO");
  report(4, nearest_fails && monotone && improves, buf);
}

void criterion5(const Options& opt) {
  ensure_dataset(opt.work / "cifar", "cifar10", 12000, 4000, 5);
  experiment::Config c;
  c.dataset = "cifar10";
  c.model = "cnn";
  c.scale = 0.25;  // 16 filters per conv layer
  c.rounding = "stochastic";
  c.fl_weights = 12;  // <4,12> weights/updates; outputs default to <4,12>
  c.epochs = 35;
  c.batch = 100;
  c.train_limit = 4000;
  c.test_limit = 2000;
  c.lr_drop_epochs = "15,22,27";
  c.init = "lecun";
  c.fine_tune_after = 30;
  c.fine_tune_delta = 4;
  c.seed = 9;
  c.timing = false;
  c.data_dir = (opt.work / "cifar").string();
  c.out = (opt.work / "cifar_ft.csv").string();

  auto r = run_cfg(c, "CIFAR CNN stochastic <4,12> with fine-tuning after epoch 30");

  // Plateau: epoch-over-epoch improvement below 0.1 points through epochs
  // 26..30 (5 consecutive epochs before the widening).
  bool plateau = true;
  for (int e = 26; e <= 30; ++e) {
    double improvement = r[e - 2].test_err - r[e - 1].test_err;
    if (improvement >= 0.1) plateau = false;
  }
  // Widening by 4 bits buys at least one full point within 5 epochs.
  double best_after = 1e9;
  for (int e = 31; e <= 35; ++e) best_after = std::min(best_after, r[e - 1].test_err);
  const double gain = r[30 - 1].test_err - best_after;
  const bool recovers = gain >= 1.0;

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "CIFAR fine-tuning: plateau epochs 26-30 (%s), test %.2f%% at widen, best %.2f%% "
                "within 5 epochs (gain %.2f >= 1.0: %s)",
                plateau ? "yes" : "NO", r[29].test_err, best_after, gain, recovers ? "yes" : "NO");
  report(5, plateau && recovers, buf);
}

// ---------------------------------------------------------------------------
// Criterion 6: systolic-array simulator
// ---------------------------------------------------------------------------

void criterion6() {
  fxp::SplitMix64 rng(1);
  FxFormat f = FxFormat::make(2, 14);
  // (a) tile timing identity over a 20-case grid.
  bool timing_ok = true;
  for (int n : {1, 2, 3, 5, 8}) {
    for (int64_t k : {1, 3, 7, 16}) {
      FxTensor a = random_tensor({n, k}, f, rng, "A");
      FxTensor b = random_tensor({k, n}, f, rng, "B");
      sysarray::SysArrayConfig cfg;
      cfg.n = n;
      cfg.input_width = 16;
      auto res = sysarray::simulate_gemm(a, b, cfg, {f, RoundingMode::Stochastic});
      if (res.trace.compute_cycles != static_cast<uint64_t>(k + 2 * n - 2)) timing_ok = false;
    }
  }
  // (b) bit-exact equivalence with the tensor GEMM, 100 random cases.
  bool equiv_ok = true;
  for (int t = 0; t < 100 && equiv_ok; ++t) {
    const int il = 2 + static_cast<int>(rng.next_below(4));
    const int fl = 4 + static_cast<int>(rng.next_below(10));
    FxFormat fi = FxFormat::make(il, std::min(fl, 16 - il));
    const int fl_out = std::max(1, fi.fl - 2 + static_cast<int>(rng.next_below(5)));
    FxFormat fo = FxFormat::make(il, fl_out);
    const int64_t l = 1 + static_cast<int64_t>(rng.next_below(9));
    const int64_t k = 1 + static_cast<int64_t>(rng.next_below(9));
    const int64_t m = 1 + static_cast<int64_t>(rng.next_below(9));
    const int n = 1 + static_cast<int>(rng.next_below(4));
    FxTensor a = random_tensor({l, k}, fi, rng, "A" + std::to_string(t));
    FxTensor b = random_tensor({k, m}, fi, rng, "B" + std::to_string(t));
    sysarray::SysArrayConfig cfg;
    cfg.n = n;
    cfg.input_width = 16;
    cfg.lfsr.seed = 1 + t;
    GemmSpec spec{fo, RoundingMode::Stochastic};
    auto sim = sysarray::simulate_gemm(a, b, cfg, spec);
    fxt::InjectedDraws injected(sim.draw_log);
    FxTensor c = fxt::gemm(a, b, spec, injected, "C" + std::to_string(t));
    if (c.data != sim.out.data) equiv_ok = false;
  }
  // (c) throughput arithmetic at the 28x28 / 166 MHz / 7 W design point.
  auto perf = sysarray::perf_report_ideal(28, 166e6, 7.0);
  const bool perf_ok = std::abs(perf.gops - 260.0) / 260.0 < 0.01 &&
                       std::abs(perf.gops_per_watt - 37.0) / 37.0 < 0.01;
  // (d) rounding-unit overhead below 4%.
  const bool overhead_ok = perf.dsp_round_units == 28 && perf.round_overhead < 0.04;

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "systolic array: timing k+2n-2 %s; 100-case bit equivalence %s; %.1f G-ops/s & "
                "%.1f G-ops/s/W %s; ROUND overhead %.2f%% %s",
                timing_ok ? "exact" : "WRONG", equiv_ok ? "exact" : "WRONG", perf.gops,
                perf.gops_per_watt, perf_ok ? "ok" : "WRONG", 100 * perf.round_overhead,
                overhead_ok ? "ok" : "WRONG");
  report(6, timing_ok && equiv_ok && perf_ok && overhead_ok, buf);
}

// ---------------------------------------------------------------------------
// Criterion 7: CLI determinism
// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "";
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void criterion7(const Options& opt) {
  if (opt.cli.empty()) {
    report(7, false, "determinism: no --cli path given");
    return;
  }
  ensure_dataset(opt.work / "mnist", "mnist", 60000, 10000, 5);
  auto invoke = [&](const std::string& out) {
    std::string cmd = opt.cli + " run --dataset mnist --model dnn --scale 0.05 --rounding" +
                      " stochastic --epochs 2 --batch 100 --train-limit 2000 --test-limit 500" +
                      " --seed 21 --no-timing --quiet --data-dir " +
                      (opt.work / "mnist").string() + " --out " + out;
    return std::system(cmd.c_str());
  };
  const auto out_a = opt.work / "det_a.csv";
  const auto out_b = opt.work / "det_b.csv";
  int rc_a = invoke(out_a.string());
  int rc_b = invoke(out_b.string());
  const std::string a = slurp(out_a), b = slurp(out_b);
  const bool ok = rc_a == 0 && rc_b == 0 && !a.empty() && a == b;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "determinism: two seeded CLI reruns -> %s CSVs (%zu bytes), exit codes %d/%d",
                ok ? "byte-identical" : "DIFFERENT", a.size(), rc_a, rc_b);
  report(7, ok, buf);
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--cli" && i + 1 < argc) opt.cli = argv[++i];
    else if (arg == "--work" && i + 1 < argc) opt.work = argv[++i];
    else if (arg == "--criterion" && i + 1 < argc) opt.criteria.push_back(std::atoi(argv[++i]));
    else {
      std::fprintf(stderr, "usage: %s [--cli PATH] [--work DIR] [--criterion N ...]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(opt.work);

  if (opt.wants(1)) criterion1();
  if (opt.wants(2)) criterion2();
  if (opt.wants(3)) criterion3(opt);
  if (opt.wants(4)) criterion4(opt);
  if (opt.wants(5)) criterion5(opt);
  if (opt.wants(6)) criterion6();
  if (opt.wants(7)) criterion7(opt);

  if (g_failures == 0) {
    std::printf("all selected criteria passed\n");
    return 0;
  }
  std::printf("%d criterion(s) failed\n", g_failures);
  return 1;
}
