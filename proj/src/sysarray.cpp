// SPDX-License-Identifier: Apache-2.0
#include "fixnet/sysarray.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <cmath>
#include <sstream>

namespace fixnet::sysarray {

// ---------------------------------------------------------------------------
// LFSR
// ---------------------------------------------------------------------------

uint64_t default_taps(int width) {
  // Maximal-length polynomial exponents per register length (XAPP052 table).
  static constexpr int kTaps[33][4] = {
      {0}, {1, 0, 0, 0},
      {2, 1, 0, 0},  {3, 2, 0, 0},   {4, 3, 0, 0},   {5, 3, 0, 0},    {6, 5, 0, 0},
      {7, 6, 0, 0},  {8, 6, 5, 4},   {9, 5, 0, 0},   {10, 7, 0, 0},   {11, 9, 0, 0},
      {12, 6, 4, 1}, {13, 4, 3, 1},  {14, 5, 3, 1},  {15, 14, 0, 0},  {16, 15, 13, 4},
      {17, 14, 0, 0},{18, 11, 0, 0}, {19, 6, 2, 1},  {20, 17, 0, 0},  {21, 19, 0, 0},
      {22, 21, 0, 0},{23, 18, 0, 0}, {24, 23, 22, 17},{25, 22, 0, 0}, {26, 6, 2, 1},
      {27, 5, 2, 1}, {28, 25, 0, 0}, {29, 27, 0, 0}, {30, 6, 4, 1},   {31, 28, 0, 0},
      {32, 22, 2, 1}};
  if (width < 1 || width > 32) throw SysArrayError("LFSR width must be in [1, 32]");
  uint64_t mask = 0;
  for (int t : kTaps[width])
    if (t > 0) mask |= uint64_t(1) << (t - 1);
  return mask;
}

Lfsr::Lfsr(int width, uint64_t taps, uint64_t seed) : taps_(taps), width_(width) {
  if (width < 1 || width > 32) throw SysArrayError("LFSR width must be in [1, 32]");
  if (taps_ == 0) taps_ = default_taps(width);
  const uint64_t mask = (uint64_t(1) << width) - 1;
  state_ = seed & mask;
  if (state_ == 0) state_ = 1;  // the all-zeros state is unreachable
}

uint64_t Lfsr::next() {
  const uint64_t mask = (uint64_t(1) << width_) - 1;
  uint64_t fb = std::popcount(state_ & taps_) & 1u;
  state_ = ((state_ << 1) | fb) & mask;
  return state_;
}

// ---------------------------------------------------------------------------
// DSP ROUND unit
// ---------------------------------------------------------------------------

namespace {

DspRoundResult dsp_round_with(int64_t acc, int drop_bits, fxp::FxFormat out, uint64_t r) {
  int64_t v = (acc + static_cast<int64_t>(r)) >> drop_bits;  // add noise, drop LSBs
  const int64_t lo = out.min_mantissa(), hi = out.max_mantissa();
  // Pattern detect: excess MSBs all 0s or all 1s iff v fits the window.
  if (v > hi) return {hi, true};
  if (v < lo) return {lo, true};
  return {v, false};
}

}  // namespace

DspRoundResult dsp_round(int64_t acc, int drop_bits, fxp::FxFormat out, Lfsr& lfsr) {
  if (drop_bits < 0)
    throw SysArrayError("dsp_round: output more precise than the accumulator (k < 0)");
  if (drop_bits == 0) return dsp_round_with(acc, 0, out, 0);
  if (lfsr.width() != drop_bits)
    throw SysArrayError("dsp_round: LFSR width must equal the number of dropped LSBs");
  return dsp_round_with(acc, drop_bits, out, lfsr.next());
}

// ---------------------------------------------------------------------------
// Blocked wavefront GEMM simulation
// ---------------------------------------------------------------------------

namespace {

int ceil_log2(int64_t v) {
  if (v <= 1) return 0;
  return 64 - std::countl_zero(static_cast<uint64_t>(v - 1));
}

int derive_p(const SysArrayConfig& cfg, int64_t k, int64_t l) {
  if (cfg.p > 0) return cfg.p;
  // L2 holds one A block (p*n*k) plus double-buffered B blocks (2*n*k).
  int64_t by_cap = (cfg.l2_capacity - 2 * cfg.n * k) / std::max<int64_t>(1, cfg.n * k);
  int64_t needed = (l + cfg.n - 1) / cfg.n;  // no benefit beyond all row tiles
  return static_cast<int>(std::clamp<int64_t>(std::min(by_cap, needed), 1, 1 << 20));
}

}  // namespace

SimResult simulate_gemm(const fxt::FxTensor& a, const fxt::FxTensor& b, const SysArrayConfig& cfg,
                        const fxt::GemmSpec& spec) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
    throw fxt::ShapeError("simulate_gemm: need l x k times k x m");
  if (a.format != b.format) throw fxp::FormatError("simulate_gemm: operand formats differ");
  if (spec.mode != fxp::RoundingMode::Stochastic)
    throw SysArrayError("simulate_gemm: the array implements stochastic rounding only");
  if (cfg.n < 1) throw SysArrayError("simulate_gemm: n must be >= 1");
  if (cfg.input_width < 2 || cfg.input_width > 18)
    throw SysArrayError("simulate_gemm: input_width must be in [2, 18]");
  if (cfg.acc_width < 4 || cfg.acc_width > 63)
    throw SysArrayError("simulate_gemm: acc_width must be in [4, 63]");
  if (cfg.fifo_depth < 1) throw SysArrayError("simulate_gemm: fifo_depth must be >= 1");
  if (a.format.wl() > cfg.input_width)
    throw SysArrayError("simulate_gemm: operand word length exceeds input_width");

  const int64_t l = a.shape[0], k = a.shape[1], m = b.shape[1];
  const int n = cfg.n;

  const int point = 2 * a.format.fl;
  const int drop = point - spec.out_format.fl;
  if (drop < 0) throw SysArrayError("simulate_gemm: output more precise than the accumulator");
  int lfsr_width = cfg.lfsr.width > 0 ? cfg.lfsr.width : drop;
  if (drop > 0 && lfsr_width != drop)
    throw SysArrayError("simulate_gemm: LFSR width " + std::to_string(lfsr_width) +
                        " != dropped LSBs " + std::to_string(drop));

  // Exact accumulation must fit the accumulator register.
  if (ceil_log2(k) + 2 * cfg.input_width > cfg.acc_width)
    throw SysArrayError("simulate_gemm: acc_width too small for inner dimension " +
                        std::to_string(k));
  const int64_t acc_lim = (int64_t(1) << (cfg.acc_width - 1)) - 1;

  for (int32_t v : a.data)
    if (v < -(1 << (cfg.input_width - 1)) || v >= (1 << (cfg.input_width - 1)))
      throw SysArrayError("simulate_gemm: A operand exceeds input_width");
  for (int32_t v : b.data)
    if (v < -(1 << (cfg.input_width - 1)) || v >= (1 << (cfg.input_width - 1)))
      throw SysArrayError("simulate_gemm: B operand exceeds input_width");

  const int p = derive_p(cfg, k, l);
  const int64_t row_groups = (l + int64_t(p) * n - 1) / (int64_t(p) * n);
  const int64_t col_groups = (m + n - 1) / n;

  // One LFSR per array column.
  std::vector<Lfsr> lfsrs;
  lfsrs.reserve(n);
  for (int j = 0; j < n; ++j)
    lfsrs.emplace_back(std::max(lfsr_width, 1), cfg.lfsr.taps, cfg.lfsr.seed + j);

  SimResult res;
  res.out = fxt::FxTensor::zeros({l, m}, spec.out_format, a.tag + "*" + b.tag);
  res.draw_log.assign(static_cast<size_t>(l * m), fxp::Draw{{0, 0}, 1});

  TraceReport& tr = res.trace;
  tr.n = n;
  tr.l = l;
  tr.k = k;
  tr.m = m;
  tr.p = p;
  tr.row_groups = row_groups;
  tr.col_groups = col_groups;
  tr.reuse_a = m;
  tr.reuse_b = int64_t(p) * n;
  tr.dsp_macc_units = n * n;
  tr.dsp_round_units = n;
  tr.round_overhead = static_cast<double>(n) / static_cast<double>(n * n + n);

  const double el_bytes = std::ceil(a.format.wl() / 8.0);
  auto fetch_cycles = [&](int64_t elems) -> uint64_t {
    return static_cast<uint64_t>(
        std::ceil(static_cast<double>(elems) * el_bytes / cfg.bandwidth_bytes_per_cycle));
  };

  // Per-column ROUND unit availability and the DDR channel timeline.
  std::vector<uint64_t> col_free(static_cast<size_t>(n), 0);
  uint64_t ddr_free = 0;
  uint64_t stream_clock = 0;   // next available stream-entry cycle
  uint64_t stream_origin = 0;  // cycle the first operand enters the array
  bool first_group = true;

  const uint64_t mask_k = drop > 0 ? ((uint64_t(1) << drop) - 1) : 0;

  for (int64_t rg = 0; rg < row_groups; ++rg) {
    const int64_t row0 = rg * int64_t(p) * n;
    const int64_t rows = std::min<int64_t>(int64_t(p) * n, l - row0);
    const int64_t tiles_in_group = (rows + n - 1) / n;
    const uint64_t a_fetch = fetch_cycles(rows * k);
    {
      // A block fetch (serialized on the DDR channel).
      ddr_free += a_fetch;
    }
    for (int64_t cg = 0; cg < col_groups; ++cg) {
      const int64_t col0 = cg * n;
      const int64_t cols = std::min<int64_t>(n, m - col0);
      ddr_free += fetch_cycles(cols * k);

      // Double buffering: the stream waits only if the fetch outran it.
      uint64_t start = std::max(stream_clock, ddr_free);
      if (first_group) {
        stream_origin = start;  // pipeline fill, reported separately
        for (auto& c : col_free) c = start;
      } else {
        tr.stall_cycles += start - stream_clock;
      }
      first_group = false;

      for (int64_t t = 0; t < tiles_in_group; ++t) {
        const uint64_t s = start + static_cast<uint64_t>(t) * k;  // tile stream origin
        const int64_t trow0 = row0 + t * n;
        const int64_t trows = std::min<int64_t>(n, l - trow0);

        // MACC plane. The wavefront is stall-free, so node (i,j) performs
        // its MACC #q at cycle s + q + i + j; the loop below is that
        // machine with the clock folded in.
        for (int64_t i = 0; i < n; ++i) {
          const bool real_row = i < trows;
          for (int64_t j = 0; j < n; ++j) {
            const bool real_col = j < cols;
            int64_t acc = 0;
            if (real_row && real_col) {
              const int32_t* arow = a.data.data() + (trow0 + i) * k;
              const int32_t* bcol = b.data.data() + (col0 + j);
              for (int64_t q = 0; q < k; ++q) {
                acc += int64_t(arow[q]) * bcol[q * m];
                if (acc > acc_lim || acc < -acc_lim - 1)
                  throw SysArrayError("simulate_gemm: accumulator overflow at node (" +
                                      std::to_string(i) + "," + std::to_string(j) + ")");
              }
              tr.macc_ops += static_cast<uint64_t>(k);
            } else {
              tr.padded_maccs += static_cast<uint64_t>(k);
            }

            const uint64_t done = s + static_cast<uint64_t>(k) - 1 +
                                  static_cast<uint64_t>(i + j);  // last MACC cycle
            tr.compute_cycles = std::max(tr.compute_cycles, done + 1);

            // Drain: cascade to the column ROUND unit, one result per cycle.
            const uint64_t ready = done + static_cast<uint64_t>(n - i);
            uint64_t when = std::max(ready, col_free[j]);
            col_free[j] = when + 1;

            uint64_t r = 0;
            if (drop > 0) r = lfsrs[j].next();
            if (real_row && real_col) {
              const size_t oi = static_cast<size_t>((trow0 + i) * m + (col0 + j));
              res.out.data[oi] = static_cast<int32_t>(dsp_round_with(acc, drop, spec.out_format, r).mantissa);
              if (drop > 0) res.draw_log[oi] = fxp::Draw{{0, mask_k - r}, drop};
              ++tr.rounding_events;
              tr.total_cycles = std::max(tr.total_cycles, when + 1);
            }
          }
        }
      }
      stream_clock = start + static_cast<uint64_t>(tiles_in_group) * k;
    }
  }
  tr.tiles = 0;
  for (int64_t rg = 0; rg < row_groups; ++rg) {
    const int64_t rows = std::min<int64_t>(int64_t(p) * n, l - rg * int64_t(p) * n);
    tr.tiles += ((rows + n - 1) / n) * col_groups;
  }
  tr.macc_ops *= 2;  // multiply + accumulate
  tr.padded_maccs *= 2;
  // Timing identities are measured from stream entry; the initial fetch is
  // pipeline fill and reported on its own.
  tr.prefill_cycles = stream_origin;
  tr.compute_cycles -= stream_origin;
  tr.total_cycles = std::max(tr.total_cycles, stream_origin) - stream_origin;
  tr.total_cycles = std::max(tr.total_cycles, tr.compute_cycles);
  tr.ops_per_cycle =
      tr.total_cycles ? static_cast<double>(tr.macc_ops) / static_cast<double>(tr.total_cycles) : 0;
  tr.utilization = tr.total_cycles ? static_cast<double>(tr.macc_ops) /
                                         (2.0 * n * n * static_cast<double>(tr.total_cycles))
                                   : 0;
  return res;
}

// ---------------------------------------------------------------------------
// Throughput arithmetic
// ---------------------------------------------------------------------------

PerfSummary perf_report_ideal(int n, double frequency_hz, double power_w, double utilization) {
  if (frequency_hz <= 0) throw SysArrayError("perf_report: frequency must be > 0");
  PerfSummary s;
  s.utilization = utilization;
  s.gops = 2.0 * n * n * frequency_hz * utilization / 1e9;
  s.gops_per_watt = power_w > 0 ? s.gops / power_w : 0;
  s.dsp_macc_units = n * n;
  s.dsp_round_units = n;
  s.round_overhead = static_cast<double>(n) / static_cast<double>(n * n + n);
  return s;
}

PerfSummary perf_report(const TraceReport& trace, double frequency_hz, double power_w) {
  return perf_report_ideal(trace.n, frequency_hz, power_w, trace.utilization);
}

std::string report_text(const TraceReport& t, const PerfSummary& p) {
  std::ostringstream os;
  os << "systolic array " << t.n << "x" << t.n << ", GEMM " << t.l << "x" << t.k << " . " << t.k
     << "x" << t.m << "\n";
  os << "  blocking: p=" << t.p << ", row groups=" << t.row_groups
     << ", col groups=" << t.col_groups << ", tiles=" << t.tiles << "\n";
  os << "  cycles: total=" << t.total_cycles << " (compute " << t.compute_cycles << ", prefill "
     << t.prefill_cycles << ", stalls " << t.stall_cycles << ")\n";
  os << "  ops: " << t.macc_ops << " (" << t.ops_per_cycle << " per cycle, utilization "
     << t.utilization << ")\n";
  os << "  reuse: A x" << t.reuse_a << ", B x" << t.reuse_b << "\n";
  os << "  DSP units: " << t.dsp_macc_units << " MACC + " << t.dsp_round_units
     << " ROUND (overhead " << 100.0 * t.round_overhead << "%)\n";
  os << "  throughput: " << p.gops << " G-ops/s";
  if (p.gops_per_watt > 0) os << " at " << p.gops_per_watt << " G-ops/s/W";
  os << "\n";
  return os.str();
}

std::string report_csv(const TraceReport& t, const PerfSummary& p) {
  std::ostringstream os;
  os << "n,l,k,m,p,tiles,total_cycles,compute_cycles,stall_cycles,macc_ops,ops_per_cycle,"
        "utilization,reuse_a,reuse_b,dsp_macc_units,dsp_round_units,round_overhead,gops,"
        "gops_per_watt\n";
  os << t.n << "," << t.l << "," << t.k << "," << t.m << "," << t.p << "," << t.tiles << ","
     << t.total_cycles << "," << t.compute_cycles << "," << t.stall_cycles << "," << t.macc_ops
     << "," << t.ops_per_cycle << "," << t.utilization << "," << t.reuse_a << "," << t.reuse_b
     << "," << t.dsp_macc_units << "," << t.dsp_round_units << "," << t.round_overhead << ","
     << p.gops << "," << p.gops_per_watt << "\n";
  return os.str();
}

}  // namespace fixnet::sysarray
