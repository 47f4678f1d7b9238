// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fixnet/fxtensor.hpp"

namespace fixnet::sysarray {

class SysArrayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maximal-length Fibonacci LFSR. The state is k bits and never all-zeros;
/// taps are polynomial exponent masks (bit tap-1 set). Width 1 degenerates
/// to the constant state 1 (period 2^1 - 1).
uint64_t default_taps(int width);

class Lfsr {
 public:
  Lfsr(int width, uint64_t taps, uint64_t seed);
  int width() const { return width_; }
  uint64_t value() const { return state_; }
  /// Advance one step and return the new state (in [1, 2^k - 1]).
  uint64_t next();

 private:
  uint64_t state_;
  uint64_t taps_;
  int width_;
};

struct LfsrSpec {
  int width = 0;      // number of LSBs rounded off; 0 = derive from formats
  uint64_t taps = 0;  // 0 = default maximal-length taps for the width
  uint64_t seed = 1;  // per-column seeds are derived from this
};

struct SysArrayConfig {
  int n = 28;               // array is n x n MACC nodes + n ROUND units
  int acc_width = 48;       // accumulator register width in bits
  int input_width = 18;     // max operand width accepted by a DSP node
  LfsrSpec lfsr;
  int p = 0;                // row-block multiplier; 0 = derive from l2_capacity
  int64_t l2_capacity = 1 << 19;  // on-chip element capacity
  double bandwidth_bytes_per_cycle = 38.5;  // DDR<->chip (6.4 GB/s at 166 MHz)
  int fifo_depth = 16;      // input FIFO depth (validated, reported)
  double frequency_hz = 166e6;
  double power_w = 7.0;
};

/// Hardware rounding of one accumulator value: add the next LFSR value,
/// drop `drop_bits` LSBs, then examine the excess MSBs above the out-format
/// window — if they are not all 0s or all 1s, saturate to the max/min two's
/// complement value of the window.
struct DspRoundResult {
  int64_t mantissa = 0;
  bool saturated = false;
};
DspRoundResult dsp_round(int64_t acc, int drop_bits, fxp::FxFormat out, Lfsr& lfsr);

struct TraceReport {
  int n = 0;
  int64_t l = 0, k = 0, m = 0;
  int p = 1;
  int64_t row_groups = 0, col_groups = 0, tiles = 0;
  uint64_t total_cycles = 0;    // stream entry through the last rounded output
  uint64_t compute_cycles = 0;  // through the last MACC (single tile: k+2n-2)
  uint64_t prefill_cycles = 0;  // initial DDR fetch before the first operand
  uint64_t stall_cycles = 0;    // stream gaps where refill outran double buffering
  uint64_t macc_ops = 0;        // 2*l*m*k useful ops
  uint64_t padded_maccs = 0;    // edge-tile lanes carrying zeros
  uint64_t rounding_events = 0;
  int64_t reuse_a = 0;          // uses of each A element per fetch (= m)
  int64_t reuse_b = 0;          // uses of each B element per fetch (= p*n)
  double ops_per_cycle = 0;
  double utilization = 0;       // macc_ops / (2 n^2 total_cycles)
  int dsp_macc_units = 0;       // n^2
  int dsp_round_units = 0;      // n
  double round_overhead = 0;    // n / (n^2 + n)
};

struct SimResult {
  fxt::FxTensor out;
  TraceReport trace;
  /// Per output element (row-major), the rounding draw the hardware
  /// consumed, already mapped so that round_stochastic(value, draw) makes
  /// the identical up/down decision: draw = (2^k - 1 - r) / 2^k.
  std::vector<fxp::Draw> draw_log;
};

/// Cycle-level simulation of the blocked wavefront GEMM. The MACC plane is
/// stall-free by construction (one FIFO pop per node per cycle), so node
/// timing follows the wavefront identity; DDR refills serialize on a single
/// channel and delay a block's stream start when double buffering cannot
/// hide them; column ROUND units retire one result per cycle. Only
/// stochastic rounding exists in this hardware.
SimResult simulate_gemm(const fxt::FxTensor& a, const fxt::FxTensor& b, const SysArrayConfig& cfg,
                        const fxt::GemmSpec& spec);

struct PerfSummary {
  double gops = 0;
  double gops_per_watt = 0;
  double utilization = 1.0;
  int dsp_macc_units = 0;
  int dsp_round_units = 0;
  double round_overhead = 0;
};

/// Throughput arithmetic: G-ops/s = 2 n^2 f * utilization.
PerfSummary perf_report(const TraceReport& trace, double frequency_hz, double power_w);
PerfSummary perf_report_ideal(int n, double frequency_hz, double power_w,
                              double utilization = 1.0);

std::string report_text(const TraceReport& trace, const PerfSummary& perf);
std::string report_csv(const TraceReport& trace, const PerfSummary& perf);

}  // namespace fixnet::sysarray
