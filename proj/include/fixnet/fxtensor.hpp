// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fixnet/fxp.hpp"

namespace fixnet::fxt {

using fxp::Draw;
using fxp::Dyadic;
using fxp::FxFormat;
using fxp::FxScalar;
using fxp::RoundingMode;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class AccWidthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int64_t numel_of(std::span<const int64_t> shape);

/// A quantized tensor: flat two's-complement mantissas sharing one format.
/// Immutable by convention once built; operations return fresh tensors.
/// `tag` names the tensor for RNG keying, so stochastic results depend only
/// on (seed, tag, element index, step), never on evaluation order.
struct FxTensor {
  std::vector<int64_t> shape;
  std::vector<int32_t> data;
  FxFormat format;
  std::string tag;
  uint64_t tag_hash = 0;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape[i]; }

  static FxTensor zeros(std::vector<int64_t> shape, FxFormat f, std::string tag);

  /// Mantissa range check (debug aid; operations maintain it by construction).
  bool in_range() const;

  double value_at(int64_t i) const { return std::ldexp(static_cast<double>(data[i]), -format.fl); }
};

/// Plain double tensor, mirror of FxTensor for the float-baseline path.
struct RealTensor {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::string tag;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  static RealTensor zeros(std::vector<int64_t> shape, std::string tag);
};

// ---------------------------------------------------------------------------
// Draw sources
// ---------------------------------------------------------------------------

/// Uniform draws addressed by (stream tag, element index). Implementations
/// must be pure: same address, same draw.
class DrawSource {
 public:
  virtual ~DrawSource() = default;
  virtual Draw draw(uint64_t tag_hash, uint64_t index) const = 0;
};

/// The standard counter-based source: key = (seed, tag, index, step).
class KeyedDraws final : public DrawSource {
 public:
  KeyedDraws(uint64_t seed, uint64_t step) : seed_(seed), step_(step) {}
  Draw draw(uint64_t tag_hash, uint64_t index) const override {
    return fxp::keyed_draw(fxp::RngKey{seed_, tag_hash, index, step_});
  }

 private:
  uint64_t seed_, step_;
};

/// Index-addressed table of draws (stream tag ignored). Used to replay an
/// external rounding stream, e.g. the LFSR values consumed by the hardware
/// simulator, through the tensor path.
class InjectedDraws final : public DrawSource {
 public:
  explicit InjectedDraws(std::vector<Draw> table) : table_(std::move(table)) {}
  Draw draw(uint64_t, uint64_t index) const override { return table_.at(index); }

 private:
  std::vector<Draw> table_;
};

// ---------------------------------------------------------------------------
// Two-step MACC linear algebra
// ---------------------------------------------------------------------------

/// Output contract of a GEMM: one Convert per output element into
/// out_format with the named rounding mode.
struct GemmSpec {
  FxFormat out_format;
  RoundingMode mode = RoundingMode::Nearest;
};

/// Extended knobs for the shared kernel. `scale` multiplies the exact
/// accumulator value; `addend` (elementwise, same shape as the output)
/// joins the pre-rounding value with coefficient `addend_scale`. Everything
/// is applied before the single Convert.
struct GemmExt {
  bool trans_a = false;
  bool trans_b = false;
  Dyadic scale{1, 0};
  const FxTensor* bias = nullptr;           // length m, folded into the accumulator
  const FxTensor* addend = nullptr;         // shape l x m
  Dyadic addend_scale{0, 0};
};

/// Exact integer inner product of two equal-format vectors followed by one
/// Convert into spec.out_format.
FxScalar inner_product(const FxTensor& a, const FxTensor& b, const GemmSpec& spec,
                       const DrawSource& src, uint64_t out_tag_hash = 0, uint64_t out_index = 0);

/// C = Convert(A . B). A is l x k, B is k x m, equal input formats.
/// Draw keys are (out_tag, row*m + col), so the result is independent of
/// loop order and parallel split.
FxTensor gemm(const FxTensor& a, const FxTensor& b, const GemmSpec& spec, const DrawSource& src,
              std::string out_tag);

/// As gemm, with a length-m bias row joining the wide accumulator before
/// the single Convert.
FxTensor gemm_bias(const FxTensor& a, const FxTensor& b, const FxTensor& bias,
                   const GemmSpec& spec, const DrawSource& src, std::string out_tag);

/// Full kernel. Unlike the plain ops, input formats may differ (the
/// accumulator point is fl_a + fl_b); network layers multiply activations
/// by weights stored in different formats.
FxTensor gemm_ext(const FxTensor& a, const FxTensor& b, const GemmSpec& spec, const GemmExt& ext,
                  const DrawSource& src, std::string out_tag);

/// Exact wide accumulators, no Convert. point = fl_a + fl_b.
struct WideTensor {
  std::vector<int64_t> shape;
  std::vector<int64_t> data;
  int point = 0;
};
WideTensor gemm_wide(const FxTensor& a, const FxTensor& b, bool trans_a = false,
                     bool trans_b = false);

/// One Convert per element of a wide tensor (value = scale * data * 2^-point).
FxTensor convert_wide(const WideTensor& w, FxFormat f, RoundingMode mode, const DrawSource& src,
                      std::string out_tag, Dyadic scale = Dyadic::one());

// ---------------------------------------------------------------------------
// Convolution / pooling / elementwise
// ---------------------------------------------------------------------------

/// N x C x H x W -> (C*kh*kw) x (N*H'*W') patch matrix; zero padding; pure
/// data rearrangement, no rounding.
FxTensor im2col(const FxTensor& x, int kh, int kw, int stride, int pad);

/// Scatter-adds a (C*kh*kw) x (N*H'*W') wide patch matrix back onto the
/// N x C x H x W image grid (adjoint of im2col). Exact integer adds.
WideTensor col2im_wide(const WideTensor& cols, int64_t n, int64_t c, int64_t h, int64_t w, int kh,
                       int kw, int stride, int pad);

/// x: N x C x H x W, w: F x C x kh x kw -> N x F x H' x W'. Equivalent to
/// gemm_bias(w as F x (C*kh*kw), im2col(x)) reshaped; one Convert per output.
FxTensor conv2d(const FxTensor& x, const FxTensor& w, const FxTensor& bias, int stride, int pad,
                const GemmSpec& spec, const DrawSource& src, std::string out_tag);

struct PoolResult {
  FxTensor out;
  std::vector<int64_t> argmax;  // flat input index per output element
};

/// Non-padded max pooling over window x window with the given stride;
/// trailing rows/cols that do not fill a window are dropped. Mantissa
/// comparison is exact; ties break to the lowest flat index.
PoolResult maxpool(const FxTensor& x, int window, int stride);

/// Zero negative mantissas. Exact, no rounding event.
FxTensor relu(const FxTensor& x);

/// Elementwise Convert into format f with per-element draw keys.
FxTensor quantize(const FxTensor& x, FxFormat f, RoundingMode mode, const DrawSource& src,
                  std::string out_tag);

/// out[i] = Convert(ca*a[i] + cb*b[i]); one rounding event per element.
FxTensor axpby_quantize(Dyadic ca, const FxTensor& a, Dyadic cb, const FxTensor& b, FxFormat f,
                        RoundingMode mode, const DrawSource& src, std::string out_tag);

/// Saturating exact add of two same-format tensors (no rounding: operands
/// already sit on the target grid).
FxTensor add_saturate(const FxTensor& a, const FxTensor& b, std::string out_tag);

// ---------------------------------------------------------------------------
// Real <-> fixed plumbing
// ---------------------------------------------------------------------------

std::vector<double> to_doubles(const FxTensor& t);
FxTensor from_doubles(std::vector<int64_t> shape, std::span<const double> values, FxFormat f,
                      RoundingMode mode, const DrawSource& src, std::string tag);

}  // namespace fixnet::fxt
