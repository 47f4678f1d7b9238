// SPDX-License-Identifier: Apache-2.0
#include "fixnet/fxtensor.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <cmath>

#include "fixnet/parallel.hpp"

namespace fixnet::fxt {

using I128 = __int128;

int64_t numel_of(std::span<const int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative dimension");
    n *= d;
  }
  return n;
}

FxTensor FxTensor::zeros(std::vector<int64_t> shape, FxFormat f, std::string tag) {
  FxTensor t;
  t.format = f;
  if (f.wl() > 31) throw fxp::FormatError("FxTensor: wl > 31 unsupported for tensor storage");
  int64_t n = numel_of(shape);
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(n), 0);
  t.tag = std::move(tag);
  t.tag_hash = fxp::hash_tag(t.tag);
  return t;
}

bool FxTensor::in_range() const {
  int64_t lo = format.min_mantissa(), hi = format.max_mantissa();
  for (int32_t m : data)
    if (m < lo || m > hi) return false;
  return true;
}

RealTensor RealTensor::zeros(std::vector<int64_t> shape, std::string tag) {
  RealTensor t;
  int64_t n = numel_of(shape);
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(n), 0.0);
  t.tag = std::move(tag);
  return t;
}

// ---------------------------------------------------------------------------
// Shared GEMM kernel
// ---------------------------------------------------------------------------

namespace {

int ceil_log2(int64_t v) {
  if (v <= 1) return 0;
  return 64 - std::countl_zero(static_cast<uint64_t>(v - 1));
}

struct GemmDims {
  int64_t l, k, m;
};

GemmDims resolve_dims(const FxTensor& a, const FxTensor& b, const GemmExt& ext) {
  if (a.shape.size() != 2 || b.shape.size() != 2) throw ShapeError("gemm: operands must be 2-D");
  int64_t l = ext.trans_a ? a.shape[1] : a.shape[0];
  int64_t ka = ext.trans_a ? a.shape[0] : a.shape[1];
  int64_t kb = ext.trans_b ? b.shape[1] : b.shape[0];
  int64_t m = ext.trans_b ? b.shape[0] : b.shape[1];
  if (ka != kb)
    throw ShapeError("gemm: inner dimensions disagree (" + std::to_string(ka) + " vs " +
                     std::to_string(kb) + ")");
  if (ka == 0) throw ShapeError("gemm: inner dimension must be >= 1");
  return {l, ka, m};
}

// Accumulates the exact integer inner products for an output block. AccT is
// int64 when ceil(log2 k) + wl_a + wl_b fits, int128 otherwise.
template <typename AccT>
void accumulate_block(const FxTensor& a, const FxTensor& b, const GemmExt& ext, GemmDims d,
                      int64_t i0, int64_t i1, int64_t j0, int64_t j1, std::vector<AccT>& acc) {
  const int32_t* pa = a.data.data();
  const int32_t* pb = b.data.data();
  const int64_t bw = j1 - j0;
  std::fill(acc.begin(), acc.end(), AccT(0));
  if (!ext.trans_a && !ext.trans_b) {
    for (int64_t i = i0; i < i1; ++i) {
      AccT* row = acc.data() + (i - i0) * bw;
      for (int64_t t = 0; t < d.k; ++t) {
        const int64_t av = pa[i * d.k + t];
        if (av == 0) continue;
        const int32_t* brow = pb + t * d.m + j0;
        for (int64_t j = 0; j < bw; ++j) row[j] += AccT(av * brow[j]);
      }
    }
  } else if (!ext.trans_a && ext.trans_b) {
    for (int64_t i = i0; i < i1; ++i) {
      const int32_t* arow = pa + i * d.k;
      AccT* row = acc.data() + (i - i0) * bw;
      for (int64_t j = j0; j < j1; ++j) {
        const int32_t* brow = pb + j * d.k;
        AccT s = 0;
        for (int64_t t = 0; t < d.k; ++t) s += AccT(int64_t(arow[t]) * brow[t]);
        row[j - j0] = s;
      }
    }
  } else if (ext.trans_a && !ext.trans_b) {
    for (int64_t i = i0; i < i1; ++i) {
      AccT* row = acc.data() + (i - i0) * bw;
      for (int64_t t = 0; t < d.k; ++t) {
        const int64_t av = pa[t * d.l + i];
        if (av == 0) continue;
        const int32_t* brow = pb + t * d.m + j0;
        for (int64_t j = 0; j < bw; ++j) row[j] += AccT(av * brow[j]);
      }
    }
  } else {
    for (int64_t i = i0; i < i1; ++i) {
      AccT* row = acc.data() + (i - i0) * bw;
      for (int64_t t = 0; t < d.k; ++t) {
        const int64_t av = pa[t * d.l + i];
        if (av == 0) continue;
        for (int64_t j = j0; j < j1; ++j) row[j - j0] += AccT(av * pb[j * d.k + t]);
      }
    }
  }
}

struct ConvertPlan {
  int point_k = 0;        // carrier exponent K: value = num / 2^K
  int acc_up = 0;         // acc contribution: acc * scale.num << acc_up
  int64_t scale_num = 1;
  int add_up = 0;         // addend contribution: add_m * coeff.num << add_up
  int64_t add_num = 0;
};

ConvertPlan make_plan(int point, const GemmExt& ext) {
  ConvertPlan p;
  int ka = point + ext.scale.shift;
  p.point_k = ka;
  p.scale_num = ext.scale.num;
  if (ext.addend) {
    int kb = ext.addend->format.fl + ext.addend_scale.shift;
    p.point_k = std::max(ka, kb);
    p.add_num = ext.addend_scale.num;
    p.add_up = p.point_k - kb;
  }
  p.acc_up = p.point_k - ka;
  if (p.acc_up > 40 || p.add_up > 40 || p.point_k > 120)
    throw AccWidthError("gemm: scale/addend alignment exceeds supported carrier width");
  return p;
}

}  // namespace

FxTensor gemm_ext(const FxTensor& a, const FxTensor& b, const GemmSpec& spec, const GemmExt& ext,
                  const DrawSource& src, std::string out_tag) {
  GemmDims d = resolve_dims(a, b, ext);
  if (ext.bias) {
    if (ext.bias->numel() != d.m) throw ShapeError("gemm: bias length must equal m");
    if (ext.bias->format.fl > a.format.fl + b.format.fl)
      throw fxp::FormatError("gemm: bias fl must be <= fl_a + fl_b");
  }
  if (ext.addend && (ext.addend->shape != std::vector<int64_t>{d.l, d.m}))
    throw ShapeError("gemm: addend shape must be l x m");
  if (spec.out_format.wl() > a.format.wl() + b.format.wl())
    throw fxp::FormatError("gemm: out format wider than the exact product is pointless");

  const int point = a.format.fl + b.format.fl;
  // Worst case |sum| = k * 2^(wl_a-1) * 2^(wl_b-1); +1 bit when a bias joins.
  const int need_bits = ceil_log2(d.k) + (a.format.wl() - 1) + (b.format.wl() - 1) +
                        (ext.bias ? 1 : 0) + 1;
  if (need_bits > 126) throw AccWidthError("gemm: accumulator would exceed 126 bits");
  const bool wide = need_bits > 63;

  ConvertPlan plan = make_plan(point, ext);
  FxTensor out = FxTensor::zeros({d.l, d.m}, spec.out_format, std::move(out_tag));

  auto run_block = [&](int64_t i0, int64_t i1, int64_t j0, int64_t j1, auto acc_tag) {
    using AccT = decltype(acc_tag);
    std::vector<AccT> acc(static_cast<size_t>((i1 - i0) * (j1 - j0)));
    accumulate_block<AccT>(a, b, ext, d, i0, i1, j0, j1, acc);
    const int64_t bw = j1 - j0;
    for (int64_t i = i0; i < i1; ++i) {
      for (int64_t j = j0; j < j1; ++j) {
        I128 z = I128(acc[(i - i0) * bw + (j - j0)]);
        if (ext.bias) {
          const FxTensor& bias = *ext.bias;
          z += I128(int64_t(bias.data[j])) << (point - bias.format.fl);
        }
        I128 num = (z * plan.scale_num) << plan.acc_up;
        if (ext.addend)
          num += (I128(int64_t(ext.addend->data[i * d.m + j])) * plan.add_num) << plan.add_up;
        const uint64_t idx = static_cast<uint64_t>(i * d.m + j);
        Draw dr{};
        if (spec.mode == RoundingMode::Stochastic) dr = src.draw(out.tag_hash, idx);
        out.data[idx] =
            static_cast<int32_t>(fxp::convert_dyadic(num, plan.point_k, spec.out_format, spec.mode, dr));
      }
    }
  };

  // Parallel split along the larger output dimension; draws are keyed by
  // element index, so any split yields bit-identical results.
  const int64_t min_rows = std::max<int64_t>(1, 4096 / std::max<int64_t>(1, d.m));
  if (d.l >= d.m) {
    util::parallel_for(0, d.l, min_rows, [&](int64_t lo, int64_t hi) {
      if (wide)
        run_block(lo, hi, 0, d.m, I128(0));
      else
        run_block(lo, hi, 0, d.m, int64_t(0));
    });
  } else {
    const int64_t min_cols = std::max<int64_t>(1, 4096 / std::max<int64_t>(1, d.l));
    util::parallel_for(0, d.m, min_cols, [&](int64_t lo, int64_t hi) {
      if (wide)
        run_block(0, d.l, lo, hi, I128(0));
      else
        run_block(0, d.l, lo, hi, int64_t(0));
    });
  }
  return out;
}

static void require_same_format(const FxTensor& a, const FxTensor& b, const char* what) {
  if (a.format != b.format)
    throw fxp::FormatError(std::string(what) + ": input formats differ (" + a.format.str() +
                           " vs " + b.format.str() + ")");
}

FxScalar inner_product(const FxTensor& a, const FxTensor& b, const GemmSpec& spec,
                       const DrawSource& src, uint64_t out_tag_hash, uint64_t out_index) {
  if (a.shape.size() != 1 || b.shape.size() != 1 || a.numel() != b.numel())
    throw ShapeError("inner_product: vectors of equal length required");
  if (a.numel() == 0) throw ShapeError("inner_product: d must be >= 1");
  require_same_format(a, b, "inner_product");

  const int need_bits = ceil_log2(a.numel()) + 2 * a.format.wl();
  I128 z = 0;
  if (need_bits > 126) throw AccWidthError("inner_product: accumulator would exceed 126 bits");
  for (int64_t t = 0; t < a.numel(); ++t) z += I128(int64_t(a.data[t]) * b.data[t]);

  Draw dr{};
  if (spec.mode == RoundingMode::Stochastic) dr = src.draw(out_tag_hash, out_index);
  int64_t m = fxp::convert_dyadic(z, 2 * a.format.fl, spec.out_format, spec.mode, dr);
  return FxScalar{m, spec.out_format};
}

FxTensor gemm(const FxTensor& a, const FxTensor& b, const GemmSpec& spec, const DrawSource& src,
              std::string out_tag) {
  require_same_format(a, b, "gemm");
  return gemm_ext(a, b, spec, GemmExt{}, src, std::move(out_tag));
}

FxTensor gemm_bias(const FxTensor& a, const FxTensor& b, const FxTensor& bias,
                   const GemmSpec& spec, const DrawSource& src, std::string out_tag) {
  require_same_format(a, b, "gemm_bias");
  GemmExt ext;
  ext.bias = &bias;
  return gemm_ext(a, b, spec, ext, src, std::move(out_tag));
}

WideTensor gemm_wide(const FxTensor& a, const FxTensor& b, bool trans_a, bool trans_b) {
  GemmExt ext;
  ext.trans_a = trans_a;
  ext.trans_b = trans_b;
  GemmDims d = resolve_dims(a, b, ext);
  const int need_bits = ceil_log2(d.k) + (a.format.wl() - 1) + (b.format.wl() - 1) + 1;
  if (need_bits > 63) throw AccWidthError("gemm_wide: accumulator would exceed 63 bits");

  WideTensor out;
  out.shape = {d.l, d.m};
  out.point = a.format.fl + b.format.fl;
  out.data.assign(static_cast<size_t>(d.l * d.m), 0);
  util::parallel_for(0, d.l, std::max<int64_t>(1, 4096 / std::max<int64_t>(1, d.m)),
                     [&](int64_t lo, int64_t hi) {
                       std::vector<int64_t> acc(static_cast<size_t>((hi - lo) * d.m));
                       accumulate_block<int64_t>(a, b, ext, d, lo, hi, 0, d.m, acc);
                       std::copy(acc.begin(), acc.end(), out.data.begin() + lo * d.m);
                     });
  return out;
}

FxTensor convert_wide(const WideTensor& w, FxFormat f, RoundingMode mode, const DrawSource& src,
                      std::string out_tag, Dyadic scale) {
  FxTensor out = FxTensor::zeros(w.shape, f, std::move(out_tag));
  const int k = w.point + scale.shift;
  util::parallel_for(0, out.numel(), 8192, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      I128 num = I128(w.data[i]) * scale.num;
      Draw dr{};
      if (mode == RoundingMode::Stochastic) dr = src.draw(out.tag_hash, static_cast<uint64_t>(i));
      out.data[i] = static_cast<int32_t>(fxp::convert_dyadic(num, k, f, mode, dr));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolution / pooling / elementwise
// ---------------------------------------------------------------------------

namespace {
struct ConvDims {
  int64_t n, c, h, w, oh, ow;
};

ConvDims conv_dims(const FxTensor& x, int kh, int kw, int stride, int pad) {
  if (x.shape.size() != 4) throw ShapeError("im2col: input must be N x C x H x W");
  if (stride < 1 || pad < 0 || kh < 1 || kw < 1) throw ShapeError("im2col: bad kernel geometry");
  ConvDims d{x.shape[0], x.shape[1], x.shape[2], x.shape[3], 0, 0};
  int64_t eh = d.h + 2 * pad - kh, ew = d.w + 2 * pad - kw;
  if (eh < 0 || ew < 0 || eh % stride != 0 || ew % stride != 0)
    throw ShapeError("im2col: non-integral output dimensions");
  d.oh = eh / stride + 1;
  d.ow = ew / stride + 1;
  return d;
}
}  // namespace

FxTensor im2col(const FxTensor& x, int kh, int kw, int stride, int pad) {
  ConvDims d = conv_dims(x, kh, kw, stride, pad);
  FxTensor out = FxTensor::zeros({d.c * kh * kw, d.n * d.oh * d.ow}, x.format, x.tag + "/cols");
  const int64_t cols = d.n * d.oh * d.ow;
  for (int64_t c = 0; c < d.c; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const int64_t row = (c * kh + ki) * kw + kj;
        int32_t* dst = out.data.data() + row * cols;
        for (int64_t n = 0; n < d.n; ++n) {
          const int32_t* img = x.data.data() + (n * d.c + c) * d.h * d.w;
          for (int64_t oh = 0; oh < d.oh; ++oh) {
            const int64_t ih = oh * stride - pad + ki;
            int32_t* drow = dst + (n * d.oh + oh) * d.ow;
            if (ih < 0 || ih >= d.h) continue;  // zero padding already in place
            for (int64_t ow = 0; ow < d.ow; ++ow) {
              const int64_t iw = ow * stride - pad + kj;
              if (iw >= 0 && iw < d.w) drow[ow] = img[ih * d.w + iw];
            }
          }
        }
      }
    }
  }
  return out;
}

WideTensor col2im_wide(const WideTensor& cols, int64_t n, int64_t c, int64_t h, int64_t w, int kh,
                       int kw, int stride, int pad) {
  WideTensor out;
  out.shape = {n, c, h, w};
  out.point = cols.point;
  out.data.assign(static_cast<size_t>(n * c * h * w), 0);
  int64_t eh = h + 2 * pad - kh, ew = w + 2 * pad - kw;
  if (eh < 0 || ew < 0 || eh % stride != 0 || ew % stride != 0)
    throw ShapeError("col2im: non-integral output dimensions");
  const int64_t oh = eh / stride + 1, ow = ew / stride + 1;
  if (cols.shape != std::vector<int64_t>{c * kh * kw, n * oh * ow})
    throw ShapeError("col2im: column matrix shape mismatch");

  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const int64_t row = (ci * kh + ki) * kw + kj;
        const int64_t* srcrow = cols.data.data() + row * (n * oh * ow);
        for (int64_t ni = 0; ni < n; ++ni) {
          int64_t* img = out.data.data() + (ni * c + ci) * h * w;
          for (int64_t o = 0; o < oh; ++o) {
            const int64_t ih = o * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            const int64_t* srow = srcrow + (ni * oh + o) * ow;
            for (int64_t q = 0; q < ow; ++q) {
              const int64_t iw = q * stride - pad + kj;
              if (iw >= 0 && iw < w) img[ih * w + iw] += srow[q];
            }
          }
        }
      }
    }
  }
  return out;
}

FxTensor conv2d(const FxTensor& x, const FxTensor& w, const FxTensor& bias, int stride, int pad,
                const GemmSpec& spec, const DrawSource& src, std::string out_tag) {
  if (w.shape.size() != 4) throw ShapeError("conv2d: weights must be F x C x kh x kw");
  const int64_t f = w.shape[0];
  const int kh = static_cast<int>(w.shape[2]), kw = static_cast<int>(w.shape[3]);
  ConvDims d = conv_dims(x, kh, kw, stride, pad);
  if (w.shape[1] != d.c) throw ShapeError("conv2d: channel mismatch");

  FxTensor cols = im2col(x, kh, kw, stride, pad);
  FxTensor w2d = w;
  w2d.shape = {f, d.c * kh * kw};

  // Bias is per-filter, i.e. per output ROW here; fold it through the l x m
  // kernel by accumulating with the transposed layout instead: rows = cols.
  GemmExt ext;
  ext.bias = nullptr;
  FxTensor g = [&] {
    if (bias.numel() == 0) return gemm_ext(w2d, cols, spec, ext, src, out_tag + "/g");
    // Compute (cols^T . w2d^T) so the per-filter bias lands on columns.
    GemmExt e2;
    e2.trans_a = true;
    e2.trans_b = true;
    e2.bias = &bias;
    return gemm_ext(cols, w2d, spec, e2, src, out_tag + "/g");
  }();

  FxTensor out = FxTensor::zeros({d.n, f, d.oh, d.ow}, spec.out_format, std::move(out_tag));
  const int64_t hw = d.oh * d.ow;
  if (bias.numel() == 0) {
    // g is F x (N*H'*W')
    for (int64_t fi = 0; fi < f; ++fi)
      for (int64_t ni = 0; ni < d.n; ++ni)
        std::copy_n(g.data.data() + fi * (d.n * hw) + ni * hw, hw,
                    out.data.data() + (ni * f + fi) * hw);
  } else {
    // g is (N*H'*W') x F
    for (int64_t ni = 0; ni < d.n; ++ni)
      for (int64_t p = 0; p < hw; ++p)
        for (int64_t fi = 0; fi < f; ++fi)
          out.data[(ni * f + fi) * hw + p] = g.data[(ni * hw + p) * f + fi];
  }
  return out;
}

PoolResult maxpool(const FxTensor& x, int window, int stride) {
  if (x.shape.size() != 4) throw ShapeError("maxpool: input must be N x C x H x W");
  if (window < 1 || stride < 1 || x.shape[2] < window || x.shape[3] < window)
    throw ShapeError("maxpool: window/stride incompatible with input");
  const int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const int64_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;

  PoolResult r{FxTensor::zeros({n, c, oh, ow}, x.format, x.tag + "/pool"), {}};
  r.argmax.assign(static_cast<size_t>(n * c * oh * ow), 0);
  int64_t oi = 0;
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t base = (ni * c + ci) * h * w;
      for (int64_t o = 0; o < oh; ++o) {
        for (int64_t q = 0; q < ow; ++q, ++oi) {
          int32_t best = 0;
          int64_t best_idx = -1;
          for (int64_t ki = 0; ki < window; ++ki) {
            for (int64_t kj = 0; kj < window; ++kj) {
              const int64_t idx = base + (o * stride + ki) * w + (q * stride + kj);
              if (best_idx < 0 || x.data[idx] > best) {
                best = x.data[idx];
                best_idx = idx;
              }
            }
          }
          r.out.data[oi] = best;
          r.argmax[oi] = best_idx;
        }
      }
    }
  }
  return r;
}

FxTensor relu(const FxTensor& x) {
  FxTensor out = x;
  for (auto& m : out.data)
    if (m < 0) m = 0;
  return out;
}

FxTensor quantize(const FxTensor& x, FxFormat f, RoundingMode mode, const DrawSource& src,
                  std::string out_tag) {
  FxTensor out = FxTensor::zeros(x.shape, f, std::move(out_tag));
  const int k = x.format.fl;
  util::parallel_for(0, x.numel(), 8192, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      Draw dr{};
      if (mode == RoundingMode::Stochastic) dr = src.draw(out.tag_hash, static_cast<uint64_t>(i));
      out.data[i] = static_cast<int32_t>(fxp::convert_dyadic(x.data[i], k, f, mode, dr));
    }
  });
  return out;
}

FxTensor axpby_quantize(Dyadic ca, const FxTensor& a, Dyadic cb, const FxTensor& b, FxFormat f,
                        RoundingMode mode, const DrawSource& src, std::string out_tag) {
  if (a.shape != b.shape) throw ShapeError("axpby_quantize: shape mismatch");
  const int k = std::max(ca.shift + a.format.fl, cb.shift + b.format.fl);
  const int ua = k - (ca.shift + a.format.fl);
  const int ub = k - (cb.shift + b.format.fl);
  if (ua > 40 || ub > 40 || k > 120) throw AccWidthError("axpby_quantize: carrier too wide");

  FxTensor out = FxTensor::zeros(a.shape, f, std::move(out_tag));
  util::parallel_for(0, a.numel(), 8192, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      I128 num = (I128(int64_t(a.data[i])) * ca.num) << ua;
      num += (I128(int64_t(b.data[i])) * cb.num) << ub;
      Draw dr{};
      if (mode == RoundingMode::Stochastic) dr = src.draw(out.tag_hash, static_cast<uint64_t>(i));
      out.data[i] = static_cast<int32_t>(fxp::convert_dyadic(num, k, f, mode, dr));
    }
  });
  return out;
}

FxTensor add_saturate(const FxTensor& a, const FxTensor& b, std::string out_tag) {
  if (a.shape != b.shape) throw ShapeError("add_saturate: shape mismatch");
  if (a.format != b.format) throw fxp::FormatError("add_saturate: format mismatch");
  FxTensor out = FxTensor::zeros(a.shape, a.format, std::move(out_tag));
  const int64_t lo = a.format.min_mantissa(), hi = a.format.max_mantissa();
  for (int64_t i = 0; i < a.numel(); ++i) {
    int64_t s = int64_t(a.data[i]) + b.data[i];
    out.data[i] = static_cast<int32_t>(std::clamp(s, lo, hi));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Real <-> fixed plumbing
// ---------------------------------------------------------------------------

std::vector<double> to_doubles(const FxTensor& t) {
  std::vector<double> out(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i)
    out[i] = std::ldexp(static_cast<double>(t.data[i]), -t.format.fl);
  return out;
}

FxTensor from_doubles(std::vector<int64_t> shape, std::span<const double> values, FxFormat f,
                      RoundingMode mode, const DrawSource& src, std::string tag) {
  FxTensor out = FxTensor::zeros(std::move(shape), f, std::move(tag));
  if (out.numel() != static_cast<int64_t>(values.size()))
    throw ShapeError("from_doubles: value count mismatch");
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double x = values[i];
    if (!std::isfinite(x)) throw std::invalid_argument("from_doubles: non-finite value");
    Draw dr{};
    if (mode == RoundingMode::Stochastic) dr = src.draw(out.tag_hash, static_cast<uint64_t>(i));
    // Exact dyadic decomposition of the double.
    int exp = 0;
    double m = std::frexp(x, &exp);
    auto mant = static_cast<int64_t>(std::ldexp(m, 53));
    int k = 53 - exp;
    if (k < 0) {
      if (k < -60) throw std::invalid_argument("from_doubles: magnitude too large");
      out.data[i] = static_cast<int32_t>(fxp::convert_dyadic(I128(mant) << -k, 0, f, mode, dr));
    } else if (k <= 120) {
      out.data[i] = static_cast<int32_t>(fxp::convert_dyadic(mant, k, f, mode, dr));
    } else {
      // Subnormal-scale values: exact rational fallback.
      out.data[i] = static_cast<int32_t>(fxp::convert(fxp::Rational::from_double(x), f, mode, dr).mantissa);
    }
  }
  return out;
}

}  // namespace fixnet::fxt
