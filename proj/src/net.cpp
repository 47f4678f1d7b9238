// SPDX-License-Identifier: Apache-2.0
#include "fixnet/net.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

#include "fixnet/parallel.hpp"

namespace fixnet::net {

using fxt::DrawSource;
using fxt::GemmExt;
using fxt::GemmSpec;
using fxt::KeyedDraws;

// ---------------------------------------------------------------------------
// Architectures
// ---------------------------------------------------------------------------

namespace {

int64_t scaled(int64_t full, double scale) {
  return std::max<int64_t>(1, std::llround(static_cast<double>(full) * scale));
}

LayerSpec fc_layer(int64_t in, int64_t out, FxFormat wf, FxFormat of) {
  LayerSpec l;
  l.kind = LayerKind::FullyConnected;
  l.in = in;
  l.out = out;
  l.weight_format = wf;
  l.output_format = of;
  return l;
}

LayerSpec conv_layer(int64_t filters, int64_t in_ch, int64_t k, int stride, int pad, FxFormat wf,
                     FxFormat of) {
  LayerSpec l;
  l.kind = LayerKind::Conv2d;
  l.filters = filters;
  l.in_ch = in_ch;
  l.kh = k;
  l.kw = k;
  l.stride = stride;
  l.pad = pad;
  l.weight_format = wf;
  l.output_format = of;
  return l;
}

LayerSpec pool_layer(int window, int stride) {
  LayerSpec l;
  l.kind = LayerKind::MaxPool;
  l.window = window;
  l.pool_stride = stride;
  return l;
}

LayerSpec relu_layer() {
  LayerSpec l;
  l.kind = LayerKind::ReLU;
  return l;
}

LayerSpec softmax_layer() {
  LayerSpec l;
  l.kind = LayerKind::SoftmaxXent;
  return l;
}

}  // namespace

NetSpec build_mnist_dnn(double scale, FxFormat wf, FxFormat of) {
  const int64_t hidden = scaled(1000, scale);
  NetSpec s;
  s.name = "mnist_dnn";
  s.in_c = 1;
  s.in_h = 28;
  s.in_w = 28;
  s.input_format = of;
  s.classes = 10;
  s.layers = {fc_layer(784, hidden, wf, of), relu_layer(),
              fc_layer(hidden, hidden, wf, of), relu_layer(),
              fc_layer(hidden, 10, wf, of), softmax_layer()};
  return s;
}

NetSpec build_mnist_cnn(double scale, FxFormat wf, FxFormat of) {
  const int64_t f1 = scaled(8, scale), f2 = scaled(16, scale), fcw = scaled(128, scale);
  NetSpec s;
  s.name = "mnist_cnn";
  s.in_c = 1;
  s.in_h = 28;
  s.in_w = 28;
  s.input_format = of;
  s.classes = 10;
  // 28 -> conv5 -> 24 -> pool2 -> 12 -> conv5 -> 8 -> pool2 -> 4
  s.layers = {conv_layer(f1, 1, 5, 1, 0, wf, of),  relu_layer(), pool_layer(2, 2),
              conv_layer(f2, f1, 5, 1, 0, wf, of), relu_layer(), pool_layer(2, 2),
              fc_layer(f2 * 4 * 4, fcw, wf, of),   relu_layer(),
              fc_layer(fcw, 10, wf, of),           softmax_layer()};
  return s;
}

NetSpec build_cifar_cnn(double scale, FxFormat wf, FxFormat of) {
  const int64_t f = scaled(64, scale);
  NetSpec s;
  s.name = "cifar_cnn";
  s.in_c = 3;
  s.in_h = 32;
  s.in_w = 32;
  s.input_format = of;
  s.classes = 10;
  // 32 -> conv5(pad 2) -> 32 -> pool3/2 -> 15 -> conv -> 15 -> pool -> 7
  //    -> conv -> 7 -> pool -> 3
  s.layers = {conv_layer(f, 3, 5, 1, 2, wf, of), relu_layer(), pool_layer(3, 2),
              conv_layer(f, f, 5, 1, 2, wf, of), relu_layer(), pool_layer(3, 2),
              conv_layer(f, f, 5, 1, 2, wf, of), relu_layer(), pool_layer(3, 2),
              fc_layer(f * 3 * 3, 10, wf, of),   softmax_layer()};
  return s;
}

int64_t param_count(const NetSpec& spec) {
  int64_t n = 0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::FullyConnected) n += l.in * l.out + l.out;
    if (l.kind == LayerKind::Conv2d) n += l.filters * l.in_ch * l.kh * l.kw + l.filters;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

std::string layer_tag(size_t li, const char* what) {
  return "L" + std::to_string(li) + "/" + what;
}

// Deterministic Gaussian stream shared by the fixed and float paths, so a
// fixed-point run and its float baseline start from the same draw sequence.
std::vector<double> gaussian_init(uint64_t seed, size_t li, int64_t count, double sigma) {
  const uint64_t tag = fxp::hash_tag("init/" + layer_tag(li, "W"));
  std::vector<double> v(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    fxp::U128Bits bits = fxp::keyed_bits(fxp::RngKey{seed, tag, static_cast<uint64_t>(i), 0});
    double u1 = static_cast<double>(bits.hi >> 11) * 0x1.0p-53;  // [0,1)
    double u2 = static_cast<double>(bits.lo >> 11) * 0x1.0p-53;
    double z = std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * M_PI * u2);
    v[i] = sigma * z;
  }
  return v;
}

double init_sigma(const LayerSpec& l, InitScheme init) {
  if (init == InitScheme::Gaussian001) return 0.01;
  const int64_t fan_in =
      l.kind == LayerKind::FullyConnected ? l.in : l.in_ch * l.kh * l.kw;
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

std::vector<int64_t> weight_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::FullyConnected) return {l.in, l.out};
  return {l.filters, l.in_ch, l.kh, l.kw};
}

int64_t bias_len(const LayerSpec& l) {
  return l.kind == LayerKind::FullyConnected ? l.out : l.filters;
}

}  // namespace

NetState init_weights(const NetSpec& spec, uint64_t seed, RoundingMode mode, InitScheme init,
                      double init_scale) {
  NetState st;
  st.seed = seed;
  st.step = 0;
  st.input_format = spec.input_format;
  st.params.resize(spec.layers.size());
  st.weight_formats.resize(spec.layers.size());
  st.output_formats.resize(spec.layers.size());
  KeyedDraws src(seed, 0);
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    st.weight_formats[li] = l.weight_format;
    st.output_formats[li] = l.output_format;
    if (l.kind != LayerKind::FullyConnected && l.kind != LayerKind::Conv2d) continue;
    auto vals =
        gaussian_init(seed, li, fxt::numel_of(weight_shape(l)), init_scale * init_sigma(l, init));
    auto& p = st.params[li];
    p.used = true;
    p.w = fxt::from_doubles(weight_shape(l), vals, l.weight_format, mode, src, layer_tag(li, "W"));
    p.b = FxTensor::zeros({bias_len(l)}, l.weight_format, layer_tag(li, "B"));
    p.vw = FxTensor::zeros(weight_shape(l), l.weight_format, layer_tag(li, "vW"));
    p.vb = FxTensor::zeros({bias_len(l)}, l.weight_format, layer_tag(li, "vB"));
  }
  return st;
}

RealNetState init_weights_real(const NetSpec& spec, uint64_t seed, InitScheme init,
                               double init_scale) {
  RealNetState st;
  st.seed = seed;
  st.step = 0;
  st.input_format = spec.input_format;
  st.params.resize(spec.layers.size());
  st.weight_formats.resize(spec.layers.size());
  st.output_formats.resize(spec.layers.size());
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    st.weight_formats[li] = l.weight_format;
    st.output_formats[li] = l.output_format;
    if (l.kind != LayerKind::FullyConnected && l.kind != LayerKind::Conv2d) continue;
    auto& p = st.params[li];
    p.used = true;
    p.w = RealTensor::zeros(weight_shape(l), layer_tag(li, "W"));
    auto vals = gaussian_init(seed, li, p.w.numel(), init_scale * init_sigma(l, init));
    p.w.data.assign(vals.begin(), vals.end());
    p.b = RealTensor::zeros({bias_len(l)}, layer_tag(li, "B"));
    p.vw = RealTensor::zeros(weight_shape(l), layer_tag(li, "vW"));
    p.vb = RealTensor::zeros({bias_len(l)}, layer_tag(li, "vB"));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace {

template <class T>
T reshape(const T& t, std::vector<int64_t> shape) {
  if (fxt::numel_of(shape) != t.numel()) throw fxt::ShapeError("reshape: element count mismatch");
  T out = t;
  out.shape = std::move(shape);
  return out;
}

template <class T>
T flatten2d(const T& t) {
  if (t.shape.size() == 2) return t;
  return reshape(t, {t.shape[0], t.numel() / t.shape[0]});
}

// Softmax rows + predictions from exact layer-output values.
void softmax_rows(const std::vector<double>& logits, int64_t n, int64_t classes,
                  std::vector<double>& probs, std::vector<int>& preds) {
  probs.resize(static_cast<size_t>(n * classes));
  preds.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * classes;
    double mx = row[0];
    int arg = 0;
    for (int64_t c = 1; c < classes; ++c)
      if (row[c] > mx) {
        mx = row[c];
        arg = static_cast<int>(c);
      }
    double sum = 0;
    for (int64_t c = 0; c < classes; ++c) {
      double e = std::exp(row[c] - mx);
      probs[i * classes + c] = e;
      sum += e;
    }
    for (int64_t c = 0; c < classes; ++c) probs[i * classes + c] /= sum;
    preds[i] = arg;
  }
}

double xent_and_output_delta(const std::vector<double>& probs, std::span<const int32_t> labels,
                             int64_t n, int64_t classes, std::vector<double>& delta) {
  delta.resize(static_cast<size_t>(n * classes));
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    int32_t y = labels[i];
    if (y < 0 || y >= classes) throw std::out_of_range("backward: label out of range");
    for (int64_t c = 0; c < classes; ++c)
      delta[i * classes + c] = probs[i * classes + c] - (c == y ? 1.0 : 0.0);
    loss -= std::log(std::max(probs[i * classes + y], 1e-300));
  }
  return loss / static_cast<double>(n);
}

// Per-layer output format chain: FC/Conv impose their output format,
// ReLU/MaxPool/Softmax carry their input format through.
std::vector<FxFormat> format_chain(const NetSpec& spec, const NetState& st) {
  std::vector<FxFormat> out(spec.layers.size());
  FxFormat cur = st.input_format;
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const auto k = spec.layers[li].kind;
    if (k == LayerKind::FullyConnected || k == LayerKind::Conv2d) cur = st.output_formats[li];
    out[li] = cur;
  }
  return out;
}

// dB = Convert(scale * (sum of delta rows or columns) + coeff * bias).
FxTensor sum_quantize(const FxTensor& m, bool over_rows, Dyadic scale, const FxTensor& addend,
                      Dyadic coeff, FxFormat fmt, RoundingMode mode, const DrawSource& src,
                      std::string tag) {
  const int64_t r = m.shape[0], c = m.shape[1];
  const int64_t out_n = over_rows ? c : r;
  std::vector<int64_t> acc(static_cast<size_t>(out_n), 0);
  if (over_rows) {
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) acc[j] += m.data[i * c + j];
  } else {
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) acc[i] += m.data[i * c + j];
  }
  FxTensor out = FxTensor::zeros({out_n}, fmt, std::move(tag));
  const int ka = m.format.fl + scale.shift;
  const int kb = addend.format.fl + coeff.shift;
  const int k = std::max(ka, kb);
  for (int64_t i = 0; i < out_n; ++i) {
    __int128 num = (__int128(acc[i]) * scale.num) << (k - ka);
    num += (__int128(int64_t(addend.data[i])) * coeff.num) << (k - kb);
    fxp::Draw dr{};
    if (mode == RoundingMode::Stochastic) dr = src.draw(out.tag_hash, static_cast<uint64_t>(i));
    out.data[i] = static_cast<int32_t>(fxp::convert_dyadic(num, k, fmt, mode, dr));
  }
  return out;
}

// delta (N,F,P) -> (F, N*P)
FxTensor to_filter_major(const FxTensor& d4) {
  const int64_t n = d4.shape[0], f = d4.shape[1], p = d4.shape[2] * d4.shape[3];
  FxTensor out = FxTensor::zeros({f, n * p}, d4.format, d4.tag + "/fm");
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t fi = 0; fi < f; ++fi)
      std::copy_n(d4.data.data() + (ni * f + fi) * p, p, out.data.data() + fi * (n * p) + ni * p);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Fixed-point forward/backward/step
// ---------------------------------------------------------------------------

Trace forward(const NetSpec& spec, const NetState& state, const FxTensor& x, RoundingMode mode) {
  if (x.format != state.input_format)
    throw fxp::FormatError("forward: input not quantized to the network input format");
  KeyedDraws src(state.seed, state.step);
  Trace tr;
  tr.outputs.resize(spec.layers.size());
  tr.argmax.resize(spec.layers.size());

  FxTensor cur = x;
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    switch (l.kind) {
      case LayerKind::FullyConnected: {
        FxTensor in2d = flatten2d(cur);
        if (in2d.shape[1] != l.in) throw fxt::ShapeError("forward: FC fan-in mismatch");
        const auto& p = state.params[li];
        GemmSpec gs{state.output_formats[li], mode};
        GemmExt ext;
        ext.bias = &p.b;
        cur = fxt::gemm_ext(in2d, p.w, gs, ext, src, layer_tag(li, "Y"));
        break;
      }
      case LayerKind::Conv2d: {
        const auto& p = state.params[li];
        GemmSpec gs{state.output_formats[li], mode};
        cur = fxt::conv2d(cur, p.w, p.b, l.stride, l.pad, gs, src, layer_tag(li, "Y"));
        break;
      }
      case LayerKind::MaxPool: {
        auto r = fxt::maxpool(cur, l.window, l.pool_stride);
        cur = std::move(r.out);
        tr.argmax[li] = std::move(r.argmax);
        break;
      }
      case LayerKind::ReLU:
        cur = fxt::relu(cur);
        break;
      case LayerKind::SoftmaxXent: {
        FxTensor logits = flatten2d(cur);
        if (logits.shape[1] != spec.classes) throw fxt::ShapeError("forward: classifier width");
        softmax_rows(fxt::to_doubles(logits), logits.shape[0], spec.classes, tr.probs,
                     tr.predictions);
        cur = std::move(logits);
        break;
      }
    }
    tr.outputs[li] = cur;
  }
  return tr;
}

Gradients backward(const NetSpec& spec, const NetState& state, const Trace& trace,
                   const FxTensor& x, std::span<const int32_t> labels, RoundingMode mode,
                   Dyadic inv_batch, Dyadic weight_decay) {
  const size_t last = spec.layers.size() - 1;
  if (spec.layers[last].kind != LayerKind::SoftmaxXent)
    throw std::logic_error("backward: net must end in SoftmaxXent");
  const int64_t n = x.shape[0];
  if (static_cast<int64_t>(labels.size()) != n) throw fxt::ShapeError("backward: label count");

  KeyedDraws src(state.seed, state.step);
  const auto fmt_out = format_chain(spec, state);
  auto fmt_in = [&](size_t li) { return li == 0 ? state.input_format : fmt_out[li - 1]; };
  auto layer_input = [&](size_t li) -> const FxTensor& {
    return li == 0 ? x : trace.outputs[li - 1];
  };

  Gradients g;
  g.grads.resize(spec.layers.size());

  // Exact cross-entropy gradient, then one quantization into the delta
  // format (= the output format of the layer feeding the softmax).
  std::vector<double> ddelta;
  g.loss = xent_and_output_delta(trace.probs, labels, n, spec.classes, ddelta);
  FxTensor delta = fxt::from_doubles({n, spec.classes}, ddelta, fmt_out[last], mode, src,
                                     layer_tag(last, "dY"));

  for (size_t li = last; li-- > 0;) {
    const LayerSpec& l = spec.layers[li];
    switch (l.kind) {
      case LayerKind::SoftmaxXent:
        break;
      case LayerKind::ReLU: {
        FxTensor masked = delta;
        const FxTensor& out = trace.outputs[li];
        for (int64_t i = 0; i < masked.numel(); ++i)
          if (out.data[i] <= 0) masked.data[i] = 0;
        delta = std::move(masked);
        break;
      }
      case LayerKind::MaxPool: {
        const FxTensor& below = layer_input(li);
        FxTensor next = FxTensor::zeros(below.shape, delta.format, layer_tag(li, "dX"));
        std::vector<int64_t> acc(static_cast<size_t>(below.numel()), 0);
        const auto& arg = trace.argmax[li];
        for (size_t oi = 0; oi < arg.size(); ++oi) acc[arg[oi]] += delta.data[oi];
        const int64_t lo = delta.format.min_mantissa(), hi = delta.format.max_mantissa();
        for (int64_t i = 0; i < next.numel(); ++i)
          next.data[i] = static_cast<int32_t>(std::clamp(acc[i], lo, hi));
        delta = std::move(next);
        break;
      }
      case LayerKind::FullyConnected: {
        const auto& p = state.params[li];
        FxTensor in2d = flatten2d(layer_input(li));
        FxTensor d2d = flatten2d(delta);
        auto& gp = g.grads[li];
        gp.used = true;
        {
          GemmSpec gs{state.weight_formats[li], mode};
          GemmExt ext;
          ext.trans_a = true;       // W-shaped: in x out
          ext.scale = inv_batch;
          ext.addend = &p.w;
          ext.addend_scale = weight_decay;
          gp.w = fxt::gemm_ext(in2d, d2d, gs, ext, src, layer_tag(li, "dW"));
        }
        gp.b = sum_quantize(d2d, /*over_rows=*/true, inv_batch, p.b, weight_decay,
                            state.weight_formats[li], mode, src, layer_tag(li, "dB"));
        if (li > 0) {
          GemmSpec gs{fmt_in(li), mode};
          GemmExt ext;
          ext.trans_b = true;  // delta . W^T
          FxTensor dprev = fxt::gemm_ext(d2d, p.w, gs, ext, src, layer_tag(li, "dX"));
          delta = reshape(dprev, layer_input(li).shape);
        }
        break;
      }
      case LayerKind::Conv2d: {
        const auto& p = state.params[li];
        const FxTensor& below = layer_input(li);
        FxTensor cols = fxt::im2col(below, static_cast<int>(l.kh), static_cast<int>(l.kw),
                                    l.stride, l.pad);
        FxTensor d2d = to_filter_major(delta);  // F x (N*P)
        FxTensor w2d = reshape(p.w, {l.filters, l.in_ch * l.kh * l.kw});
        auto& gp = g.grads[li];
        gp.used = true;
        {
          GemmSpec gs{state.weight_formats[li], mode};
          GemmExt ext;
          ext.trans_b = true;  // d2d . cols^T: F x (C*kh*kw)
          ext.scale = inv_batch;
          ext.addend = &w2d;
          ext.addend_scale = weight_decay;
          FxTensor dw2d = fxt::gemm_ext(d2d, cols, gs, ext, src, layer_tag(li, "dW"));
          gp.w = reshape(dw2d, weight_shape(l));
        }
        gp.b = sum_quantize(d2d, /*over_rows=*/false, inv_batch, p.b, weight_decay,
                            state.weight_formats[li], mode, src, layer_tag(li, "dB"));
        if (li > 0) {
          // Exact wide chain: W^T . delta, scattered back through col2im,
          // then a single Convert per input element.
          fxt::WideTensor wcols = fxt::gemm_wide(w2d, d2d, /*trans_a=*/true);
          fxt::WideTensor wimg =
              fxt::col2im_wide(wcols, below.shape[0], below.shape[1], below.shape[2],
                               below.shape[3], static_cast<int>(l.kh), static_cast<int>(l.kw),
                               l.stride, l.pad);
          delta = fxt::convert_wide(wimg, fmt_in(li), mode, src, layer_tag(li, "dX"));
        }
        break;
      }
    }
  }
  return g;
}

StepStats sgd_step(NetState& state, const Gradients& grads, const Hyperparams& hp) {
  KeyedDraws src(state.seed, state.step);
  StepStats stats;
  const Dyadic neg_lr{-hp.lr.num, hp.lr.shift};
  const Dyadic one = Dyadic::one();
  for (size_t li = 0; li < state.params.size(); ++li) {
    auto& p = state.params[li];
    if (!p.used) continue;
    const FxFormat fmt = state.weight_formats[li];
    FxTensor vw = fxt::axpby_quantize(hp.momentum, p.vw, neg_lr, grads.grads[li].w, fmt, hp.mode,
                                      src, layer_tag(li, "vW"));
    FxTensor vb = fxt::axpby_quantize(hp.momentum, p.vb, neg_lr, grads.grads[li].b, fmt, hp.mode,
                                      src, layer_tag(li, "vB"));
    for (int32_t m : vw.data) stats.zero_updates += (m == 0);
    for (int32_t m : vb.data) stats.zero_updates += (m == 0);
    stats.update_elems += vw.numel() + vb.numel();
    p.w = fxt::axpby_quantize(one, p.w, one, vw, fmt, hp.mode, src, layer_tag(li, "W"));
    p.b = fxt::axpby_quantize(one, p.b, one, vb, fmt, hp.mode, src, layer_tag(li, "B"));
    p.vw = std::move(vw);
    p.vb = std::move(vb);
  }
  ++state.step;
  return stats;
}

void widen_format(NetState& state, int delta_bits) {
  if (delta_bits <= 0) throw std::invalid_argument("widen_format: delta must be > 0");
  auto widen_fmt = [&](FxFormat& f) {
    if (f.wl() + delta_bits > 31) throw fxp::FormatError("widen_format: wl would exceed 31");
    f = FxFormat::make(f.il, f.fl + delta_bits);
  };
  auto widen_tensor = [&](FxTensor& t) {
    widen_fmt(t.format);
    for (auto& m : t.data) m <<= delta_bits;  // exact, value preserving
  };
  for (auto& f : state.weight_formats)
    if (f.il >= 1 && f.wl() >= 2) widen_fmt(f);
  for (auto& f : state.output_formats)
    if (f.il >= 1 && f.wl() >= 2) widen_fmt(f);
  widen_fmt(state.input_format);
  for (auto& p : state.params) {
    if (!p.used) continue;
    widen_tensor(p.w);
    widen_tensor(p.b);
    widen_tensor(p.vw);
    widen_tensor(p.vb);
  }
}

// ---------------------------------------------------------------------------
// Float-baseline path
// ---------------------------------------------------------------------------

namespace {

RealTensor real_gemm(const RealTensor& a, const RealTensor& b, bool ta, bool tb,
                     const RealTensor* bias, const RealTensor* addend, double scale,
                     double coeff) {
  const int64_t l = ta ? a.shape[1] : a.shape[0];
  const int64_t k = ta ? a.shape[0] : a.shape[1];
  const int64_t kb = tb ? b.shape[1] : b.shape[0];
  const int64_t m = tb ? b.shape[0] : b.shape[1];
  if (k != kb) throw fxt::ShapeError("real_gemm: inner dimensions disagree");
  RealTensor out = RealTensor::zeros({l, m}, "g");
  util::parallel_for(0, l, std::max<int64_t>(1, 4096 / std::max<int64_t>(1, m)),
                     [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      double* row = out.data.data() + i * m;
      if (!ta && !tb) {
        for (int64_t t = 0; t < k; ++t) {
          const double av = a.data[i * k + t];
          if (av == 0) continue;
          const double* brow = b.data.data() + t * m;
          for (int64_t j = 0; j < m; ++j) row[j] += av * brow[j];
        }
      } else if (!ta && tb) {
        for (int64_t j = 0; j < m; ++j) {
          double s = 0;
          for (int64_t t = 0; t < k; ++t) s += a.data[i * k + t] * b.data[j * k + t];
          row[j] = s;
        }
      } else if (ta && !tb) {
        for (int64_t t = 0; t < k; ++t) {
          const double av = a.data[t * l + i];
          if (av == 0) continue;
          const double* brow = b.data.data() + t * m;
          for (int64_t j = 0; j < m; ++j) row[j] += av * brow[j];
        }
      } else {
        for (int64_t t = 0; t < k; ++t) {
          const double av = a.data[t * l + i];
          if (av == 0) continue;
          for (int64_t j = 0; j < m; ++j) row[j] += av * b.data[j * k + t];
        }
      }
      for (int64_t j = 0; j < m; ++j) {
        double v = row[j] * scale;
        if (bias) v += bias->data[j] * scale;
        if (addend) v += coeff * addend->data[i * m + j];
        row[j] = v;
      }
    }
  });
  return out;
}

struct RealConvDims {
  int64_t n, c, h, w, oh, ow;
};

RealConvDims real_conv_dims(const RealTensor& x, int kh, int kw, int stride, int pad) {
  RealConvDims d{x.shape[0], x.shape[1], x.shape[2], x.shape[3], 0, 0};
  int64_t eh = d.h + 2 * pad - kh, ew = d.w + 2 * pad - kw;
  if (eh < 0 || ew < 0 || eh % stride != 0 || ew % stride != 0)
    throw fxt::ShapeError("real conv: non-integral output dimensions");
  d.oh = eh / stride + 1;
  d.ow = ew / stride + 1;
  return d;
}

RealTensor real_im2col(const RealTensor& x, int kh, int kw, int stride, int pad) {
  RealConvDims d = real_conv_dims(x, kh, kw, stride, pad);
  RealTensor out = RealTensor::zeros({d.c * kh * kw, d.n * d.oh * d.ow}, "cols");
  const int64_t cols = d.n * d.oh * d.ow;
  for (int64_t c = 0; c < d.c; ++c)
    for (int64_t ki = 0; ki < kh; ++ki)
      for (int64_t kj = 0; kj < kw; ++kj) {
        const int64_t row = (c * kh + ki) * kw + kj;
        double* dst = out.data.data() + row * cols;
        for (int64_t n = 0; n < d.n; ++n) {
          const double* img = x.data.data() + (n * d.c + c) * d.h * d.w;
          for (int64_t oh = 0; oh < d.oh; ++oh) {
            const int64_t ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= d.h) continue;
            double* drow = dst + (n * d.oh + oh) * d.ow;
            for (int64_t ow = 0; ow < d.ow; ++ow) {
              const int64_t iw = ow * stride - pad + kj;
              if (iw >= 0 && iw < d.w) drow[ow] = img[ih * d.w + iw];
            }
          }
        }
      }
  return out;
}

RealTensor real_col2im(const RealTensor& cols, int64_t n, int64_t c, int64_t h, int64_t w, int kh,
                       int kw, int stride, int pad) {
  RealTensor out = RealTensor::zeros({n, c, h, w}, "img");
  int64_t eh = h + 2 * pad - kh, ew = w + 2 * pad - kw;
  const int64_t oh = eh / stride + 1, ow = ew / stride + 1;
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t ki = 0; ki < kh; ++ki)
      for (int64_t kj = 0; kj < kw; ++kj) {
        const int64_t row = (ci * kh + ki) * kw + kj;
        const double* srcrow = cols.data.data() + row * (n * oh * ow);
        for (int64_t ni = 0; ni < n; ++ni) {
          double* img = out.data.data() + (ni * c + ci) * h * w;
          for (int64_t o = 0; o < oh; ++o) {
            const int64_t ih = o * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            const double* srow = srcrow + (ni * oh + o) * ow;
            for (int64_t q = 0; q < ow; ++q) {
              const int64_t iw = q * stride - pad + kj;
              if (iw >= 0 && iw < w) img[ih * w + iw] += srow[q];
            }
          }
        }
      }
  return out;
}

RealTensor real_conv_forward(const RealTensor& x, const RealTensor& w, const RealTensor& b,
                             int stride, int pad) {
  const int64_t f = w.shape[0];
  const int kh = static_cast<int>(w.shape[2]), kw = static_cast<int>(w.shape[3]);
  RealConvDims d = real_conv_dims(x, kh, kw, stride, pad);
  RealTensor cols = real_im2col(x, kh, kw, stride, pad);
  RealTensor w2d = reshape(w, {f, w.numel() / f});
  RealTensor g = real_gemm(w2d, cols, false, false, nullptr, nullptr, 1.0, 0.0);
  RealTensor out = RealTensor::zeros({d.n, f, d.oh, d.ow}, "y");
  const int64_t hw = d.oh * d.ow;
  for (int64_t fi = 0; fi < f; ++fi)
    for (int64_t ni = 0; ni < d.n; ++ni)
      for (int64_t p = 0; p < hw; ++p)
        out.data[(ni * f + fi) * hw + p] = g.data[fi * (d.n * hw) + ni * hw + p] + b.data[fi];
  return out;
}

struct RealPool {
  RealTensor out;
  std::vector<int64_t> argmax;
};

RealPool real_maxpool(const RealTensor& x, int window, int stride) {
  const int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (h < window || w < window) throw fxt::ShapeError("real maxpool: window too large");
  const int64_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  RealPool r{RealTensor::zeros({n, c, oh, ow}, "pool"), {}};
  r.argmax.assign(static_cast<size_t>(n * c * oh * ow), 0);
  int64_t oi = 0;
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t base = (ni * c + ci) * h * w;
      for (int64_t o = 0; o < oh; ++o)
        for (int64_t q = 0; q < ow; ++q, ++oi) {
          double best = 0;
          int64_t best_idx = -1;
          for (int64_t ki = 0; ki < window; ++ki)
            for (int64_t kj = 0; kj < window; ++kj) {
              const int64_t idx = base + (o * stride + ki) * w + (q * stride + kj);
              if (best_idx < 0 || x.data[idx] > best) {
                best = x.data[idx];
                best_idx = idx;
              }
            }
          r.out.data[oi] = best;
          r.argmax[oi] = best_idx;
        }
    }
  return r;
}

RealTensor real_filter_major(const RealTensor& d4) {
  const int64_t n = d4.shape[0], f = d4.shape[1], p = d4.shape[2] * d4.shape[3];
  RealTensor out = RealTensor::zeros({f, n * p}, "fm");
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t fi = 0; fi < f; ++fi)
      std::copy_n(d4.data.data() + (ni * f + fi) * p, p, out.data.data() + fi * (n * p) + ni * p);
  return out;
}

}  // namespace

RealTrace forward_real(const NetSpec& spec, const RealNetState& state, const RealTensor& x) {
  RealTrace tr;
  tr.outputs.resize(spec.layers.size());
  tr.argmax.resize(spec.layers.size());
  RealTensor cur = x;
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    switch (l.kind) {
      case LayerKind::FullyConnected: {
        RealTensor in2d = flatten2d(cur);
        const auto& p = state.params[li];
        cur = real_gemm(in2d, p.w, false, false, &p.b, nullptr, 1.0, 0.0);
        break;
      }
      case LayerKind::Conv2d: {
        const auto& p = state.params[li];
        cur = real_conv_forward(cur, p.w, p.b, l.stride, l.pad);
        break;
      }
      case LayerKind::MaxPool: {
        auto r = real_maxpool(cur, l.window, l.pool_stride);
        cur = std::move(r.out);
        tr.argmax[li] = std::move(r.argmax);
        break;
      }
      case LayerKind::ReLU: {
        for (auto& v : cur.data)
          if (v < 0) v = 0;
        break;
      }
      case LayerKind::SoftmaxXent: {
        RealTensor logits = flatten2d(cur);
        softmax_rows(logits.data, logits.shape[0], spec.classes, tr.probs, tr.predictions);
        cur = std::move(logits);
        break;
      }
    }
    tr.outputs[li] = cur;
  }
  return tr;
}

RealGradients backward_real(const NetSpec& spec, const RealNetState& state, const RealTrace& trace,
                            const RealTensor& x, std::span<const int32_t> labels, double inv_batch,
                            double weight_decay) {
  const size_t last = spec.layers.size() - 1;
  const int64_t n = x.shape[0];
  RealGradients g;
  g.grads.resize(spec.layers.size());

  std::vector<double> ddelta;
  g.loss = xent_and_output_delta(trace.probs, labels, n, spec.classes, ddelta);
  RealTensor delta = RealTensor::zeros({n, spec.classes}, "dY");
  delta.data = std::move(ddelta);

  auto layer_input = [&](size_t li) -> const RealTensor& {
    return li == 0 ? x : trace.outputs[li - 1];
  };

  for (size_t li = last; li-- > 0;) {
    const LayerSpec& l = spec.layers[li];
    switch (l.kind) {
      case LayerKind::SoftmaxXent:
        break;
      case LayerKind::ReLU: {
        const RealTensor& out = trace.outputs[li];
        for (int64_t i = 0; i < delta.numel(); ++i)
          if (out.data[i] <= 0) delta.data[i] = 0;
        break;
      }
      case LayerKind::MaxPool: {
        const RealTensor& below = layer_input(li);
        RealTensor next = RealTensor::zeros(below.shape, "dX");
        const auto& arg = trace.argmax[li];
        for (size_t oi = 0; oi < arg.size(); ++oi) next.data[arg[oi]] += delta.data[oi];
        delta = std::move(next);
        break;
      }
      case LayerKind::FullyConnected: {
        const auto& p = state.params[li];
        RealTensor in2d = flatten2d(layer_input(li));
        RealTensor d2d = flatten2d(delta);
        auto& gp = g.grads[li];
        gp.used = true;
        gp.w = real_gemm(in2d, d2d, true, false, nullptr, &p.w, inv_batch, weight_decay);
        gp.b = RealTensor::zeros({l.out}, "dB");
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < l.out; ++j) gp.b.data[j] += d2d.data[i * l.out + j];
        for (int64_t j = 0; j < l.out; ++j)
          gp.b.data[j] = gp.b.data[j] * inv_batch + weight_decay * p.b.data[j];
        if (li > 0) {
          RealTensor dprev = real_gemm(d2d, p.w, false, true, nullptr, nullptr, 1.0, 0.0);
          delta = reshape(dprev, layer_input(li).shape);
        }
        break;
      }
      case LayerKind::Conv2d: {
        const auto& p = state.params[li];
        const RealTensor& below = layer_input(li);
        RealTensor cols = real_im2col(below, static_cast<int>(l.kh), static_cast<int>(l.kw),
                                      l.stride, l.pad);
        RealTensor d2d = real_filter_major(delta);
        RealTensor w2d = reshape(p.w, {l.filters, p.w.numel() / l.filters});
        auto& gp = g.grads[li];
        gp.used = true;
        RealTensor dw2d = real_gemm(d2d, cols, false, true, nullptr, &w2d, inv_batch, weight_decay);
        gp.w = reshape(dw2d, p.w.shape);
        gp.b = RealTensor::zeros({l.filters}, "dB");
        const int64_t np = d2d.shape[1];
        for (int64_t f = 0; f < l.filters; ++f) {
          double s = 0;
          for (int64_t j = 0; j < np; ++j) s += d2d.data[f * np + j];
          gp.b.data[f] = s * inv_batch + weight_decay * p.b.data[f];
        }
        if (li > 0) {
          RealTensor wcols = real_gemm(w2d, d2d, true, false, nullptr, nullptr, 1.0, 0.0);
          delta = real_col2im(wcols, below.shape[0], below.shape[1], below.shape[2],
                              below.shape[3], static_cast<int>(l.kh), static_cast<int>(l.kw),
                              l.stride, l.pad);
        }
        break;
      }
    }
  }
  return g;
}

StepStats sgd_step_real(RealNetState& state, const RealGradients& grads, double lr,
                        double momentum) {
  StepStats stats;
  for (size_t li = 0; li < state.params.size(); ++li) {
    auto& p = state.params[li];
    if (!p.used) continue;
    for (int64_t i = 0; i < p.w.numel(); ++i) {
      p.vw.data[i] = momentum * p.vw.data[i] - lr * grads.grads[li].w.data[i];
      p.w.data[i] += p.vw.data[i];
      stats.zero_updates += (p.vw.data[i] == 0.0);
    }
    for (int64_t i = 0; i < p.b.numel(); ++i) {
      p.vb.data[i] = momentum * p.vb.data[i] - lr * grads.grads[li].b.data[i];
      p.b.data[i] += p.vb.data[i];
      stats.zero_updates += (p.vb.data[i] == 0.0);
    }
    stats.update_elems += p.w.numel() + p.b.numel();
  }
  ++state.step;
  return stats;
}

}  // namespace fixnet::net
