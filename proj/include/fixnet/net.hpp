// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fixnet/fxtensor.hpp"

namespace fixnet::net {

using fxp::Dyadic;
using fxp::FxFormat;
using fxp::RoundingMode;
using fxt::FxTensor;
using fxt::RealTensor;

enum class LayerKind { FullyConnected, Conv2d, MaxPool, ReLU, SoftmaxXent };

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  // FullyConnected: in -> out. Weights stored in x out, bias out.
  int64_t in = 0, out = 0;
  // Conv2d: filters x in_ch x kh x kw, stride/pad.
  int64_t filters = 0, in_ch = 0, kh = 0, kw = 0;
  int stride = 1, pad = 0;
  // MaxPool
  int window = 0, pool_stride = 0;

  FxFormat weight_format{};  // FC / Conv parameters and their updates
  FxFormat output_format{};  // quantization point of the layer output Y
};

struct NetSpec {
  std::vector<LayerSpec> layers;
  int64_t in_c = 1, in_h = 1, in_w = 1;
  FxFormat input_format{};  // images are quantized into this before layer 0
  int64_t classes = 10;
  std::string name;
};

/// 784-1000-1000-10 fully connected ReLU net (hidden width scaled).
NetSpec build_mnist_dnn(double scale, FxFormat weight_fmt, FxFormat output_fmt);
/// LeNet-style: conv 8@5x5, pool 2x2, conv 16@5x5, pool 2x2, FC 128, FC 10.
NetSpec build_mnist_cnn(double scale, FxFormat weight_fmt, FxFormat output_fmt);
/// 3x (conv 64@5x5 pad 2, pool 3x3 stride 2) then a 10-way softmax layer.
NetSpec build_cifar_cnn(double scale, FxFormat weight_fmt, FxFormat output_fmt);

int64_t param_count(const NetSpec& spec);

template <class T>
struct ParamBlockT {
  T w, b, vw, vb;
  bool used = false;
};

template <class T>
struct NetStateT {
  std::vector<ParamBlockT<T>> params;  // indexed by layer
  std::vector<FxFormat> weight_formats;
  std::vector<FxFormat> output_formats;
  FxFormat input_format{};
  uint64_t seed = 0;
  uint64_t step = 0;
};
using NetState = NetStateT<FxTensor>;
using RealNetState = NetStateT<RealTensor>;

template <class T>
struct TraceT {
  std::vector<T> outputs;                    // per layer
  std::vector<std::vector<int64_t>> argmax;  // pool layers only
  std::vector<double> probs;                 // N x classes, softmax
  std::vector<int> predictions;              // per sample
};
using Trace = TraceT<FxTensor>;
using RealTrace = TraceT<RealTensor>;

template <class T>
struct GradientsT {
  std::vector<ParamBlockT<T>> grads;  // .w = dW, .b = dB
  double loss = 0.0;                  // mean cross-entropy over the minibatch
};
using Gradients = GradientsT<FxTensor>;
using RealGradients = GradientsT<RealTensor>;

struct Hyperparams {
  int64_t minibatch = 100;
  Dyadic lr{};           // per-epoch value; schedule applied by the caller
  Dyadic momentum{};
  Dyadic weight_decay{};
  RoundingMode mode = RoundingMode::Stochastic;
};

struct StepStats {
  int64_t update_elems = 0;
  int64_t zero_updates = 0;  // velocity elements quantized to exactly zero
};

enum class InitScheme {
  Gaussian001,  // N(0, sigma = 0.01)
  LeCun,        // N(0, sigma = 1/sqrt(fan_in)), the LeNet-family scaling
};

// ---------------------------------------------------------------------------
// Fixed-point path
// ---------------------------------------------------------------------------

/// Weights ~ N(0, sigma=0.01) quantized with `mode` (or fan-in-scaled under
/// InitScheme::LeCun); biases and velocities zero. Deterministic in
/// (spec, seed).
NetState init_weights(const NetSpec& spec, uint64_t seed, RoundingMode mode,
                      InitScheme init = InitScheme::Gaussian001, double init_scale = 1.0);

/// x must already be quantized to state.input_format. Every layer output is
/// quantized to its output format; softmax probabilities are computed in
/// double precision from the (exact) values of the last layer output.
Trace forward(const NetSpec& spec, const NetState& state, const FxTensor& x, RoundingMode mode);

/// Cross-entropy gradient at the softmax input is quantized into the last
/// layer's output format; every GEMM along the chain accumulates exactly and
/// rounds once per element. dW = Convert(inv_batch * raw + decay * W).
Gradients backward(const NetSpec& spec, const NetState& state, const Trace& trace,
                   const FxTensor& x, std::span<const int32_t> labels, RoundingMode mode,
                   Dyadic inv_batch, Dyadic weight_decay);

/// v <- Convert(momentum*v - lr*dW); W <- Convert(W + v). Increments the
/// step counter (rotating all draw keys).
StepStats sgd_step(NetState& state, const Gradients& grads, const Hyperparams& hp);

/// Adds delta fractional bits to every format in the state; mantissas shift
/// left accordingly (value preserving).
void widen_format(NetState& state, int delta_bits);

// ---------------------------------------------------------------------------
// Float-baseline path (identical structure, double arithmetic, no rounding)
// ---------------------------------------------------------------------------

/// Same Gaussian stream as init_weights, without quantization.
RealNetState init_weights_real(const NetSpec& spec, uint64_t seed,
                               InitScheme init = InitScheme::Gaussian001,
                               double init_scale = 1.0);
RealTrace forward_real(const NetSpec& spec, const RealNetState& state, const RealTensor& x);
RealGradients backward_real(const NetSpec& spec, const RealNetState& state, const RealTrace& trace,
                            const RealTensor& x, std::span<const int32_t> labels, double inv_batch,
                            double weight_decay);
StepStats sgd_step_real(RealNetState& state, const RealGradients& grads, double lr,
                        double momentum);

}  // namespace fixnet::net
