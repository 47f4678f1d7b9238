// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fixnet/fxtensor.hpp"

namespace fixnet::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { Train, Test };

/// Images are kept as raw bytes; the real value of a pixel is byte/255
/// (exactly — quantization goes through the exact-fraction Convert).
struct Dataset {
  int64_t n = 0, c = 0, h = 0, w = 0;
  std::vector<uint8_t> pixels;  // n*c*h*w
  std::vector<uint8_t> labels;  // n, values 0..9
  Split split = Split::Train;

  int64_t image_elems() const { return c * h * w; }
  double pixel_real(int64_t flat) const { return static_cast<double>(pixels[flat]) / 255.0; }
};

/// Reads train-images-idx3-ubyte / train-labels-idx1-ubyte /
/// t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte from dir.
std::pair<Dataset, Dataset> load_mnist(const std::string& dir);

/// Reads data_batch_1..5.bin and test_batch.bin from dir.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

/// Serialize images/labels back to IDX bytes (round-trip checks).
std::vector<uint8_t> encode_idx_images(const Dataset& ds);
std::vector<uint8_t> encode_idx_labels(const Dataset& ds);

/// Deterministic shuffle keyed by (seed, epoch), split into fixed-size
/// batches; the final partial batch is dropped.
std::vector<std::vector<int64_t>> minibatches(int64_t n, int64_t size, uint64_t seed,
                                              int64_t epoch);

/// Assemble a quantized input batch (N x C x H x W) in the given format.
/// Pixels are converted from the exact fraction byte/255 with round-to-
/// nearest (deterministic, so a 256-entry table per format suffices).
fxt::FxTensor batch_fixed(const Dataset& ds, std::span<const int64_t> idx, fxp::FxFormat f);
fxt::RealTensor batch_real(const Dataset& ds, std::span<const int64_t> idx);
std::vector<int32_t> batch_labels(const Dataset& ds, std::span<const int64_t> idx);

}  // namespace fixnet::data

namespace fixnet::synth {

/// Writes an MNIST-format dataset (IDX files, 28x28 grayscale, 10 classes)
/// of procedurally rendered digit glyphs: per-sample position jitter,
/// intensity jitter and pixel noise. Deterministic in seed.
void write_mnist_style(const std::string& dir, int64_t train_n, int64_t test_n, uint64_t seed);

/// Writes a CIFAR-10-format dataset (binary batches, 32x32 RGB, 10 classes)
/// of noisy shifted class-template textures. Deterministic in seed.
void write_cifar_style(const std::string& dir, int64_t train_n, int64_t test_n, uint64_t seed);

}  // namespace fixnet::synth
