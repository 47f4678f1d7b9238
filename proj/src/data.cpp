// SPDX-License-Identifier: Apache-2.0
#include "fixnet/data.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fixnet/rng.hpp"

namespace fixnet::data {

namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off) {
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

void put_be32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(static_cast<uint8_t>(v >> 24));
  b.push_back(static_cast<uint8_t>(v >> 16));
  b.push_back(static_cast<uint8_t>(v >> 8));
  b.push_back(static_cast<uint8_t>(v));
}

struct IdxImages {
  uint32_t count, rows, cols;
  std::vector<uint8_t> data;
};

IdxImages parse_idx_images(const std::string& path) {
  auto bytes = read_file(path);
  if (bytes.size() < 16) throw DataError(path + ": truncated IDX header (" +
                                         std::to_string(bytes.size()) + " bytes)");
  uint32_t magic = be32(bytes, 0);
  if (magic != kIdxImagesMagic)
    throw DataError(path + ": bad image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }() + " at offset 0");
  IdxImages r;
  r.count = be32(bytes, 4);
  r.rows = be32(bytes, 8);
  r.cols = be32(bytes, 12);
  size_t expect = 16 + size_t(r.count) * r.rows * r.cols;
  if (bytes.size() != expect)
    throw DataError(path + ": expected " + std::to_string(expect) + " bytes, found " +
                    std::to_string(bytes.size()));
  r.data.assign(bytes.begin() + 16, bytes.end());
  return r;
}

std::vector<uint8_t> parse_idx_labels(const std::string& path, uint32_t* count_out) {
  auto bytes = read_file(path);
  if (bytes.size() < 8) throw DataError(path + ": truncated IDX header");
  uint32_t magic = be32(bytes, 0);
  if (magic != kIdxLabelsMagic)
    throw DataError(path + ": bad label magic at offset 0");
  uint32_t count = be32(bytes, 4);
  if (bytes.size() != 8 + size_t(count))
    throw DataError(path + ": label payload size mismatch");
  *count_out = count;
  return {bytes.begin() + 8, bytes.end()};
}

Dataset load_mnist_split(const std::string& img_path, const std::string& lbl_path, Split split) {
  IdxImages img = parse_idx_images(img_path);
  uint32_t lbl_count = 0;
  auto labels = parse_idx_labels(lbl_path, &lbl_count);
  if (lbl_count != img.count)
    throw DataError(img_path + ": image count " + std::to_string(img.count) +
                    " does not match label count " + std::to_string(lbl_count));
  if (img.rows != 28 || img.cols != 28)
    throw DataError(img_path + ": expected 28x28 images, found " + std::to_string(img.rows) + "x" +
                    std::to_string(img.cols));
  for (uint8_t l : labels)
    if (l > 9) throw DataError(lbl_path + ": label > 9");
  Dataset ds;
  ds.n = img.count;
  ds.c = 1;
  ds.h = img.rows;
  ds.w = img.cols;
  ds.pixels = std::move(img.data);
  ds.labels = std::move(labels);
  ds.split = split;
  return ds;
}

}  // namespace

std::pair<Dataset, Dataset> load_mnist(const std::string& dir) {
  namespace fs = std::filesystem;
  auto p = [&](const char* f) { return (fs::path(dir) / f).string(); };
  Dataset train = load_mnist_split(p("train-images-idx3-ubyte"), p("train-labels-idx1-ubyte"),
                                   Split::Train);
  Dataset test = load_mnist_split(p("t10k-images-idx3-ubyte"), p("t10k-labels-idx1-ubyte"),
                                  Split::Test);
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  namespace fs = std::filesystem;
  constexpr int64_t kRecord = 3073;  // 1 label byte + 3*32*32 pixels
  auto load_files = [&](const std::vector<std::string>& names, Split split) {
    Dataset ds;
    ds.c = 3;
    ds.h = 32;
    ds.w = 32;
    ds.split = split;
    for (const auto& name : names) {
      auto path = (fs::path(dir) / name).string();
      auto bytes = read_file(path);
      if (bytes.empty() || bytes.size() % kRecord != 0)
        throw DataError(path + ": size " + std::to_string(bytes.size()) +
                        " is not a multiple of the 3073-byte record");
      int64_t records = static_cast<int64_t>(bytes.size()) / kRecord;
      for (int64_t r = 0; r < records; ++r) {
        const uint8_t* rec = bytes.data() + r * kRecord;
        if (rec[0] > 9) throw DataError(path + ": label > 9 in record " + std::to_string(r));
        ds.labels.push_back(rec[0]);
        ds.pixels.insert(ds.pixels.end(), rec + 1, rec + kRecord);
      }
      ds.n += records;
    }
    return ds;
  };
  Dataset train = load_files({"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                              "data_batch_4.bin", "data_batch_5.bin"},
                             Split::Train);
  Dataset test = load_files({"test_batch.bin"}, Split::Test);
  return {std::move(train), std::move(test)};
}

std::vector<uint8_t> encode_idx_images(const Dataset& ds) {
  std::vector<uint8_t> out;
  out.reserve(16 + ds.pixels.size());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<uint32_t>(ds.n));
  put_be32(out, static_cast<uint32_t>(ds.h));
  put_be32(out, static_cast<uint32_t>(ds.w));
  out.insert(out.end(), ds.pixels.begin(), ds.pixels.end());
  return out;
}

std::vector<uint8_t> encode_idx_labels(const Dataset& ds) {
  std::vector<uint8_t> out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<uint32_t>(ds.n));
  out.insert(out.end(), ds.labels.begin(), ds.labels.end());
  return out;
}

std::vector<std::vector<int64_t>> minibatches(int64_t n, int64_t size, uint64_t seed,
                                              int64_t epoch) {
  if (size < 1) throw std::invalid_argument("minibatches: size must be >= 1");
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[i] = i;
  fxp::SplitMix64 rng(fxp::keyed_u64(
      fxp::RngKey{seed, fxp::hash_tag("minibatch-shuffle"), static_cast<uint64_t>(epoch), 0}));
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.next_below(static_cast<uint64_t>(i + 1))]);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t b = 0; b + size <= n; b += size)
    batches.emplace_back(order.begin() + b, order.begin() + b + size);
  return batches;
}

fxt::FxTensor batch_fixed(const Dataset& ds, std::span<const int64_t> idx, fxp::FxFormat f) {
  // byte/255 with round-to-nearest is deterministic: table the 256 values.
  int32_t lut[256];
  for (int v = 0; v < 256; ++v)
    lut[v] = static_cast<int32_t>(
        fxp::convert_fraction(v, 255, f, fxp::RoundingMode::Nearest, fxp::Draw{}));
  const int64_t e = ds.image_elems();
  fxt::FxTensor out =
      fxt::FxTensor::zeros({static_cast<int64_t>(idx.size()), ds.c, ds.h, ds.w}, f, "input");
  for (size_t i = 0; i < idx.size(); ++i) {
    const uint8_t* src = ds.pixels.data() + idx[i] * e;
    int32_t* dst = out.data.data() + static_cast<int64_t>(i) * e;
    for (int64_t j = 0; j < e; ++j) dst[j] = lut[src[j]];
  }
  return out;
}

fxt::RealTensor batch_real(const Dataset& ds, std::span<const int64_t> idx) {
  const int64_t e = ds.image_elems();
  fxt::RealTensor out =
      fxt::RealTensor::zeros({static_cast<int64_t>(idx.size()), ds.c, ds.h, ds.w}, "input");
  for (size_t i = 0; i < idx.size(); ++i) {
    const uint8_t* src = ds.pixels.data() + idx[i] * e;
    double* dst = out.data.data() + static_cast<int64_t>(i) * e;
    for (int64_t j = 0; j < e; ++j) dst[j] = static_cast<double>(src[j]) / 255.0;
  }
  return out;
}

std::vector<int32_t> batch_labels(const Dataset& ds, std::span<const int64_t> idx) {
  std::vector<int32_t> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = ds.labels[idx[i]];
  return out;
}

}  // namespace fixnet::data

// ---------------------------------------------------------------------------
// Synthetic dataset generation
// ---------------------------------------------------------------------------

namespace fixnet::synth {

namespace {

using fixnet::fxp::SplitMix64;

// 8x8 digit glyphs, one bit per pixel.
constexpr const char* kGlyphs[10][8] = {
    {"..####..", ".##..##.", ".##.###.", ".###.##.", ".##..##.", ".##..##.", "..####..", "........"},
    {"...##...", "..###...", "...##...", "...##...", "...##...", "...##...", ".######.", "........"},
    {"..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".######.", "........"},
    {"..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".##..##.", "..####..", "........"},
    {"....##..", "...###..", "..#.##..", ".#..##..", ".######.", "....##..", "....##..", "........"},
    {".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".##..##.", "..####..", "........"},
    {"..####..", ".##..##.", ".##.....", ".#####..", ".##..##.", ".##..##.", "..####..", "........"},
    {".######.", ".....##.", "....##..", "...##...", "..##....", "..##....", "..##....", "........"},
    {"..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", "..####..", "........"},
    {"..####..", ".##..##.", ".##..##.", "..#####.", ".....##.", ".##..##.", "..####..", "........"}};

uint8_t clamp_px(double v) {
  return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}

double gaussian(SplitMix64& rng) {
  double u1 = 1.0 - rng.next_double();
  double u2 = rng.next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void render_digit(SplitMix64& rng, int digit, uint8_t* out /*28x28*/) {
  const double base = 150 + rng.next_double() * 105;  // stroke intensity
  const int ox = 2 + static_cast<int>(rng.next_below(9));
  const int oy = 2 + static_cast<int>(rng.next_below(9));
  double img[28 * 28] = {};
  for (int gy = 0; gy < 8; ++gy)
    for (int gx = 0; gx < 8; ++gx) {
      if (kGlyphs[digit][gy][gx] != '#') continue;
      const double v = base - rng.next_double() * 50;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) img[(oy + 2 * gy + sy) * 28 + (ox + 2 * gx + sx)] = v;
    }
  for (int i = 0; i < 28 * 28; ++i) out[i] = clamp_px(img[i] + 10 + 12 * gaussian(rng));
}

// Balanced, deterministically shuffled label sequence.
std::vector<uint8_t> balanced_labels(int64_t n, SplitMix64& rng) {
  std::vector<uint8_t> labels(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) labels[i] = static_cast<uint8_t>(i % 10);
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(labels[i], labels[rng.next_below(static_cast<uint64_t>(i + 1))]);
  return labels;
}

// Swap the labels of randomly chosen pairs. Gives the training split an
// irreducible error floor (like real data has), which keeps logits bounded;
// pair swaps preserve the exact per-class counts.
void swap_label_noise(std::vector<uint8_t>& labels, double frac, SplitMix64& rng) {
  const int64_t n = static_cast<int64_t>(labels.size());
  const int64_t swaps = static_cast<int64_t>(frac * static_cast<double>(n) / 2.0);
  for (int64_t s = 0; s < swaps; ++s) {
    const uint64_t i = rng.next_below(static_cast<uint64_t>(n));
    const uint64_t j = rng.next_below(static_cast<uint64_t>(n));
    std::swap(labels[i], labels[j]);
  }
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data::DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

data::Dataset make_mnist_split(int64_t n, SplitMix64& rng, double label_noise) {
  data::Dataset ds;
  ds.n = n;
  ds.c = 1;
  ds.h = 28;
  ds.w = 28;
  ds.labels = balanced_labels(n, rng);
  ds.pixels.resize(static_cast<size_t>(n) * 28 * 28);
  for (int64_t i = 0; i < n; ++i) render_digit(rng, ds.labels[i], ds.pixels.data() + i * 28 * 28);
  swap_label_noise(ds.labels, label_noise, rng);
  return ds;
}

}  // namespace

void write_mnist_style(const std::string& dir, int64_t train_n, int64_t test_n, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  SplitMix64 rng_train(fxp::detail::mix64(seed + 0x11));
  SplitMix64 rng_test(fxp::detail::mix64(seed + 0x22));
  data::Dataset train = make_mnist_split(train_n, rng_train, 0.03);
  data::Dataset test = make_mnist_split(test_n, rng_test, 0.0);
  write_bytes((fs::path(dir) / "train-images-idx3-ubyte").string(), data::encode_idx_images(train));
  write_bytes((fs::path(dir) / "train-labels-idx1-ubyte").string(), data::encode_idx_labels(train));
  write_bytes((fs::path(dir) / "t10k-images-idx3-ubyte").string(), data::encode_idx_images(test));
  write_bytes((fs::path(dir) / "t10k-labels-idx1-ubyte").string(), data::encode_idx_labels(test));
}

namespace {

// Ten RGB textures built from a pool of shared frequency modes plus weak
// class-specific modes; samples are cyclic shifts with amplitude jitter,
// cross-class mixing and heavy pixel noise. The shared structure and noise
// give the task an irreducible error floor in the teens, comparable to what
// a small CNN reaches on real natural-image data.
struct CifarTemplates {
  // [class][channel][y][x]
  double t[10][3][32][32];

  explicit CifarTemplates(uint64_t seed) {
    SplitMix64 rng(fxp::detail::mix64(seed + 0x33));
    // Shared mode pool: every class mixes the same waves with its own signs.
    constexpr int kModes = 6;
    double fx[kModes], fy[kModes], ph[3][kModes];
    for (int m = 0; m < kModes; ++m) {
      fx[m] = 1 + static_cast<double>(rng.next_below(4));
      fy[m] = 1 + static_cast<double>(rng.next_below(4));
      for (int c = 0; c < 3; ++c) ph[c][m] = rng.next_double() * 2 * M_PI;
    }
    for (auto& cls : t) {
      double w[3][kModes];
      for (int c = 0; c < 3; ++c)
        for (int m = 0; m < kModes; ++m) w[c][m] = rng.next_double() * 2 - 1;
      for (int c = 0; c < 3; ++c) {
        auto& ch = cls[c];
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x) {
            double v = 0;
            for (int m = 0; m < kModes; ++m)
              v += w[c][m] * std::cos(2 * M_PI * (fx[m] * x + fy[m] * y) / 32.0 + ph[c][m]);
            ch[y][x] = v;
          }
        double peak = 1e-9;
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x) peak = std::max(peak, std::abs(ch[y][x]));
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x) ch[y][x] = 70.0 * ch[y][x] / peak;
      }
    }
  }
};

void render_cifar(const CifarTemplates& tpl, SplitMix64& rng, int cls, uint8_t* out /*3*32*32*/) {
  const int dx = static_cast<int>(rng.next_below(32));
  const int dy = static_cast<int>(rng.next_below(32));
  const double alpha = 0.5 + 0.5 * rng.next_double();
  // A second class bleeds in at random strength: structured confusion.
  const int other = static_cast<int>(rng.next_below(10));
  const double mix = 0.45 * rng.next_double();
  const int ox = static_cast<int>(rng.next_below(32));
  const int oy = static_cast<int>(rng.next_below(32));
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        double v = 128 + alpha * tpl.t[cls][ch][(y + dy) & 31][(x + dx) & 31] +
                   mix * tpl.t[other][ch][(y + oy) & 31][(x + ox) & 31];
        out[(ch * 32 + y) * 32 + x] = clamp_px(v + 45 * gaussian(rng));
      }
}

std::vector<uint8_t> cifar_records(const CifarTemplates& tpl, int64_t n, SplitMix64& rng,
                                   double label_noise) {
  auto labels = balanced_labels(n, rng);
  swap_label_noise(labels, label_noise, rng);
  std::vector<uint8_t> bytes;
  bytes.reserve(static_cast<size_t>(n) * 3073);
  std::vector<uint8_t> img(3072);
  for (int64_t i = 0; i < n; ++i) {
    render_cifar(tpl, rng, labels[i], img.data());
    bytes.push_back(labels[i]);
    bytes.insert(bytes.end(), img.begin(), img.end());
  }
  return bytes;
}

}  // namespace

void write_cifar_style(const std::string& dir, int64_t train_n, int64_t test_n, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  CifarTemplates tpl(seed);
  SplitMix64 rng_train(fxp::detail::mix64(seed + 0x44));
  SplitMix64 rng_test(fxp::detail::mix64(seed + 0x55));
  auto train = cifar_records(tpl, train_n, rng_train, 0.03);
  auto test = cifar_records(tpl, test_n, rng_test, 0.0);
  // Split the train records across the five standard batch files.
  const int64_t rec = 3073;
  const int64_t total = train_n;
  int64_t written = 0;
  for (int b = 0; b < 5; ++b) {
    int64_t count = total / 5 + (b < total % 5 ? 1 : 0);
    std::vector<uint8_t> chunk(train.begin() + written * rec,
                               train.begin() + (written + count) * rec);
    write_bytes((fs::path(dir) / ("data_batch_" + std::to_string(b + 1) + ".bin")).string(), chunk);
    written += count;
  }
  write_bytes((fs::path(dir) / "test_batch.bin").string(), test);
}

}  // namespace fixnet::synth
