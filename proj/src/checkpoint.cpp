// SPDX-License-Identifier: Apache-2.0
#include "fixnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fixnet::ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'X', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("checkpoint: cannot write " + path);
  }
  void bytes(const void* p, size_t n) { out_.write(static_cast<const char*>(p), n); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void u8(uint8_t v) { bytes(&v, 1); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("checkpoint: cannot open " + path);
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw std::runtime_error("checkpoint: truncated file " + path_);
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::ifstream in_;
  std::string path_;
};

template <class State, class WriteTensor>
void save_impl(const State& state, const std::string& path, uint32_t kind, WriteTensor&& wt) {
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  w.u32(kind);
  w.u64(state.seed);
  w.u64(state.step);
  uint32_t count = 0;
  for (const auto& p : state.params)
    if (p.used) count += 4;
  w.u32(count);
  for (size_t li = 0; li < state.params.size(); ++li) {
    const auto& p = state.params[li];
    if (!p.used) continue;
    const std::string base = "L" + std::to_string(li) + "/";
    wt(w, base + "W", p.w);
    wt(w, base + "B", p.b);
    wt(w, base + "vW", p.vw);
    wt(w, base + "vB", p.vb);
  }
}

}  // namespace

void save(const net::NetState& state, const std::string& path) {
  save_impl(state, path, 0, [](Writer& w, const std::string& name, const fxt::FxTensor& t) {
    w.str(name);
    w.u8(static_cast<uint8_t>(t.format.il));
    w.u8(static_cast<uint8_t>(t.format.fl));
    w.u8(static_cast<uint8_t>(t.shape.size()));
    for (int64_t d : t.shape) w.u64(static_cast<uint64_t>(d));
    w.bytes(t.data.data(), t.data.size() * sizeof(int32_t));
  });
}

void save(const net::RealNetState& state, const std::string& path) {
  save_impl(state, path, 1, [](Writer& w, const std::string& name, const fxt::RealTensor& t) {
    w.str(name);
    w.u8(0);
    w.u8(0);
    w.u8(static_cast<uint8_t>(t.shape.size()));
    for (int64_t d : t.shape) w.u64(static_cast<uint64_t>(d));
    w.bytes(t.data.data(), t.data.size() * sizeof(double));
  });
}

Checkpoint load(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  c.kind = r.u32();
  c.seed = r.u64();
  c.step = r.u64();
  uint32_t count = r.u32();
  c.tensors.resize(count);
  for (auto& t : c.tensors) {
    t.name = r.str();
    t.il = r.u8();
    t.fl = r.u8();
    uint8_t ndim = r.u8();
    int64_t numel = 1;
    t.dims.resize(ndim);
    for (auto& d : t.dims) {
      d = static_cast<int64_t>(r.u64());
      numel *= d;
    }
    if (c.kind == 0) {
      t.ints.resize(static_cast<size_t>(numel));
      r.bytes(t.ints.data(), t.ints.size() * sizeof(int32_t));
    } else {
      t.reals.resize(static_cast<size_t>(numel));
      r.bytes(t.reals.data(), t.reals.size() * sizeof(double));
    }
  }
  return c;
}

}  // namespace fixnet::ckpt
