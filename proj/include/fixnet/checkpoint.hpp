// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fixnet/net.hpp"

namespace fixnet::ckpt {

/// Little-endian checkpoint container. Layout (see docs/checkpoint.md):
///   magic "FXNCKPT1" | u32 version | u32 kind (0 fixed, 1 float64)
///   u64 seed | u64 step | u32 tensor count
///   per tensor: u32 name_len, name, u8 il, u8 fl, u8 ndim, u64 dims[],
///               payload (i32[] for fixed, f64[] for float64)
struct NamedTensor {
  std::string name;
  int il = 0, fl = 0;  // zero for float payloads
  std::vector<int64_t> dims;
  std::vector<int32_t> ints;
  std::vector<double> reals;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  uint32_t kind = 0;  // 0 fixed, 1 float64
  uint64_t seed = 0;
  uint64_t step = 0;
  std::vector<NamedTensor> tensors;

  bool operator==(const Checkpoint&) const = default;
};

void save(const net::NetState& state, const std::string& path);
void save(const net::RealNetState& state, const std::string& path);
Checkpoint load(const std::string& path);

}  // namespace fixnet::ckpt
