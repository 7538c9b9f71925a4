#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsdm/tensor.hpp"

namespace fsdm {

enum class DType : uint8_t { kF64 = 0, kF32 = 1, kI64 = 2 };

struct NamedArray {
  std::string name;
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<double> real;    // kF64 / kF32 payload
  std::vector<int64_t> whole;  // kI64 payload
};

// Single-file container: "FSDMCKPT", u32 version, u64 length + metadata text,
// u64 array count, then per array: u32 name length + name, u8 dtype, u32 rank,
// u64 dims, little-endian row-major payload.
struct CheckpointFile {
  static constexpr uint32_t kVersion = 1;
  std::string metadata;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;
  void add_real(const std::string& name, Shape shape, std::vector<double> values);
  void add_int(const std::string& name, int64_t value);
  int64_t get_int(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::string& path);

}  // namespace fsdm
