#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace fsdm {

// 64-bit FNV-1a; used to turn purpose tags into generator keys.
uint64_t fnv1a64(std::string_view text);

// Philox4x32-10 counter-based generator (Salmon et al., Random123). A draw is a
// pure function of (key, counter), so a stream is addressed by
//   key     = seed XOR fnv1a64(purpose tag)
//   counter = (draw index, step)
// and never depends on how many values other streams consumed.
std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> counter, std::array<uint32_t, 2> key);

class RngStream {
 public:
  RngStream(uint64_t seed, std::string_view tag, uint64_t step = 0);

  uint64_t seed() const { return seed_; }
  uint64_t step() const { return step_; }

  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Standard normal via Box-Muller; values are produced in pairs.
  double normal();
  // Uniform integer in [lo, hi], inclusive; unbiased by rejection.
  int64_t uniform_int(int64_t lo, int64_t hi);

  std::vector<double> normals(size_t count);

 private:
  void refill();

  uint64_t seed_;
  uint64_t step_;
  std::array<uint32_t, 2> key_{};
  uint64_t index_ = 0;
  std::array<uint32_t, 4> block_{};
  int block_pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fsdm
