#include "fsdm/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace fsdm {

uint64_t fnv1a64(std::string_view text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr, std::array<uint32_t, 2> key) {
  constexpr uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const uint64_t p0 = static_cast<uint64_t>(kM0) * ctr[0];
    const uint64_t p1 = static_cast<uint64_t>(kM1) * ctr[2];
    const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
    const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

RngStream::RngStream(uint64_t seed, std::string_view tag, uint64_t step) : seed_(seed), step_(step) {
  const uint64_t k = seed ^ fnv1a64(tag);
  key_ = {static_cast<uint32_t>(k), static_cast<uint32_t>(k >> 32)};
}

void RngStream::refill() {
  block_ = philox4x32({static_cast<uint32_t>(index_), static_cast<uint32_t>(index_ >> 32), static_cast<uint32_t>(step_),
                       static_cast<uint32_t>(step_ >> 32)},
                      key_);
  ++index_;
  block_pos_ = 0;
}

uint64_t RngStream::next_u64() {
  if (block_pos_ > 2) refill();
  const uint64_t v = (static_cast<uint64_t>(block_[static_cast<size_t>(block_pos_)]) << 32) |
                     block_[static_cast<size_t>(block_pos_ + 1)];
  block_pos_ += 2;
  return v;
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

int64_t RngStream::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<int64_t>(next_u64());
  const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return lo + static_cast<int64_t>(v % span);
}

std::vector<double> RngStream::normals(size_t count) {
  std::vector<double> out(count);
  for (auto& v : out) v = normal();
  return out;
}

}  // namespace fsdm
