#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsdm/params.hpp"
#include "fsdm/tensor.hpp"

// Parameterized building blocks. Each block registers its arrays in a
// ParameterStore under a dotted path and initializes them from a counter-based
// stream keyed by (seed, path), so identically named blocks in two models built
// from the same seed start bitwise equal.
namespace fsdm::nn {

enum class Init { kFanIn, kZero };

// Registers a parameter drawn uniformly from [-bound, bound] (or zeros).
Tensor make_param(ParameterStore& store, uint64_t seed, const std::string& name, Shape shape, Init init, double bound);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, uint64_t seed, const std::string& name, int in_features, int out_features,
         Init init = Init::kFanIn, bool bias = true);
  Tensor operator()(const Tensor& x) const;
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  Tensor weight_, bias_;
  int in_ = 0, out_ = 0;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, uint64_t seed, const std::string& name, int in_channels, int out_channels, int kernel,
         int stride = 1, int padding = -1, Init init = Init::kFanIn);
  Tensor operator()(const Tensor& x) const;

 private:
  Tensor weight_, bias_;
  int stride_ = 1, padding_ = 0;
};

class GroupNorm {
 public:
  GroupNorm() = default;
  // groups is reduced to the largest divisor of channels not above it.
  GroupNorm(ParameterStore& store, const std::string& name, int channels, int groups);
  Tensor operator()(const Tensor& x) const;
  int groups() const { return groups_; }

 private:
  Tensor gamma_, beta_;
  int groups_ = 1;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, int width);
  Tensor operator()(const Tensor& x) const;

 private:
  Tensor gamma_, beta_;
};

// Multi-head scaled dot-product attention between a query sequence
// [B, Lq, query_dim] and a key/value sequence [B, Lk, kv_dim].
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, uint64_t seed, const std::string& name, int query_dim, int kv_dim, int heads,
                     int head_dim, Init out_init = Init::kFanIn);
  Tensor operator()(const Tensor& queries, const Tensor& keys_values) const;
  // Head outputs concatenated, before the output projection: [B, Lq, heads * head_dim].
  Tensor attend(const Tensor& queries, const Tensor& keys_values) const;
  // Value projection alone: [B, Lk, heads * head_dim].
  Tensor values(const Tensor& keys_values) const;

 private:
  Linear to_q_, to_k_, to_v_, to_out_;
  int heads_ = 1, head_dim_ = 1;
};

// [B, width]: sin(t * f_i) in the first half, cos(t * f_i) in the second, with
// f_i = 10000^(-i / (width / 2)). An odd width gets a trailing zero column.
Tensor sinusoidal_embedding(const std::vector<int>& t, int width);

// [B, C, H, W] <-> [B, H*W, C]
Tensor to_sequence(const Tensor& x);
Tensor from_sequence(const Tensor& seq, int64_t height, int64_t width);

}  // namespace fsdm::nn
