#pragma once

#include <cstdint>
#include <string>

#include "fsdm/nn.hpp"
#include "fsdm/params.hpp"
#include "fsdm/tensor.hpp"

namespace fsdm {

// Vector conditioning: u(c, t) = (1 + dm(c)) * u(t) + b(c), channelwise and
// broadcast over spatial positions. dm and b start at zero.
class Film {
 public:
  Film() = default;
  Film(ParameterStore& store, uint64_t seed, const std::string& name, int context_width, int channels);

  // u_t [B, C, H, W] already carries the timestep shift; c [B, d].
  Tensor operator()(const Tensor& u_t, const Tensor& c) const;
  // The multiplicative factor 1 + dm(c) and the shift b(c), each [B, C].
  Tensor scale(const Tensor& c) const;
  Tensor shift(const Tensor& c) const;

 private:
  void check(const Tensor& u_t, const Tensor& c) const;
  nn::Linear delta_m_, b_;
  int context_width_ = 0, channels_ = 0;
};

// Token conditioning: the feature map attends to N_p context tokens; the
// result passes through a zero-initialized output projection and is added
// residually.
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(ParameterStore& store, uint64_t seed, const std::string& name, int channels, int context_width,
                 int heads, int head_dim, int norm_groups);

  // u [B, C, H, W], tokens [B, N_p, d].
  Tensor operator()(const Tensor& u, const Tensor& tokens) const;
  // Attention output before the output projection, [B, H*W, heads*head_dim].
  Tensor pre_projection(const Tensor& u, const Tensor& tokens) const;
  // Value projection of the tokens, [B, N_p, heads*head_dim].
  Tensor token_values(const Tensor& tokens) const;

 private:
  void check(const Tensor& u, const Tensor& tokens) const;
  nn::GroupNorm norm_;
  nn::MultiHeadAttention attn_;
  int context_width_ = 0;
};

}  // namespace fsdm
