#include "fsdm/conditioning.hpp"

#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"

namespace fsdm {

Film::Film(ParameterStore& store, uint64_t seed, const std::string& name, int context_width, int channels)
    : delta_m_(store, seed, name + ".delta_m", context_width, channels, nn::Init::kZero),
      b_(store, seed, name + ".shift", context_width, channels, nn::Init::kZero),
      context_width_(context_width),
      channels_(channels) {}

void Film::check(const Tensor& u_t, const Tensor& c) const {
  if (c.rank() != 2 || c.dim(1) != context_width_) {
    throw ConfigError("film: context " + shape_str(c.shape()) + " does not have width " +
                      std::to_string(context_width_));
  }
  if (u_t.rank() < 2 || u_t.dim(1) != channels_ || u_t.dim(0) != c.dim(0)) {
    throw ConfigError("film: feature map " + shape_str(u_t.shape()) + " does not match " + std::to_string(channels_) +
                      " channels and context batch " + std::to_string(c.dim(0)));
  }
}

Tensor Film::scale(const Tensor& c) const { return ops::add_scalar(delta_m_(c), 1.0); }

Tensor Film::shift(const Tensor& c) const { return b_(c); }

Tensor Film::operator()(const Tensor& u_t, const Tensor& c) const {
  check(u_t, c);
  return ops::channel_affine(u_t, scale(c), shift(c));
}

CrossAttention::CrossAttention(ParameterStore& store, uint64_t seed, const std::string& name, int channels,
                               int context_width, int heads, int head_dim, int norm_groups)
    : norm_(store, name + ".norm", channels, norm_groups),
      attn_(store, seed, name + ".attn", channels, context_width, heads, head_dim, nn::Init::kZero),
      context_width_(context_width) {}

void CrossAttention::check(const Tensor& u, const Tensor& tokens) const {
  if (u.rank() != 4) throw ContractError("cross_attention: feature map must be [B, C, H, W]");
  if (tokens.rank() != 3 || tokens.dim(2) != context_width_ || tokens.dim(0) != u.dim(0)) {
    throw ConfigError("cross_attention: tokens " + shape_str(tokens.shape()) + " do not match width " +
                      std::to_string(context_width_) + " and batch " + std::to_string(u.dim(0)));
  }
}

Tensor CrossAttention::pre_projection(const Tensor& u, const Tensor& tokens) const {
  check(u, tokens);
  return attn_.attend(nn::to_sequence(norm_(u)), tokens);
}

Tensor CrossAttention::token_values(const Tensor& tokens) const { return attn_.values(tokens); }

Tensor CrossAttention::operator()(const Tensor& u, const Tensor& tokens) const {
  check(u, tokens);
  Tensor out = attn_(nn::to_sequence(norm_(u)), tokens);
  return ops::add(u, nn::from_sequence(out, u.dim(2), u.dim(3)));
}

}  // namespace fsdm
