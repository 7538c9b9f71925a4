#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fsdm/conditioning.hpp"
#include "fsdm/context.hpp"
#include "fsdm/diffusion.hpp"
#include "fsdm/nn.hpp"
#include "fsdm/params.hpp"

namespace fsdm {

struct ModelConfig {
  int image_size = 32;
  int image_channels = 3;
  int base_channels = 64;
  std::vector<int> channel_multipliers{1, 1, 2, 4};
  int num_res_blocks = 4;
  std::vector<int> attention_resolutions{16, 8};
  int attention_heads = 4;
  int norm_groups = 32;
  int context_width = 128;
  ContextMode context_mode = ContextMode::kNone;
  bool time_conditioned_encoder = false;

  // Feature-map side length at every level, finest first.
  std::vector<int> resolutions() const;
  // Throws ConfigError on a violated invariant.
  void validate() const;
};

// Residual block: GN, SiLU, conv; timestep shift; optional FiLM; GN, SiLU, conv;
// skip (1x1 conv when the channel count changes).
class ResBlock {
 public:
  ResBlock() = default;
  // temb_dim 0 disables the timestep path; film_width 0 disables FiLM.
  ResBlock(ParameterStore& store, uint64_t seed, const std::string& name, int in_channels, int out_channels,
           int temb_dim, int film_width, int norm_groups);
  Tensor operator()(const Tensor& x, const Tensor& temb, const Tensor& film_context) const;

 private:
  nn::GroupNorm norm1_, norm2_;
  nn::Conv2d conv1_, conv2_, skip_;
  nn::Linear temb_proj_;
  std::unique_ptr<Film> film_;
  bool has_temb_ = false, has_skip_ = false;
};

// Residual self-attention over spatial positions.
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(ParameterStore& store, uint64_t seed, const std::string& name, int channels, int heads,
                int norm_groups);
  Tensor operator()(const Tensor& x) const;

 private:
  nn::GroupNorm norm_;
  nn::MultiHeadAttention attn_;
};

// Noise predictor eps_theta(x_t, t, c).
class UNet {
 public:
  UNet(ParameterStore& store, uint64_t seed, const ModelConfig& config, const std::string& prefix = "unet");

  const ModelConfig& config() const { return config_; }
  int time_embedding_width() const { return 4 * config_.base_channels; }

  // Sinusoid of width base_channels followed by Linear, SiLU, Linear: [B, 4C].
  Tensor time_embedding(const std::vector<int>& t) const;
  // Output has the shape of state.x_t. context must be null exactly when the
  // configured mode is none; its batch must be 1 or match x_t.
  Tensor predict_eps(const DiffusionState& state, const Context* context) const;

 private:
  struct Stage {
    std::unique_ptr<ResBlock> res;
    std::unique_ptr<SelfAttention> attn;
    std::unique_ptr<CrossAttention> cross;
  };
  Stage make_stage(ParameterStore& store, uint64_t seed, const std::string& name, int in_ch, int out_ch,
                   bool attention);
  Tensor run_stage(const Stage& stage, const Tensor& h, const Tensor& temb, const Context* context) const;

  ModelConfig config_;
  nn::Linear time_fc1_, time_fc2_;
  nn::Conv2d conv_in_, conv_out_;
  nn::GroupNorm norm_out_;
  std::vector<std::vector<Stage>> down_;
  std::vector<nn::Conv2d> downsample_;
  Stage mid_a_, mid_b_;
  std::vector<std::vector<Stage>> up_;
  std::vector<nn::Conv2d> upsample_;
};

// Scalar parameter count of a bare UNet built from config.
int64_t unet_parameter_count(const ModelConfig& config);

}  // namespace fsdm
