#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fsdm/context.hpp"
#include "fsdm/denoiser.hpp"
#include "fsdm/nn.hpp"
#include "fsdm/params.hpp"

namespace fsdm {

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& text);

// Same-class images, each [C, H, W] with values in [-1, 1].
struct SupportSet {
  std::vector<Tensor> images;
  int class_id = -1;
  Split split = Split::kTrain;
};

// [B, N_s, C, H, W] from sets of equal size and image shape.
Tensor stack_sets(const std::vector<SupportSet>& sets);

// Encoded or embedded patch tokens, [B, N_s, N_p, d].
struct TokenGrid {
  Tensor tokens;

  int64_t set_size() const { return tokens.dim(1); }
  int64_t num_patches() const { return tokens.dim(2); }
  int64_t width() const { return tokens.dim(3); }
};

struct EncoderConfig {
  int patch_size = 4;
  int layers = 6;
  int heads = 12;
  int head_dim = 64;
  int mlp_ratio = 4;

  void validate() const;
};

// Set vision transformer: every image of the set is cut into non-overlapping
// patches embedded with one positional table shared by all set members, and
// the N_s * N_p tokens of a set are encoded as a single sequence.
class SetEncoder {
 public:
  SetEncoder(ParameterStore& store, uint64_t seed, const std::string& prefix, const EncoderConfig& config,
             int image_size, int in_channels, int width, bool time_conditioned);

  int num_patches() const { return grid_ * grid_; }
  bool time_conditioned() const { return time_conditioned_; }

  // images [B, N_s, C, H, W] -> embedded tokens with positions added.
  TokenGrid patchify_set(const Tensor& images) const;
  // Transformer over each set's flattened token sequence. t (one entry per
  // batch element) is required exactly when the encoder is time conditioned.
  TokenGrid encode_set(const TokenGrid& grid, const std::vector<int>* t = nullptr) const;

 private:
  struct Layer {
    nn::LayerNorm ln1, ln2;
    nn::MultiHeadAttention attn;
    nn::Linear fc1, fc2;
  };

  EncoderConfig config_;
  int image_size_, in_channels_, width_, grid_;
  bool time_conditioned_;
  nn::Linear patch_embed_;
  Tensor position_;
  nn::Linear time_fc1_, time_fc2_;
  std::vector<Layer> layers_;
  nn::LayerNorm final_norm_;
};

// Mean over the set axis: one token per patch, [B, N_p, d].
Context aggregate_per_patch(const TokenGrid& grid);
// Mean over set and patch axes, [B, d].
Context aggregate_vector(const TokenGrid& grid);
// [B, N_s, C, H, W] -> [B, 1, N_s * C, H, W], set order preserved. Throws
// ConfigError when N_s differs from expected_set_size.
Tensor stack_channels(const Tensor& images, int expected_set_size);

// Per-image convolutional encoder (downsampling residual stack, global average
// pool, linear map to d) whose outputs are averaged over the set.
class UNetSetEncoder {
 public:
  UNetSetEncoder(ParameterStore& store, uint64_t seed, const std::string& prefix, const ModelConfig& config);

  // [B * N, C, H, W] -> [B * N, d]
  Tensor encode_images(const Tensor& images) const;
  // images [B, N_s, C, H, W] -> vector context [B, d].
  Context encode_mean(const Tensor& images) const;

 private:
  int image_channels_, image_size_;
  nn::Conv2d conv_in_;
  std::vector<std::unique_ptr<ResBlock>> blocks_;
  std::vector<nn::Conv2d> downsample_;
  nn::GroupNorm norm_out_;
  nn::Linear head_;
};

}  // namespace fsdm
