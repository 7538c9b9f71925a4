#include "fsdm/setenc.hpp"

#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"

namespace fsdm {

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw ConfigError("unknown split '" + text + "'");
}

Tensor stack_sets(const std::vector<SupportSet>& sets) {
  if (sets.empty() || sets.front().images.empty()) throw ContractError("stack_sets: empty input");
  const size_t n = sets.front().images.size();
  const Shape image = sets.front().images.front().shape();
  if (image.size() != 3) throw ContractError("stack_sets: images must be [C, H, W]");
  std::vector<double> values;
  values.reserve(sets.size() * n * static_cast<size_t>(numel_of(image)));
  for (const auto& s : sets) {
    if (s.images.size() != n) throw ContractError("stack_sets: sets differ in size");
    for (const auto& img : s.images) {
      if (img.shape() != image) throw ContractError("stack_sets: images differ in shape");
      values.insert(values.end(), img.data().begin(), img.data().end());
    }
  }
  return Tensor({static_cast<int64_t>(sets.size()), static_cast<int64_t>(n), image[0], image[1], image[2]},
                std::move(values));
}

void EncoderConfig::validate() const {
  if (patch_size < 1 || layers < 0 || heads < 1 || head_dim < 1 || mlp_ratio < 1) {
    throw ConfigError("encoder sizes must be positive");
  }
}

SetEncoder::SetEncoder(ParameterStore& store, uint64_t seed, const std::string& prefix, const EncoderConfig& config,
                       int image_size, int in_channels, int width, bool time_conditioned)
    : config_(config),
      image_size_(image_size),
      in_channels_(in_channels),
      width_(width),
      grid_(0),
      time_conditioned_(time_conditioned) {
  config_.validate();
  if (image_size % config.patch_size != 0) {
    throw ConfigError("patch size " + std::to_string(config.patch_size) + " does not divide image size " +
                      std::to_string(image_size));
  }
  grid_ = image_size / config.patch_size;
  const int patch_dim = in_channels * config.patch_size * config.patch_size;
  patch_embed_ = nn::Linear(store, seed, prefix + ".patch_embed", patch_dim, width);
  position_ = nn::make_param(store, seed, prefix + ".position", {grid_ * grid_, width}, nn::Init::kFanIn, 0.1);
  if (time_conditioned) {
    time_fc1_ = nn::Linear(store, seed, prefix + ".time.fc1", width, width);
    time_fc2_ = nn::Linear(store, seed, prefix + ".time.fc2", width, width);
  }
  for (int i = 0; i < config.layers; ++i) {
    const std::string name = prefix + ".layer." + std::to_string(i);
    layers_.push_back(Layer{
        nn::LayerNorm(store, name + ".ln1", width),
        nn::LayerNorm(store, name + ".ln2", width),
        nn::MultiHeadAttention(store, seed, name + ".attn", width, width, config.heads, config.head_dim),
        nn::Linear(store, seed, name + ".fc1", width, width * config.mlp_ratio),
        nn::Linear(store, seed, name + ".fc2", width * config.mlp_ratio, width),
    });
  }
  final_norm_ = nn::LayerNorm(store, prefix + ".final_norm", width);
}

TokenGrid SetEncoder::patchify_set(const Tensor& images) const {
  if (images.rank() != 5 || images.dim(2) != in_channels_ || images.dim(3) != image_size_ ||
      images.dim(4) != image_size_) {
    throw ConfigError("patchify_set: images " + shape_str(images.shape()) + " do not match " +
                      std::to_string(in_channels_) + "x" + std::to_string(image_size_) + "x" +
                      std::to_string(image_size_));
  }
  const int64_t b = images.dim(0), n = images.dim(1), c = in_channels_, g = grid_, p = config_.patch_size;
  Tensor x = ops::reshape(images, {b * n, c, g, p, g, p});
  x = ops::permute(x, {0, 2, 4, 1, 3, 5});
  x = ops::reshape(x, {b, n, g * g, c * p * p});
  return {ops::add_broadcast(patch_embed_(x), position_)};
}

TokenGrid SetEncoder::encode_set(const TokenGrid& grid, const std::vector<int>* t) const {
  const Tensor& tokens = grid.tokens;
  if (tokens.rank() != 4 || tokens.dim(3) != width_) {
    throw ConfigError("encode_set: token grid " + shape_str(tokens.shape()) + " does not have width " +
                      std::to_string(width_));
  }
  if ((t != nullptr) != time_conditioned_) {
    throw ConfigError(time_conditioned_ ? "encode_set: time-conditioned encoder needs timesteps"
                                        : "encode_set: timesteps given to an encoder without time conditioning");
  }
  const int64_t b = tokens.dim(0), n = tokens.dim(1), np = tokens.dim(2), len = n * np;
  Tensor x = ops::reshape(tokens, {b, len, width_});
  if (t) {
    if (static_cast<int64_t>(t->size()) != b) throw ContractError("encode_set: timestep count does not match batch");
    Tensor temb = time_fc2_(ops::silu(time_fc1_(nn::sinusoidal_embedding(*t, width_))));
    std::vector<int64_t> rows;
    rows.reserve(static_cast<size_t>(b * len));
    for (int64_t i = 0; i < b; ++i) rows.insert(rows.end(), static_cast<size_t>(len), i);
    x = ops::add(x, ops::reshape(ops::index0(temb, rows), {b, len, width_}));
  }
  for (const Layer& layer : layers_) {
    Tensor h = layer.ln1(x);
    x = ops::add(x, layer.attn(h, h));
    x = ops::add(x, layer.fc2(ops::gelu(layer.fc1(layer.ln2(x)))));
  }
  return {ops::reshape(final_norm_(x), {b, n, np, width_})};
}

Context aggregate_per_patch(const TokenGrid& grid) {
  return {ContextMode::kTokens, ops::mean_axis(grid.tokens, 1, true)};
}

Context aggregate_vector(const TokenGrid& grid) {
  const Tensor& t = grid.tokens;
  Tensor flat = ops::reshape(t, {t.dim(0), t.dim(1) * t.dim(2), t.dim(3)});
  return {ContextMode::kVector, ops::mean_axis(flat, 1, true)};
}

Tensor stack_channels(const Tensor& images, int expected_set_size) {
  if (images.rank() != 5) throw ContractError("stack_channels: images must be [B, N_s, C, H, W]");
  if (images.dim(1) != expected_set_size) {
    throw ConfigError("stack_channels: set size " + std::to_string(images.dim(1)) +
                      " differs from the trained set size " + std::to_string(expected_set_size));
  }
  return ops::reshape(images, {images.dim(0), 1, images.dim(1) * images.dim(2), images.dim(3), images.dim(4)});
}

UNetSetEncoder::UNetSetEncoder(ParameterStore& store, uint64_t seed, const std::string& prefix,
                               const ModelConfig& config)
    : image_channels_(config.image_channels), image_size_(config.image_size) {
  config.validate();
  const int base = config.base_channels;
  conv_in_ = nn::Conv2d(store, seed, prefix + ".conv_in", config.image_channels, base, 3);
  int ch = base;
  const size_t levels = config.channel_multipliers.size();
  for (size_t l = 0; l < levels; ++l) {
    const int out = base * config.channel_multipliers[l];
    blocks_.push_back(std::make_unique<ResBlock>(store, seed, prefix + ".block." + std::to_string(l), ch, out, 0, 0,
                                                 config.norm_groups));
    ch = out;
    if (l + 1 < levels) {
      downsample_.emplace_back(store, seed, prefix + ".downsample." + std::to_string(l), ch, ch, 3, 2, 1);
    }
  }
  norm_out_ = nn::GroupNorm(store, prefix + ".norm_out", ch, config.norm_groups);
  head_ = nn::Linear(store, seed, prefix + ".head", ch, config.context_width);
}

Tensor UNetSetEncoder::encode_images(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != image_channels_ || images.dim(2) != image_size_ ||
      images.dim(3) != image_size_) {
    throw ConfigError("unet_encode: images " + shape_str(images.shape()) + " do not match the model configuration");
  }
  Tensor h = conv_in_(images);
  for (size_t l = 0; l < blocks_.size(); ++l) {
    h = (*blocks_[l])(h, Tensor(), Tensor());
    if (l < downsample_.size()) h = downsample_[l](h);
  }
  h = ops::silu(norm_out_(h));
  Tensor pooled = ops::mean_axis(ops::reshape(h, {h.dim(0), h.dim(1), h.dim(2) * h.dim(3)}), 2);
  return head_(pooled);
}

Context UNetSetEncoder::encode_mean(const Tensor& images) const {
  if (images.rank() != 5) throw ContractError("unet_encode_mean: images must be [B, N_s, C, H, W]");
  const int64_t b = images.dim(0), n = images.dim(1);
  Tensor flat = ops::reshape(images, {b * n, images.dim(2), images.dim(3), images.dim(4)});
  Tensor features = encode_images(flat);
  return {ContextMode::kVector, ops::mean_axis(ops::reshape(features, {b, n, features.dim(1)}), 1, true)};
}

}  // namespace fsdm
