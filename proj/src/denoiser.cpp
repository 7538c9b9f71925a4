#include "fsdm/denoiser.hpp"

#include <algorithm>

#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"

namespace fsdm {

std::vector<int> ModelConfig::resolutions() const {
  std::vector<int> out;
  int size = image_size;
  for (size_t l = 0; l < channel_multipliers.size(); ++l) {
    out.push_back(size);
    size /= 2;
  }
  return out;
}

void ModelConfig::validate() const {
  if (image_size < 1 || image_channels < 1 || base_channels < 1) {
    throw ConfigError("image_size, image_channels and base_channels must be positive");
  }
  if (channel_multipliers.empty()) throw ConfigError("channel_multipliers must not be empty");
  for (int m : channel_multipliers) {
    if (m < 1) throw ConfigError("channel multipliers must be positive");
  }
  const int factor = 1 << (channel_multipliers.size() - 1);
  if (image_size % factor != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by " + std::to_string(factor));
  }
  if (num_res_blocks < 1) throw ConfigError("num_res_blocks must be positive");
  if (attention_heads < 1) throw ConfigError("attention_heads must be positive");
  if (norm_groups < 1) throw ConfigError("norm_groups must be positive");
  if (context_width < 1) throw ConfigError("context_width must be positive");
  const auto sizes = resolutions();
  for (int r : attention_resolutions) {
    if (std::find(sizes.begin(), sizes.end(), r) == sizes.end()) {
      throw ConfigError("attention resolution " + std::to_string(r) + " is not a feature-map size of this model");
    }
  }
}

ResBlock::ResBlock(ParameterStore& store, uint64_t seed, const std::string& name, int in_channels, int out_channels,
                   int temb_dim, int film_width, int norm_groups)
    : norm1_(store, name + ".norm1", in_channels, norm_groups),
      norm2_(store, name + ".norm2", out_channels, norm_groups),
      conv1_(store, seed, name + ".conv1", in_channels, out_channels, 3),
      conv2_(store, seed, name + ".conv2", out_channels, out_channels, 3),
      has_temb_(temb_dim > 0),
      has_skip_(in_channels != out_channels) {
  if (has_temb_) temb_proj_ = nn::Linear(store, seed, name + ".temb", temb_dim, out_channels);
  if (has_skip_) skip_ = nn::Conv2d(store, seed, name + ".skip", in_channels, out_channels, 1);
  if (film_width > 0) film_ = std::make_unique<Film>(store, seed, name + ".film", film_width, out_channels);
}

Tensor ResBlock::operator()(const Tensor& x, const Tensor& temb, const Tensor& film_context) const {
  Tensor h = conv1_(ops::silu(norm1_(x)));
  if (has_temb_) h = ops::channel_affine(h, Tensor(), temb_proj_(ops::silu(temb)));
  if (film_) h = (*film_)(h, film_context);
  h = conv2_(ops::silu(norm2_(h)));
  return ops::add(has_skip_ ? skip_(x) : x, h);
}

SelfAttention::SelfAttention(ParameterStore& store, uint64_t seed, const std::string& name, int channels, int heads,
                             int norm_groups)
    : norm_(store, name + ".norm", channels, norm_groups) {
  if (channels % heads != 0) heads = 1;
  attn_ = nn::MultiHeadAttention(store, seed, name + ".attn", channels, channels, heads, channels / heads);
}

Tensor SelfAttention::operator()(const Tensor& x) const {
  Tensor seq = nn::to_sequence(norm_(x));
  return ops::add(x, nn::from_sequence(attn_(seq, seq), x.dim(2), x.dim(3)));
}

UNet::Stage UNet::make_stage(ParameterStore& store, uint64_t seed, const std::string& name, int in_ch, int out_ch,
                             bool attention) {
  const ModelConfig& c = config_;
  Stage s;
  const int film_width = c.context_mode == ContextMode::kVector ? c.context_width : 0;
  s.res = std::make_unique<ResBlock>(store, seed, name + ".res", in_ch, out_ch, time_embedding_width(), film_width,
                                     c.norm_groups);
  if (attention) {
    s.attn = std::make_unique<SelfAttention>(store, seed, name + ".attn", out_ch, c.attention_heads, c.norm_groups);
    if (c.context_mode == ContextMode::kTokens) {
      const int heads = out_ch % c.attention_heads == 0 ? c.attention_heads : 1;
      s.cross = std::make_unique<CrossAttention>(store, seed, name + ".cross", out_ch, c.context_width, heads,
                                                 out_ch / heads, c.norm_groups);
    }
  }
  return s;
}

UNet::UNet(ParameterStore& store, uint64_t seed, const ModelConfig& config, const std::string& prefix)
    : config_(config) {
  config_.validate();
  const ModelConfig& c = config_;
  const int base = c.base_channels;
  const int temb = time_embedding_width();
  time_fc1_ = nn::Linear(store, seed, prefix + ".time.fc1", base, temb);
  time_fc2_ = nn::Linear(store, seed, prefix + ".time.fc2", temb, temb);
  conv_in_ = nn::Conv2d(store, seed, prefix + ".conv_in", c.image_channels, base, 3);

  const auto sizes = c.resolutions();
  auto attends = [&](size_t level) {
    return std::find(c.attention_resolutions.begin(), c.attention_resolutions.end(), sizes[level]) !=
           c.attention_resolutions.end();
  };
  const size_t levels = c.channel_multipliers.size();
  std::vector<int> skips{base};
  int ch = base;
  for (size_t l = 0; l < levels; ++l) {
    const int out = base * c.channel_multipliers[l];
    std::vector<Stage> stages;
    for (int i = 0; i < c.num_res_blocks; ++i) {
      const std::string name = prefix + ".down." + std::to_string(l) + "." + std::to_string(i);
      stages.push_back(make_stage(store, seed, name, ch, out, attends(l)));
      ch = out;
      skips.push_back(ch);
    }
    down_.push_back(std::move(stages));
    if (l + 1 < levels) {
      downsample_.emplace_back(store, seed, prefix + ".down." + std::to_string(l) + ".downsample", ch, ch, 3, 2, 1);
      skips.push_back(ch);
    }
  }

  mid_a_ = make_stage(store, seed, prefix + ".mid.0", ch, ch, true);
  mid_b_ = make_stage(store, seed, prefix + ".mid.1", ch, ch, false);

  up_.resize(levels);
  for (size_t r = 0; r < levels; ++r) {
    const size_t l = levels - 1 - r;
    const int out = base * c.channel_multipliers[l];
    for (int i = 0; i <= c.num_res_blocks; ++i) {
      const int skip = skips.back();
      skips.pop_back();
      const std::string name = prefix + ".up." + std::to_string(l) + "." + std::to_string(i);
      up_[l].push_back(make_stage(store, seed, name, ch + skip, out, attends(l)));
      ch = out;
    }
    if (l > 0) upsample_.emplace_back(store, seed, prefix + ".up." + std::to_string(l) + ".upsample", ch, ch, 3);
  }
  norm_out_ = nn::GroupNorm(store, prefix + ".norm_out", ch, c.norm_groups);
  conv_out_ = nn::Conv2d(store, seed, prefix + ".conv_out", ch, c.image_channels, 3);
}

Tensor UNet::time_embedding(const std::vector<int>& t) const {
  return time_fc2_(ops::silu(time_fc1_(nn::sinusoidal_embedding(t, config_.base_channels))));
}

Tensor UNet::run_stage(const Stage& stage, const Tensor& h, const Tensor& temb, const Context* context) const {
  const Tensor film_context = context && context->mode == ContextMode::kVector ? context->payload : Tensor();
  Tensor out = (*stage.res)(h, temb, film_context);
  if (stage.attn) out = (*stage.attn)(out);
  if (stage.cross) out = (*stage.cross)(out, context->payload);
  return out;
}

Tensor UNet::predict_eps(const DiffusionState& state, const Context* context) const {
  const ModelConfig& c = config_;
  const Tensor& x = state.x_t;
  if (x.rank() != 4 || x.dim(1) != c.image_channels || x.dim(2) != c.image_size || x.dim(3) != c.image_size) {
    throw ContractError("predict_eps: input " + shape_str(x.shape()) + " does not match the model configuration");
  }
  if (static_cast<int64_t>(state.t.size()) != x.dim(0)) {
    throw ContractError("predict_eps: timestep count does not match batch");
  }
  const ContextMode given = context ? context->mode : ContextMode::kNone;
  if (given != c.context_mode) {
    throw ConfigError("predict_eps: model expects context mode '" + to_string(c.context_mode) + "' but got '" +
                      to_string(given) + "'");
  }
  Context ctx;
  if (context) {
    const int64_t rank = context->mode == ContextMode::kVector ? 2 : 3;
    if (context->payload.rank() != rank || context->width() != c.context_width) {
      throw ConfigError("predict_eps: context payload " + shape_str(context->payload.shape()) +
                        " does not match mode and width " + std::to_string(c.context_width));
    }
    ctx = broadcast_context(*context, x.dim(0));
  }
  const Context* cp = context ? &ctx : nullptr;

  const Tensor temb = time_embedding(state.t);
  Tensor h = conv_in_(x);
  std::vector<Tensor> skips{h};
  for (size_t l = 0; l < down_.size(); ++l) {
    for (const Stage& s : down_[l]) {
      h = run_stage(s, h, temb, cp);
      skips.push_back(h);
    }
    if (l < downsample_.size()) {
      h = downsample_[l](h);
      skips.push_back(h);
    }
  }
  h = run_stage(mid_b_, run_stage(mid_a_, h, temb, cp), temb, cp);
  size_t up_index = 0;
  for (size_t r = 0; r < up_.size(); ++r) {
    const size_t l = up_.size() - 1 - r;
    for (const Stage& s : up_[l]) {
      h = ops::concat({h, skips.back()}, 1);
      skips.pop_back();
      h = run_stage(s, h, temb, cp);
    }
    if (l > 0) h = upsample_[up_index++](ops::upsample_nearest2x(h));
  }
  return conv_out_(ops::silu(norm_out_(h)));
}

int64_t unet_parameter_count(const ModelConfig& config) {
  ParameterStore store;
  UNet net(store, 0, config);
  return store.scalar_count();
}

}  // namespace fsdm
