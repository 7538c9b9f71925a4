#include "fsdm/model.hpp"

#include "fsdm/errors.hpp"

namespace fsdm {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::kDDPM:
      return "DDPM";
    case Variant::kCDDPM:
      return "cDDPM";
    case Variant::kSDDPM:
      return "sDDPM";
    case Variant::kFSDMStacked:
      return "FSDM-s";
    case Variant::kFSDM:
      return "FSDM";
  }
  return "DDPM";
}

Variant variant_from_string(const std::string& text) {
  for (Variant v : {Variant::kDDPM, Variant::kCDDPM, Variant::kSDDPM, Variant::kFSDMStacked, Variant::kFSDM}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + text + "' (expected DDPM, cDDPM, sDDPM, FSDM-s or FSDM)");
}

ContextMode context_mode_of(Variant variant) {
  switch (variant) {
    case Variant::kDDPM:
      return ContextMode::kNone;
    case Variant::kCDDPM:
    case Variant::kSDDPM:
      return ContextMode::kVector;
    case Variant::kFSDMStacked:
    case Variant::kFSDM:
      return ContextMode::kTokens;
  }
  return ContextMode::kNone;
}

FewShotModel::FewShotModel(Variant variant, const ModelConfig& config, const EncoderConfig& encoder, int set_size,
                           uint64_t seed)
    : variant_(variant), config_(config), encoder_config_(encoder), set_size_(set_size), seed_(seed) {
  if (set_size < 1) throw ConfigError("set_size must be at least 1");
  config_.context_mode = context_mode_of(variant);
  if (variant == Variant::kDDPM || variant == Variant::kCDDPM) config_.time_conditioned_encoder = false;
  unet_ = std::make_unique<UNet>(store_, seed, config_, "unet");
  const int width = config_.context_width;
  switch (variant) {
    case Variant::kDDPM:
      break;
    case Variant::kCDDPM: {
      ModelConfig enc = config_;
      enc.num_res_blocks = 1;
      conv_encoder_ = std::make_unique<UNetSetEncoder>(store_, seed, "encoder", enc);
      break;
    }
    case Variant::kSDDPM:
    case Variant::kFSDM:
      vit_ = std::make_unique<SetEncoder>(store_, seed, "encoder", encoder, config_.image_size,
                                          config_.image_channels, width, config_.time_conditioned_encoder);
      break;
    case Variant::kFSDMStacked:
      vit_ = std::make_unique<SetEncoder>(store_, seed, "encoder", encoder, config_.image_size,
                                          config_.image_channels * set_size, width,
                                          config_.time_conditioned_encoder);
      break;
  }
}

bool FewShotModel::time_conditioned_encoder() const { return vit_ && vit_->time_conditioned(); }

std::optional<Context> FewShotModel::encode(const Tensor& support, const std::vector<int>* t) const {
  if (variant_ == Variant::kDDPM) return std::nullopt;
  if (!support.defined()) throw ConfigError(to_string(variant_) + " needs a support set");
  if (support.rank() != 5) throw ContractError("support must be [B, N_s, C, H, W], got " + shape_str(support.shape()));
  const std::vector<int>* enc_t = time_conditioned_encoder() ? t : nullptr;
  if (time_conditioned_encoder() && !t) throw ConfigError("time-conditioned encoder needs timesteps");
  switch (variant_) {
    case Variant::kCDDPM:
      return conv_encoder_->encode_mean(support);
    case Variant::kSDDPM:
      return aggregate_vector(vit_->encode_set(vit_->patchify_set(support), enc_t));
    case Variant::kFSDMStacked:
      return aggregate_per_patch(vit_->encode_set(vit_->patchify_set(stack_channels(support, set_size_)), enc_t));
    case Variant::kFSDM:
      return aggregate_per_patch(vit_->encode_set(vit_->patchify_set(support), enc_t));
    case Variant::kDDPM:
      break;
  }
  return std::nullopt;
}

Tensor FewShotModel::predict_eps(const DiffusionState& state, const Context* context) const {
  return unet_->predict_eps(state, context);
}

Tensor FewShotModel::forward(const DiffusionState& state, const Tensor& support) const {
  const auto context = encode(support, &state.t);
  return predict_eps(state, context ? &*context : nullptr);
}

}  // namespace fsdm
