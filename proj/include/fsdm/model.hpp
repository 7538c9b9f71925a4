#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fsdm/context.hpp"
#include "fsdm/denoiser.hpp"
#include "fsdm/params.hpp"
#include "fsdm/setenc.hpp"

namespace fsdm {

// The five model families and their fixed wiring:
//   DDPM    no encoder            no conditioning   no context
//   cDDPM   per-image conv net    FiLM              vector
//   sDDPM   set ViT               FiLM              vector (global patch mean)
//   FSDM-s  set ViT on stacked    cross-attention   tokens
//   FSDM    set ViT               cross-attention   tokens (per-patch mean)
enum class Variant { kDDPM, kCDDPM, kSDDPM, kFSDMStacked, kFSDM };

std::string to_string(Variant variant);
Variant variant_from_string(const std::string& text);
ContextMode context_mode_of(Variant variant);

// Encoder and denoiser of one variant sharing one ParameterStore. Backbone
// parameters are named identically across variants, so two bundles built from
// the same seed hold the same backbone weights.
class FewShotModel {
 public:
  // config.context_mode is overwritten from the variant.
  FewShotModel(Variant variant, const ModelConfig& config, const EncoderConfig& encoder, int set_size,
               uint64_t seed);

  Variant variant() const { return variant_; }
  const ModelConfig& config() const { return config_; }
  const EncoderConfig& encoder_config() const { return encoder_config_; }
  int set_size() const { return set_size_; }
  uint64_t seed() const { return seed_; }
  bool conditional() const { return variant_ != Variant::kDDPM; }
  bool time_conditioned_encoder() const;

  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const UNet& unet() const { return *unet_; }

  // support [B, N_s, C, H, W]. t (one entry per batch element) is required
  // exactly when the encoder is time conditioned. Empty for DDPM.
  std::optional<Context> encode(const Tensor& support, const std::vector<int>* t = nullptr) const;
  Tensor predict_eps(const DiffusionState& state, const Context* context) const;
  // encode followed by predict_eps; support may be undefined for DDPM.
  Tensor forward(const DiffusionState& state, const Tensor& support) const;

 private:
  Variant variant_;
  ModelConfig config_;
  EncoderConfig encoder_config_;
  int set_size_;
  uint64_t seed_;
  ParameterStore store_;
  std::unique_ptr<UNet> unet_;
  std::unique_ptr<SetEncoder> vit_;
  std::unique_ptr<UNetSetEncoder> conv_encoder_;
};

}  // namespace fsdm
