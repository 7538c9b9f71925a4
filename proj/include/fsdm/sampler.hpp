#pragma once

#include <cstdint>
#include <functional>

#include "fsdm/diffusion.hpp"
#include "fsdm/model.hpp"
#include "fsdm/rng.hpp"
#include "fsdm/schedule.hpp"

namespace fsdm {

// Noise prediction for a batch whose t entries are original-chain timesteps.
using EpsFunction = std::function<Tensor(const DiffusionState&)>;

struct SampleRequest {
  int count = 0;
  int steps = 250;
  uint64_t seed = 0;
  bool clip_denoised = true;
  // One support set [1, N_s, C, H, W] for conditional models; undefined otherwise.
  Tensor support;
};

// One reverse step on a (possibly respaced) schedule. state.t holds indices of
// that schedule; eps receives them mapped to original timesteps. noise is
// standard normal of the shape of x_t and is ignored at t == 1.
DiffusionState ancestral_step(const DiffusionState& state, const EpsFunction& eps, const NoiseSchedule& schedule,
                              bool clip_denoised, const Tensor& noise);

// Ancestral sampling from N(0, I) through respace(schedule, steps). Sample i
// draws its noise from streams keyed by (seed, i), so the random draws do not
// depend on how the count is split into batches; the network's rounding may.
// Returns [count, C, H, W].
Tensor sample(const SampleRequest& request, const EpsFunction& eps, const Shape& image_shape,
              const NoiseSchedule& schedule, int batch_size = 64);

// Sampling from a model bundle. The context is computed once per request,
// or once per retained step when the encoder is time conditioned.
Tensor sample(const SampleRequest& request, const FewShotModel& model, const NoiseSchedule& schedule,
              int batch_size = 64);

}  // namespace fsdm
