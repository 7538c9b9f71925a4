#include "fsdm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"

namespace fsdm {

DiffusionState ancestral_step(const DiffusionState& state, const EpsFunction& eps, const NoiseSchedule& schedule,
                              bool clip_denoised, const Tensor& noise) {
  NoGradGuard no_grad;
  std::vector<int> original;
  original.reserve(state.t.size());
  for (int t : state.t) {
    if (t < 1) throw ContractError("ancestral_step requires t >= 1");
    original.push_back(schedule.timestep_at(t));
  }
  const Tensor eps_hat = eps({state.x_t, original});

  Tensor mean;
  if (clip_denoised) {
    Tensor x0 = predict_x0(state, eps_hat, schedule).clone();
    for (double& v : x0.mutable_data()) v = std::clamp(v, -1.0, 1.0);
    mean = q_posterior(x0, state, schedule).mean;
  } else {
    mean = p_mean_from_eps(state, eps_hat, schedule);
  }

  std::vector<double> out(mean.data().begin(), mean.data().end());
  const size_t width = state.t.empty() ? 0 : out.size() / state.t.size();
  auto z = noise.data();
  std::vector<int> next(state.t.size());
  for (size_t b = 0; b < state.t.size(); ++b) {
    next[b] = state.t[b] - 1;
    if (state.t[b] == 1) continue;
    const double sigma = std::sqrt(schedule.sigma_sq_at(state.t[b]));
    for (size_t i = b * width; i < (b + 1) * width; ++i) out[i] += sigma * z[i];
  }
  return {Tensor(state.x_t.shape(), std::move(out)), next};
}

namespace {

Tensor draw(uint64_t seed, const char* tag, int64_t first, int64_t count, int64_t width, uint64_t step) {
  std::vector<double> values;
  values.reserve(static_cast<size_t>(count * width));
  for (int64_t i = first; i < first + count; ++i) {
    auto v = RngStream(seed, std::string(tag) + std::to_string(i), step).normals(static_cast<size_t>(width));
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor({count * width}, std::move(values));
}

}  // namespace

Tensor sample(const SampleRequest& request, const EpsFunction& eps, const Shape& image_shape,
              const NoiseSchedule& schedule, int batch_size) {
  if (request.steps < 1 || request.steps > schedule.T) {
    throw ConfigError("sample: steps " + std::to_string(request.steps) + " outside [1, " +
                      std::to_string(schedule.T) + "]");
  }
  if (request.count < 0) throw ConfigError("sample: negative count");
  if (batch_size < 1) throw ConfigError("sample: batch size must be positive");
  NoGradGuard no_grad;
  const NoiseSchedule chain = respace(schedule, request.steps);
  const int64_t width = numel_of(image_shape);
  Shape out_shape{request.count};
  out_shape.insert(out_shape.end(), image_shape.begin(), image_shape.end());
  std::vector<double> out;
  out.reserve(static_cast<size_t>(request.count * width));

  for (int64_t first = 0; first < request.count; first += batch_size) {
    const int64_t n = std::min<int64_t>(batch_size, request.count - first);
    Shape shape{n};
    shape.insert(shape.end(), image_shape.begin(), image_shape.end());
    DiffusionState state{ops::reshape(draw(request.seed, "sample.xT/", first, n, width, 0), shape),
                         std::vector<int>(static_cast<size_t>(n), chain.T)};
    for (int t = chain.T; t >= 1; --t) {
      Tensor z = t > 1 ? ops::reshape(draw(request.seed, "sample.z/", first, n, width, static_cast<uint64_t>(t)), shape)
                       : Tensor::zeros(shape);
      state = ancestral_step(state, eps, chain, request.clip_denoised, z);
    }
    out.insert(out.end(), state.x_t.data().begin(), state.x_t.data().end());
  }
  return Tensor(out_shape, std::move(out));
}

Tensor sample(const SampleRequest& request, const FewShotModel& model, const NoiseSchedule& schedule,
              int batch_size) {
  const ModelConfig& c = model.config();
  const Shape image{c.image_channels, c.image_size, c.image_size};
  if (!model.conditional()) {
    return sample(request, [&](const DiffusionState& s) { return model.predict_eps(s, nullptr); }, image, schedule,
                  batch_size);
  }
  if (!request.support.defined()) throw ConfigError("sample: " + to_string(model.variant()) + " needs a support set");
  if (request.support.rank() != 5 || request.support.dim(0) != 1) {
    throw ContractError("sample: support must be [1, N_s, C, H, W]");
  }
  NoGradGuard no_grad;
  if (!model.time_conditioned_encoder()) {
    const Context context = *model.encode(request.support);
    return sample(request, [&](const DiffusionState& s) { return model.predict_eps(s, &context); }, image, schedule,
                  batch_size);
  }
  return sample(
      request,
      [&](const DiffusionState& s) {
        const std::vector<int> t{s.t.front()};
        const Context context = *model.encode(request.support, &t);
        return model.predict_eps(s, &context);
      },
      image, schedule, batch_size);
}

}  // namespace fsdm
