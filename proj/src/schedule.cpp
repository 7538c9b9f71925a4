#include "fsdm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fsdm/errors.hpp"

namespace fsdm {

void NoiseSchedule::check_t(int t) const {
  if (t < 1 || t > T) throw ContractError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

namespace {

// Everything that follows from beta and alpha_bar.
void fill_posteriors(NoiseSchedule& s) {
  for (size_t i = 0; i < s.beta.size(); ++i) {
    const double prev = i == 0 ? 1.0 : s.alpha_bar[i - 1];
    const double one_minus = 1.0 - s.alpha_bar[i];
    s.posterior_coef_x0[i] = s.beta[i] * std::sqrt(prev) / one_minus;
    s.posterior_coef_xt[i] = (1.0 - prev) * std::sqrt(s.alpha[i]) / one_minus;
    s.posterior_var[i] = (1.0 - prev) * s.beta[i] / one_minus;
    s.w[i] = s.beta[i] * s.beta[i] / (2.0 * s.sigma_sq[i] * s.alpha[i] * one_minus);
  }
  s.posterior_coef_x0[0] = 1.0;
  s.posterior_coef_xt[0] = 0.0;
  s.posterior_var[0] = 0.0;
}

}  // namespace

NoiseSchedule schedule_from_betas(std::vector<double> betas, std::vector<int> timesteps) {
  if (betas.empty()) throw ConfigError("schedule needs at least one step");
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta " + std::to_string(b) + " outside (0, 1)");
  }
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  if (timesteps.empty()) {
    timesteps.resize(betas.size());
    for (int t = 1; t <= s.T; ++t) timesteps[static_cast<size_t>(t - 1)] = t;
  }
  if (timesteps.size() != betas.size()) throw ConfigError("timestep map length differs from beta count");
  s.beta = std::move(betas);
  s.timesteps = std::move(timesteps);

  const size_t n = s.beta.size();
  s.alpha.resize(n);
  s.alpha_bar.resize(n);
  s.sigma_sq.resize(n);
  s.posterior_coef_x0.resize(n);
  s.posterior_coef_xt.resize(n);
  s.posterior_var.resize(n);
  s.w.resize(n);
  double running = 1.0;
  for (size_t i = 0; i < n; ++i) {
    s.alpha[i] = 1.0 - s.beta[i];
    running *= s.alpha[i];
    s.alpha_bar[i] = running;
    s.sigma_sq[i] = s.beta[i];
  }
  fill_posteriors(s);
  return s;
}

NoiseSchedule linear_betas(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("T must be positive");
  if (!(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0)) {
    throw ConfigError("beta endpoints must lie in (0, 1)");
  }
  if (beta_start > beta_end) throw ConfigError("beta_start must not exceed beta_end");
  std::vector<double> betas(static_cast<size_t>(T));
  for (int i = 0; i < T; ++i) {
    betas[static_cast<size_t>(i)] =
        T == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(T - 1);
  }
  return schedule_from_betas(std::move(betas));
}

std::vector<int> respace_indices(int T, int steps) {
  if (steps < 1 || steps > T) {
    throw ConfigError("respace: steps " + std::to_string(steps) + " outside [1, " + std::to_string(T) + "]");
  }
  std::vector<int> keep;
  if (steps == 1) return {T};
  for (int k = 0; k < steps; ++k) {
    const double x = 1.0 + static_cast<double>(k) * static_cast<double>(T - 1) / static_cast<double>(steps - 1);
    keep.push_back(static_cast<int>(std::lround(x)));
  }
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  if (keep.back() != T) keep.push_back(T);
  return keep;
}

NoiseSchedule respace(const NoiseSchedule& schedule, const std::vector<int>& keep) {
  if (keep.empty()) throw ConfigError("respace: no indices kept");
  std::vector<double> betas;
  std::vector<int> timesteps;
  int last = 0;
  for (int t : keep) {
    if (t <= last || t > schedule.T) throw ConfigError("respace: indices must be strictly increasing within [1, T]");
    const double ab = schedule.alpha_bar_at(t);
    betas.push_back(1.0 - ab / schedule.alpha_bar_at(last));
    timesteps.push_back(schedule.timestep_at(t));
    last = t;
  }
  NoiseSchedule out = schedule_from_betas(std::move(betas), std::move(timesteps));
  // The running product of recomputed alphas drifts by rounding; pin the
  // retained values to the originals and rebuild what depends on them.
  for (size_t i = 0; i < keep.size(); ++i) out.alpha_bar[i] = schedule.alpha_bar_at(keep[i]);
  fill_posteriors(out);
  return out;
}

NoiseSchedule respace(const NoiseSchedule& schedule, int steps) {
  if (steps == schedule.T) return schedule;
  return respace(schedule, respace_indices(schedule.T, steps));
}

}  // namespace fsdm
