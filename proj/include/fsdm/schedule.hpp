#pragma once

#include <vector>

namespace fsdm {

// Per-step coefficients of a discrete diffusion chain. Timesteps are 1-based:
// index t in [1, T] maps to entry t-1 of every vector, and alpha_bar(0) == 1.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma_sq;  // reverse-process variance, fixed to beta
  std::vector<double> posterior_coef_x0;
  std::vector<double> posterior_coef_xt;
  std::vector<double> posterior_var;
  std::vector<double> w;  // ELBO weight of the squared noise error
  // Original-chain timestep of every entry; 1..T for a freshly built schedule.
  std::vector<int> timesteps;

  double beta_at(int t) const { return beta[idx(t)]; }
  double alpha_at(int t) const { return alpha[idx(t)]; }
  double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar[idx(t)]; }
  double sigma_sq_at(int t) const { return sigma_sq[idx(t)]; }
  double coef_x0_at(int t) const { return posterior_coef_x0[idx(t)]; }
  double coef_xt_at(int t) const { return posterior_coef_xt[idx(t)]; }
  double posterior_var_at(int t) const { return posterior_var[idx(t)]; }
  double w_at(int t) const { return w[idx(t)]; }
  int timestep_at(int t) const { return timesteps[idx(t)]; }

  void check_t(int t) const;

 private:
  size_t idx(int t) const {
    check_t(t);
    return static_cast<size_t>(t - 1);
  }
};

// Builds every derived field from betas. `timesteps` defaults to 1..T.
NoiseSchedule schedule_from_betas(std::vector<double> betas, std::vector<int> timesteps = {});

// Betas interpolated linearly from beta_start (t=1) to beta_end (t=T).
NoiseSchedule linear_betas(int T, double beta_start = 1e-4, double beta_end = 0.02);

// Evenly spaced retained indices: linspace over [1, T] rounded to nearest,
// deduplicated, always ending at T.
std::vector<int> respace_indices(int T, int steps);

// Keeps the listed (strictly increasing, 1-based) entries and recomputes betas
// as 1 - alpha_bar[t_k] / alpha_bar[t_{k-1}], preserving alpha_bar exactly.
NoiseSchedule respace(const NoiseSchedule& schedule, const std::vector<int>& keep);
NoiseSchedule respace(const NoiseSchedule& schedule, int steps);

}  // namespace fsdm
