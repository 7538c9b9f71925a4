#pragma once

#include <vector>

#include "fsdm/schedule.hpp"
#include "fsdm/tensor.hpp"

namespace fsdm {

// A noisy batch x_t [B, C, H, W] and the timestep of every batch element.
struct DiffusionState {
  Tensor x_t;
  std::vector<int> t;
};

struct PosteriorMoments {
  Tensor mean;
  std::vector<double> variance;  // one per batch element
};

struct LossTerms {
  double l_simple = 0.0;  // mean squared noise error
  double l_vlb = 0.0;     // batch mean of the sampled per-layer ELBO terms, nats per image
  double l_0 = 0.0;       // mean over the t == 1 elements (0 when none)
  double l_T = 0.0;       // prior term; constant, never differentiated
  double l_hybrid = 0.0;
  Tensor objective;  // l_simple + lambda * l_vlb with history
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps. t may be 0 (identity).
DiffusionState q_sample(const Tensor& x0, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& schedule);

// Gaussian q(x_{t-1} | x_t, x0).
PosteriorMoments q_posterior(const Tensor& x0, const DiffusionState& state, const NoiseSchedule& schedule);

// Reverse-process mean from a noise prediction; differentiable in eps_hat.
Tensor p_mean_from_eps(const DiffusionState& state, const Tensor& eps_hat, const NoiseSchedule& schedule);

// x0 implied by a noise prediction.
Tensor predict_x0(const DiffusionState& state, const Tensor& eps_hat, const NoiseSchedule& schedule);

Tensor loss_simple(const Tensor& eps_hat, const Tensor& eps);

// Per-image negative log-likelihood (nats) of x0 under a Gaussian with the
// given mean and standard deviation, discretized into 256 bins of width 2/255
// over [-1, 1] with open outer bins. Returns [B]; differentiable in mean.
Tensor discretized_gaussian_nll(const Tensor& x0, const Tensor& mean, double stddev);

// KL between diagonal Gaussians, summed over all elements of one image:
// N(mean_q, var_q) || N(mean_p, var_p). Returns [B]; differentiable in both means.
Tensor gaussian_kl_rows(const Tensor& mean_q, const std::vector<double>& var_q, const Tensor& mean_p,
                        const std::vector<double>& var_p);

// Per-image ELBO layer term: KL[q(x_{t-1}|x_t,x0) || p(x_{t-1}|x_t)] for t >= 2
// and -log p(x0|x1) for t == 1. Returns [B] in nats per image.
Tensor vlb_terms(const Tensor& x0, const DiffusionState& state, const Tensor& eps_hat, const NoiseSchedule& schedule);

// Batch mean of vlb_terms.
Tensor loss_vlb_term(const Tensor& x0, const DiffusionState& state, const Tensor& eps_hat,
                     const NoiseSchedule& schedule);

// KL[q(x_T|x0) || N(0, I)] per image, batch mean. A constant of the data.
double loss_LT(const Tensor& x0, const NoiseSchedule& schedule);
// Same closed form for an explicit alpha_bar_T, summed over the values given.
double prior_kl(const std::vector<double>& x0, double alpha_bar_T);

LossTerms loss_hybrid(const Tensor& x0, const DiffusionState& state, const Tensor& eps, const Tensor& eps_hat,
                      const NoiseSchedule& schedule, double lambda);

}  // namespace fsdm
