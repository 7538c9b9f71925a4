#include "fsdm/diffusion.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"

namespace fsdm {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_batch(const Tensor& x, const std::vector<int>& t, const char* what) {
  if (x.rank() < 1 || x.dim(0) != static_cast<int64_t>(t.size())) {
    throw ContractError(std::string(what) + ": batch of " + shape_str(x.shape()) + " does not match " +
                        std::to_string(t.size()) + " timesteps");
  }
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// log Phi(z), accurate into both tails.
double log_ndtr(double z) {
  if (z == kInf) return 0.0;
  if (z == -kInf) return -kInf;
  if (z > 0.0) return std::log1p(-0.5 * std::erfc(z * kInvSqrt2));
  if (z > -30.0) return std::log(0.5 * std::erfc(-z * kInvSqrt2));
  const double z2 = z * z;
  return -0.5 * z2 - std::log(-z) - kHalfLog2Pi + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2));
}

double log_phi(double z) { return std::isinf(z) ? -kInf : -0.5 * z * z - kHalfLog2Pi; }

// log(Phi(hi) - Phi(lo)) for lo < hi, either bound possibly infinite.
double log_bin_mass(double lo, double hi) {
  if (hi == kInf) return log_ndtr(-lo);
  if (lo == -kInf) return log_ndtr(hi);
  if (lo >= 0.0) {
    const double a = log_ndtr(-lo), b = log_ndtr(-hi);
    return a + std::log1p(-std::exp(b - a));
  }
  if (hi <= 0.0) {
    const double a = log_ndtr(hi), b = log_ndtr(lo);
    return a + std::log1p(-std::exp(b - a));
  }
  return std::log1p(-0.5 * std::erfc(hi * kInvSqrt2) - 0.5 * std::erfc(-lo * kInvSqrt2));
}

}  // namespace

DiffusionState q_sample(const Tensor& x0, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& schedule) {
  check_batch(x0, t, "q_sample");
  check_same(x0, eps, "q_sample");
  const size_t width = t.empty() ? 0 : static_cast<size_t>(x0.numel()) / t.size();
  std::vector<double> out(static_cast<size_t>(x0.numel()));
  auto xv = x0.data(), ev = eps.data();
  for (size_t b = 0; b < t.size(); ++b) {
    if (t[b] != 0) schedule.check_t(t[b]);
    const double ab = schedule.alpha_bar_at(t[b]);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (size_t i = b * width; i < (b + 1) * width; ++i) out[i] = a * xv[i] + s * ev[i];
  }
  return {Tensor(x0.shape(), std::move(out)), t};
}

PosteriorMoments q_posterior(const Tensor& x0, const DiffusionState& state, const NoiseSchedule& schedule) {
  check_batch(state.x_t, state.t, "q_posterior");
  check_same(x0, state.x_t, "q_posterior");
  std::vector<double> c0, ct, var;
  for (int t : state.t) {
    if (t < 1) throw ContractError("q_posterior requires t >= 1");
    c0.push_back(schedule.coef_x0_at(t));
    ct.push_back(schedule.coef_xt_at(t));
    var.push_back(schedule.posterior_var_at(t));
  }
  Tensor mean = ops::add(ops::scale_rows(x0, c0), ops::scale_rows(state.x_t, ct));
  return {mean, var};
}

Tensor p_mean_from_eps(const DiffusionState& state, const Tensor& eps_hat, const NoiseSchedule& schedule) {
  check_batch(state.x_t, state.t, "p_mean_from_eps");
  check_same(state.x_t, eps_hat, "p_mean_from_eps");
  std::vector<double> a, b;
  for (int t : state.t) {
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha_at(t));
    a.push_back(inv_sqrt_alpha);
    b.push_back(inv_sqrt_alpha * schedule.beta_at(t) / std::sqrt(1.0 - schedule.alpha_bar_at(t)));
  }
  return ops::sub(ops::scale_rows(state.x_t, a), ops::scale_rows(eps_hat, b));
}

Tensor predict_x0(const DiffusionState& state, const Tensor& eps_hat, const NoiseSchedule& schedule) {
  check_batch(state.x_t, state.t, "predict_x0");
  check_same(state.x_t, eps_hat, "predict_x0");
  std::vector<double> a, b;
  for (int t : state.t) {
    const double ab = schedule.alpha_bar_at(t);
    a.push_back(1.0 / std::sqrt(ab));
    b.push_back(std::sqrt(1.0 - ab) / std::sqrt(ab));
  }
  return ops::sub(ops::scale_rows(state.x_t, a), ops::scale_rows(eps_hat, b));
}

Tensor loss_simple(const Tensor& eps_hat, const Tensor& eps) {
  check_same(eps_hat, eps, "loss_simple");
  return ops::mse(eps_hat, eps);
}

Tensor discretized_gaussian_nll(const Tensor& x0, const Tensor& mean, double stddev) {
  check_same(x0, mean, "discretized_gaussian_nll");
  if (!(stddev > 0.0)) throw ContractError("discretized_gaussian_nll: stddev must be positive");
  const int64_t batch = x0.dim(0);
  const size_t width = batch ? static_cast<size_t>(x0.numel() / batch) : 0;
  constexpr double kHalfBin = 1.0 / 255.0;
  auto xv = x0.data(), mv = mean.data();
  // d(-log P)/d(mean) per element, kept for the backward pass.
  auto dmean = std::make_shared<std::vector<double>>(xv.size());
  std::vector<double> nll(static_cast<size_t>(batch), 0.0);
  for (size_t i = 0; i < xv.size(); ++i) {
    const double c = xv[i] - mv[i];
    const double lo = xv[i] < -0.999 ? -kInf : (c - kHalfBin) / stddev;
    const double hi = xv[i] > 0.999 ? kInf : (c + kHalfBin) / stddev;
    const double log_p = log_bin_mass(lo, hi);
    nll[i / width] -= log_p;
    const double dlogp = (std::exp(log_phi(lo) - log_p) - std::exp(log_phi(hi) - log_p)) / stddev;
    (*dmean)[i] = -dlogp;
  }
  return Tensor::make_result({batch}, std::move(nll), {x0, mean}, [dmean, width](detail::Node& self) {
    auto& p = self.parents[1];
    if (!p || !p->requires_grad) return;
    auto& g = p->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / width] * (*dmean)[i];
  });
}

Tensor gaussian_kl_rows(const Tensor& mean_q, const std::vector<double>& var_q, const Tensor& mean_p,
                        const std::vector<double>& var_p) {
  check_same(mean_q, mean_p, "gaussian_kl_rows");
  const int64_t batch = mean_q.dim(0);
  if (static_cast<int64_t>(var_q.size()) != batch || static_cast<int64_t>(var_p.size()) != batch) {
    throw ContractError("gaussian_kl_rows: variance count does not match batch");
  }
  const double dims = static_cast<double>(batch ? mean_q.numel() / batch : 0);
  std::vector<double> inv_two_vp, constant;
  for (int64_t b = 0; b < batch; ++b) {
    const double vq = var_q[static_cast<size_t>(b)], vp = var_p[static_cast<size_t>(b)];
    inv_two_vp.push_back(0.5 / vp);
    constant.push_back(dims * 0.5 * (std::log(vp / vq) + vq / vp - 1.0));
  }
  Tensor sq = ops::sum_rows(ops::square(ops::sub(mean_q, mean_p)));
  return ops::add(ops::scale_rows(sq, inv_two_vp), Tensor({batch}, constant));
}

Tensor vlb_terms(const Tensor& x0, const DiffusionState& state, const Tensor& eps_hat, const NoiseSchedule& schedule) {
  check_batch(state.x_t, state.t, "vlb_terms");
  check_same(x0, state.x_t, "vlb_terms");
  check_same(eps_hat, state.x_t, "vlb_terms");
  std::vector<int64_t> first, later;
  for (size_t b = 0; b < state.t.size(); ++b) {
    if (state.t[b] < 1) throw ContractError("vlb_terms requires t >= 1");
    (state.t[b] == 1 ? first : later).push_back(static_cast<int64_t>(b));
  }

  std::vector<Tensor> parts;
  std::vector<int64_t> order;  // original row of each concatenated entry
  auto subset = [&](const std::vector<int64_t>& rows) {
    DiffusionState s{ops::index0(state.x_t, rows), {}};
    for (auto r : rows) s.t.push_back(state.t[static_cast<size_t>(r)]);
    return s;
  };
  if (!later.empty()) {
    DiffusionState s = subset(later);
    Tensor x0s = ops::index0(x0, later);
    PosteriorMoments q = q_posterior(x0s, s, schedule);
    Tensor mean_p = p_mean_from_eps(s, ops::index0(eps_hat, later), schedule);
    std::vector<double> var_p;
    for (int t : s.t) var_p.push_back(schedule.sigma_sq_at(t));
    parts.push_back(gaussian_kl_rows(q.mean, q.variance, mean_p, var_p));
    order.insert(order.end(), later.begin(), later.end());
  }
  if (!first.empty()) {
    DiffusionState s = subset(first);
    Tensor mean_p = p_mean_from_eps(s, ops::index0(eps_hat, first), schedule);
    parts.push_back(discretized_gaussian_nll(ops::index0(x0, first), mean_p, std::sqrt(schedule.sigma_sq_at(1))));
    order.insert(order.end(), first.begin(), first.end());
  }
  if (parts.empty()) return Tensor::zeros({0});
  Tensor joined = parts.size() == 1 ? parts[0] : ops::concat(parts, 0);
  std::vector<int64_t> inverse(order.size());
  for (size_t i = 0; i < order.size(); ++i) inverse[static_cast<size_t>(order[i])] = static_cast<int64_t>(i);
  return ops::index0(joined, inverse);
}

Tensor loss_vlb_term(const Tensor& x0, const DiffusionState& state, const Tensor& eps_hat,
                     const NoiseSchedule& schedule) {
  return ops::mean(vlb_terms(x0, state, eps_hat, schedule));
}

double prior_kl(const std::vector<double>& x0, double alpha_bar_T) {
  double kl = 0.0;
  const double v = 1.0 - alpha_bar_T;
  for (double x : x0) kl += 0.5 * (alpha_bar_T * x * x + v - 1.0 - std::log(v));
  return kl;
}

double loss_LT(const Tensor& x0, const NoiseSchedule& schedule) {
  const int64_t batch = x0.dim(0);
  if (batch == 0) return 0.0;
  const size_t width = static_cast<size_t>(x0.numel() / batch);
  auto xv = x0.data();
  double total = 0.0;
  for (int64_t b = 0; b < batch; ++b) {
    std::vector<double> row(xv.begin() + b * static_cast<int64_t>(width), xv.begin() + (b + 1) * static_cast<int64_t>(width));
    total += prior_kl(row, schedule.alpha_bar_at(schedule.T));
  }
  return total / static_cast<double>(batch);
}

LossTerms loss_hybrid(const Tensor& x0, const DiffusionState& state, const Tensor& eps, const Tensor& eps_hat,
                      const NoiseSchedule& schedule, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("loss_hybrid: lambda must be non-negative");
  LossTerms terms;
  Tensor simple = loss_simple(eps_hat, eps);
  Tensor vlb;
  {
    // The VLB value is always reported; it joins the graph only when weighted.
    std::unique_ptr<NoGradGuard> guard;
    if (lambda == 0.0) guard = std::make_unique<NoGradGuard>();
    vlb = vlb_terms(x0, state, eps_hat, schedule);
  }
  Tensor vlb_mean = ops::mean(vlb);
  terms.l_simple = simple.item();
  terms.l_vlb = vlb_mean.item();
  double sum_first = 0.0;
  int n_first = 0;
  for (size_t b = 0; b < state.t.size(); ++b) {
    if (state.t[b] == 1) {
      sum_first += vlb.data()[b];
      ++n_first;
    }
  }
  terms.l_0 = n_first ? sum_first / n_first : 0.0;
  terms.l_T = loss_LT(x0, schedule);
  terms.objective = lambda == 0.0 ? simple : ops::add(simple, ops::scale(vlb_mean, lambda));
  terms.l_hybrid = terms.objective.item();
  return terms;
}

}  // namespace fsdm
