#include "fsdm/params.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fsdm/rng.hpp"

namespace fsdm {

const Tensor& ParameterStore::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  init.set_requires_grad(true);
  auto& p = params_[name];
  p.value = std::move(init);
  return p.value;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.value;
}

int64_t ParameterStore::scalar_count() const { return scalar_count(""); }

int64_t ParameterStore::scalar_count(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, p] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) n += p.value.numel();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) p.value.zero_grad();
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, p] : params_) {
    for (double g : p.value.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void adam_step(ParameterStore& store, double lr, double beta1, double beta2, double eps) {
  ++store.step_;
  const double t = static_cast<double>(store.step_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, p] : store.params_) {
    if (!p.value.has_grad()) continue;
    auto g = p.value.grad();
    if (!all_finite(g)) {
      ++store.skipped_;
      continue;
    }
    auto w = p.value.mutable_data();
    if (p.adam_m.empty()) {
      p.adam_m.assign(w.size(), 0.0);
      p.adam_v.assign(w.size(), 0.0);
    }
    for (size_t i = 0; i < w.size(); ++i) {
      p.adam_m[i] = beta1 * p.adam_m[i] + (1.0 - beta1) * g[i];
      p.adam_v[i] = beta2 * p.adam_v[i] + (1.0 - beta2) * g[i] * g[i];
      const double m_hat = p.adam_m[i] / c1;
      const double v_hat = p.adam_v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  const double norm = store.grad_norm();
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& [name, p] : store.entries()) {
      if (!p.value.has_grad()) continue;
      for (double& g : p.value.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, ParameterStore& store, double eps,
                           int64_t max_per_param, uint64_t seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw std::invalid_argument("grad_check: epsilon must lie in [1e-7, 1e-3]");
  store.zero_grad();
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw std::runtime_error("grad_check: loss not finite at current parameters");
  loss.backward();

  GradCheckReport report;
  RngStream rng(seed, "grad_check");
  for (auto& [name, p] : store.entries()) {
    Tensor& w = p.value;
    const int64_t n = w.numel();
    std::vector<int64_t> coords(static_cast<size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (n > max_per_param) {
      // Partial Fisher-Yates to pick a fixed-size sample.
      for (int64_t i = 0; i < max_per_param; ++i) {
        std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(rng.uniform_int(i, n - 1))]);
      }
      coords.resize(static_cast<size_t>(max_per_param));
    }
    std::vector<double> analytic(w.grad().begin(), w.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<size_t>(n), 0.0);
    for (int64_t c : coords) {
      auto data = w.mutable_data();
      const double orig = data[static_cast<size_t>(c)];
      double fp, fm;
      {
        NoGradGuard guard;
        data[static_cast<size_t>(c)] = orig + eps;
        fp = f().item();
        data[static_cast<size_t>(c)] = orig - eps;
        fm = f().item();
        data[static_cast<size_t>(c)] = orig;
      }
      const std::string coord = name + "[" + std::to_string(c) + "]";
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error("grad_check: non-finite loss when perturbing " + coord);
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[static_cast<size_t>(c)];
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      ++report.coordinates;
      if (report.coordinates == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_coordinate = coord;
      }
    }
  }
  store.zero_grad();
  return report;
}

}  // namespace fsdm
