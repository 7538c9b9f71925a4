#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fsdm/tensor.hpp"

namespace fsdm {

struct Parameter {
  Tensor value;
  // Adam first and second moments, sized like value once the first step ran.
  std::vector<double> adam_m;
  std::vector<double> adam_v;
};

// Named learnable arrays, ordered by name. Module objects keep Tensor handles
// into the store, so in-place value updates are visible to them.
class ParameterStore {
 public:
  const Tensor& add(const std::string& name, Tensor init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Parameter>& entries() { return params_; }
  const std::map<std::string, Parameter>& entries() const { return params_; }
  size_t size() const { return params_.size(); }
  int64_t scalar_count() const;
  // Scalars in parameters whose name starts with prefix.
  int64_t scalar_count(const std::string& prefix) const;

  void zero_grad();
  double grad_norm() const;

  int64_t step() const { return step_; }
  void set_step(int64_t step) { step_ = step; }
  int64_t skipped_updates() const { return skipped_; }
  void set_skipped_updates(int64_t n) { skipped_ = n; }

 private:
  friend void adam_step(ParameterStore&, double, double, double, double);
  std::map<std::string, Parameter> params_;
  int64_t step_ = 0;
  int64_t skipped_ = 0;
};

// One bias-corrected Adam update of every parameter that has a gradient.
// A parameter with a non-finite gradient is left untouched and counted in
// skipped_updates().
void adam_step(ParameterStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  int64_t coordinates = 0;
};

// Compares reverse-mode gradients of a scalar function of the store against
// central differences. Up to max_per_param coordinates are sampled from each
// parameter (all of them when the parameter is small enough). Throws if f is
// not finite at a perturbed point.
GradCheckReport grad_check(const std::function<Tensor()>& f, ParameterStore& store, double eps = 1e-5,
                           int64_t max_per_param = 16, uint64_t seed = 0);

}  // namespace fsdm
