#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fsdm {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major array of doubles carrying an optional autodiff history.
// Copies share the underlying node; operations always produce new nodes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  std::span<const double> data() const { return node_->value; }
  // Only for leaves (parameters, freshly built inputs). Mutating a value that
  // already feeds a recorded graph invalidates its gradients.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  // Reverse-mode sweep from a scalar; accumulates into every reachable leaf.
  void backward() const;

  // Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  // Builds a result node; history is recorded only when grad mode is on and
  // some input requires grad.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

bool grad_mode_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool all_finite(std::span<const double> values);

}  // namespace fsdm
