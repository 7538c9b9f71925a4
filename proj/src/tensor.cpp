#include "fsdm/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace fsdm {

namespace {
thread_local bool g_grad_enabled = true;
}

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

int64_t Tensor::dim(int axis) const {
  int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("axis out of range for shape " + shape_str(shape()));
  return node_->shape[static_cast<size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) throw std::invalid_argument("index rank mismatch");
  int64_t flat = 0;
  size_t axis = 0;
  for (auto i : index) {
    auto extent = node_->shape[axis++];
    if (i < 0 || i >= extent) throw std::out_of_range("index out of range");
    flat = flat * extent + i;
  }
  return node_->value[static_cast<size_t>(flat)];
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }
Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward) {
  Tensor out(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(inputs.size());
  for (auto& in : inputs) out.node_->parents.push_back(in.defined() ? in.node_ : nullptr);
  out.node_->backward = std::move(backward);
  return out;
}

void Tensor::backward() const {
  if (numel() != 1) throw std::logic_error("backward() requires a scalar, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order of the recorded graph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Intermediate gradients are not needed after the sweep.
  for (auto* node : order) {
    if (node->backward) node->grad.clear();
  }
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace fsdm
