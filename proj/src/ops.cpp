#include "fsdm/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fsdm::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using detail::Node;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

// Gradient buffer of parent i, or nullptr when it does not take gradients.
double* grad_of(Node& self, size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return p->grad_buffer().data();
}

const std::vector<double>& value_of(Node& self, size_t i) { return self.parents[i]->value; }

template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = f(v);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    double* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = value_of(self, 0);
    for (size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::out_of_range("axis out of range");
  return axis;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(static_cast<size_t>(a.numel()));
  auto x = a.data(), y = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (size_t p = 0; p < 2; ++p) {
      if (double* g = grad_of(self, p)) {
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(static_cast<size_t>(a.numel()));
  auto x = a.data(), y = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(static_cast<size_t>(a.numel()));
  auto x = a.data(), y = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = value_of(self, 0);
    const auto& y = value_of(self, 1);
    if (double* g = grad_of(self, 0)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor scale_rows(const Tensor& x, const std::vector<double>& factors) {
  if (x.rank() < 1 || x.dim(0) != static_cast<int64_t>(factors.size())) {
    throw std::invalid_argument("scale_rows: " + std::to_string(factors.size()) + " factors for " + shape_str(x.shape()));
  }
  const size_t width = factors.empty() ? 0 : static_cast<size_t>(x.numel()) / factors.size();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= factors[i / width];
  return Tensor::make_result(x.shape(), std::move(out), {x}, [factors, width](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factors[i / width];
    }
  });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Tensor add_broadcast(const Tensor& x, const Tensor& y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
    throw std::invalid_argument("add_broadcast: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  }
  const size_t inner = static_cast<size_t>(y.numel());
  std::vector<double> out(x.data().begin(), x.data().end());
  auto yv = y.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += yv[i % inner];
  return Tensor::make_result(xs, std::move(out), {x, y}, [inner](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  auto v = a.data();
  double s = 0.0;
  for (double x : v) s += x;
  return Tensor::make_result({}, {s}, {a}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      const double d = self.grad[0];
      const size_t n = self.parents[0]->value.size();
      for (size_t i = 0; i < n; ++i) g[i] += d;
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_rows(const Tensor& a) {
  if (a.rank() < 1) throw std::invalid_argument("sum_rows needs rank >= 1");
  const int64_t rows = a.dim(0);
  const size_t width = rows ? static_cast<size_t>(a.numel() / rows) : 0;
  std::vector<double> out(static_cast<size_t>(rows), 0.0);
  auto v = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (size_t j = 0; j < width; ++j) s += v[static_cast<size_t>(r) * width + j];
    out[static_cast<size_t>(r)] = s;
  }
  return Tensor::make_result({rows}, std::move(out), {a}, [width](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (size_t r = 0; r < self.grad.size(); ++r) {
        for (size_t j = 0; j < width; ++j) g[r * width + j] += self.grad[r];
      }
    }
  });
}

Tensor mean_axis(const Tensor& a, int axis, bool canonical_order) {
  axis = norm_axis(axis, a.rank());
  const auto& shape = a.shape();
  const int64_t n = shape[static_cast<size_t>(axis)];
  if (n == 0) throw std::invalid_argument("mean_axis over empty axis");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  Shape out_shape = shape;
  out_shape.erase(out_shape.begin() + axis);

  std::vector<double> out(static_cast<size_t>(outer * inner));
  std::vector<double> terms(static_cast<size_t>(n));
  auto v = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      for (int64_t k = 0; k < n; ++k) terms[static_cast<size_t>(k)] = v[static_cast<size_t>((o * n + k) * inner + i)];
      if (canonical_order) std::sort(terms.begin(), terms.end());
      double s = 0.0;
      for (double t : terms) s += t;
      out[static_cast<size_t>(o * inner + i)] = s / static_cast<double>(n);
    }
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a}, [outer, inner, n](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const double inv = 1.0 / static_cast<double>(n);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < n; ++k)
        for (int64_t i = 0; i < inner; ++i)
          g[(o * n + k) * inner + i] += self.grad[static_cast<size_t>(o * inner + i)] * inv;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw std::invalid_argument("reshape: more than one inferred axis");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[static_cast<size_t>(infer)] = known ? a.numel() / known : 0;
  if (numel_of(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const auto& in_shape = a.shape();
  const size_t rank = in_shape.size();
  if (perm.size() != rank) throw std::invalid_argument("permute: rank mismatch");
  std::vector<int64_t> in_strides(rank, 1);
  for (size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<int64_t> src_strides(rank);
  std::vector<bool> seen(rank, false);
  for (size_t i = 0; i < rank; ++i) {
    auto p = static_cast<size_t>(perm[i]);
    if (p >= rank || seen[p]) throw std::invalid_argument("permute: invalid permutation");
    seen[p] = true;
    out_shape[i] = in_shape[p];
    src_strides[i] = in_strides[p];
  }
  // Flat source offset of every output element.
  const int64_t total = a.numel();
  auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(total));
  std::vector<int64_t> counter(rank, 0);
  int64_t offset = 0;
  for (int64_t flat = 0; flat < total; ++flat) {
    (*map)[static_cast<size_t>(flat)] = offset;
    for (size_t d = rank; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        offset += src_strides[d];
        break;
      }
      offset -= src_strides[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  std::vector<double> out(static_cast<size_t>(total));
  auto v = a.data();
  for (int64_t i = 0; i < total; ++i) out[static_cast<size_t>(i)] = v[static_cast<size_t>((*map)[static_cast<size_t>(i)])];
  return Tensor::make_result(std::move(out_shape), std::move(out), {a}, [map](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (size_t i = 0; i < self.grad.size(); ++i) g[(*map)[i]] += self.grad[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const int rank = parts[0].rank();
  axis = norm_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != axis && p.dim(d) != parts[0].dim(d)) throw std::invalid_argument("concat: shape mismatch");
    }
    out_shape[static_cast<size_t>(axis)] += p.dim(axis);
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<size_t>(d)];
  const int64_t out_row = out_shape[static_cast<size_t>(axis)] * inner;

  std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
  std::vector<int64_t> widths;
  int64_t col = 0;
  for (const auto& p : parts) {
    const int64_t w = p.dim(axis) * inner;
    auto v = p.data();
    for (int64_t o = 0; o < outer; ++o) std::copy_n(v.begin() + o * w, w, out.begin() + o * out_row + col);
    widths.push_back(w);
    col += w;
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), parts, [widths, outer, out_row](Node& self) {
    int64_t col = 0;
    for (size_t p = 0; p < widths.size(); ++p) {
      const int64_t w = widths[p];
      if (double* g = grad_of(self, p)) {
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t j = 0; j < w; ++j) g[o * w + j] += self.grad[static_cast<size_t>(o * out_row + col + j)];
      }
      col += w;
    }
  });
}

Tensor slice0(const Tensor& a, int64_t begin, int64_t end) {
  if (a.rank() < 1 || begin < 0 || end < begin || end > a.dim(0)) throw std::out_of_range("slice0 out of range");
  std::vector<int64_t> rows(static_cast<size_t>(end - begin));
  std::iota(rows.begin(), rows.end(), begin);
  return index0(a, rows);
}

Tensor index0(const Tensor& a, const std::vector<int64_t>& rows) {
  if (a.rank() < 1) throw std::invalid_argument("index0 needs rank >= 1");
  const int64_t n = a.dim(0);
  const size_t width = n ? static_cast<size_t>(a.numel() / n) : 0;
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<int64_t>(rows.size());
  std::vector<double> out(rows.size() * width);
  auto v = a.data();
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) throw std::out_of_range("index0 row out of range");
    std::copy_n(v.begin() + rows[r] * static_cast<int64_t>(width), width, out.begin() + static_cast<int64_t>(r * width));
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a}, [rows, width](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (size_t r = 0; r < rows.size(); ++r)
        for (size_t j = 0; j < width; ++j) g[static_cast<size_t>(rows[r]) * width + j] += self.grad[r * width + j];
    }
  });
}

Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack0 of nothing");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) throw std::invalid_argument("stack0: shape mismatch");
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, 0);
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw std::invalid_argument("matmul: expected matching rank 2 or 3, got " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const bool batched = a.rank() == 3;
  const int64_t batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) throw std::invalid_argument("matmul: batch mismatch");
  const int off = batched ? 1 : 0;
  const int64_t ar = a.dim(off), ac = a.dim(off + 1), br = b.dim(off), bc = b.dim(off + 1);
  const int64_t m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const int64_t k2 = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != k2) throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                                           shape_str(b.shape()));
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(static_cast<size_t>(batch * m * n));
  auto av = a.data(), bv = b.data();
  for (int64_t i = 0; i < batch; ++i) {
    ConstMapMat A(av.data() + i * ar * ac, ar, ac);
    ConstMapMat B(bv.data() + i * br * bc, br, bc);
    MapMat C(out.data() + i * m * n, m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a, b},
                             [=](Node& self) {
                               double* ga = grad_of(self, 0);
                               double* gb = grad_of(self, 1);
                               const auto& avals = value_of(self, 0);
                               const auto& bvals = value_of(self, 1);
                               for (int64_t i = 0; i < batch; ++i) {
                                 ConstMapMat A(avals.data() + i * ar * ac, ar, ac);
                                 ConstMapMat B(bvals.data() + i * br * bc, br, bc);
                                 ConstMapMat dC(self.grad.data() + i * m * n, m, n);
                                 if (ga) {
                                   MapMat dA(ga + i * ar * ac, ar, ac);
                                   if (!trans_a && !trans_b) dA.noalias() += dC * B.transpose();
                                   else if (!trans_a && trans_b) dA.noalias() += dC * B;
                                   else if (trans_a && !trans_b) dA.noalias() += B * dC.transpose();
                                   else dA.noalias() += B.transpose() * dC.transpose();
                                 }
                                 if (gb) {
                                   MapMat dB(gb + i * br * bc, br, bc);
                                   if (!trans_a && !trans_b) dB.noalias() += A.transpose() * dC;
                                   else if (trans_a && !trans_b) dB.noalias() += A * dC;
                                   else if (!trans_a && trans_b) dB.noalias() += dC.transpose() * A;
                                   else dB.noalias() += dC.transpose() * A.transpose();
                                 }
                               }
                             });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw std::invalid_argument("linear: weight must be [out, in]");
  const int64_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in_f) {
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                                shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) throw std::invalid_argument("linear: bias shape");
  const int64_t rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<double> out(static_cast<size_t>(rows * out_f));
  {
    ConstMapMat X(x.data().data(), rows, in_f);
    ConstMapMat W(weight.data().data(), out_f, in_f);
    MapMat Y(out.data(), rows, out_f);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::RowVectorXd> b(bias.data().data(), out_f);
      Y.rowwise() += b;
    }
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {x, weight, bias}, [=](Node& self) {
    ConstMapMat dY(self.grad.data(), rows, out_f);
    if (double* gx = grad_of(self, 0)) {
      MapMat dX(gx, rows, in_f);
      ConstMapMat W(value_of(self, 1).data(), out_f, in_f);
      dX.noalias() += dY * W;
    }
    if (double* gw = grad_of(self, 1)) {
      MapMat dW(gw, out_f, in_f);
      ConstMapMat X(value_of(self, 0).data(), rows, in_f);
      dW.noalias() += dY.transpose() * X;
    }
    if (double* gb = grad_of(self, 2)) {
      for (int64_t r = 0; r < rows; ++r) {
        const double* row = self.grad.data() + r * out_f;
        for (int64_t o = 0; o < out_f; ++o) gb[o] += row[o];
      }
    }
  });
}

namespace {

struct ConvGeom {
  int64_t batch, in_c, height, width, out_c, kernel, out_h, out_w;
  int stride, pad;
  int64_t col_rows() const { return in_c * kernel * kernel; }
  int64_t col_cols() const { return out_h * out_w; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* img, const ConvGeom& g, double* col) {
  for (int64_t c = 0; c < g.in_c; ++c) {
    for (int64_t ky = 0; ky < g.kernel; ++ky) {
      for (int64_t kx = 0; kx < g.kernel; ++kx) {
        double* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.col_cols();
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          const double* src = img + (c * g.height + iy) * g.width;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* img) {
  for (int64_t c = 0; c < g.in_c; ++c) {
    for (int64_t ky = 0; ky < g.kernel; ++ky) {
      for (int64_t kx = 0; kx < g.kernel; ++kx) {
        const double* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.col_cols();
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const double* src = row + oy * g.out_w;
          double* dst = img + (c * g.height + iy) * g.width;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(1) != x.dim(1)) {
    throw std::invalid_argument("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                                shape_str(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  ConvGeom g{};
  g.batch = x.dim(0);
  g.in_c = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_c = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  g.out_h = (g.height + 2 * padding - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw std::invalid_argument("conv2d: empty output");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_c)) throw std::invalid_argument("conv2d: bias shape");

  const int64_t in_plane = g.in_c * g.height * g.width;
  const int64_t out_plane = g.out_c * g.col_cols();
  std::vector<double> out(static_cast<size_t>(g.batch * out_plane));
  std::vector<double> col(g.pointwise() ? 0 : static_cast<size_t>(g.col_rows() * g.col_cols()));
  ConstMapMat W(weight.data().data(), g.out_c, g.col_rows());
  for (int64_t b = 0; b < g.batch; ++b) {
    const double* img = x.data().data() + b * in_plane;
    const double* colp = img;
    if (!g.pointwise()) {
      im2col(img, g, col.data());
      colp = col.data();
    }
    MapMat Y(out.data() + b * out_plane, g.out_c, g.col_cols());
    Y.noalias() = W * ConstMapMat(colp, g.col_rows(), g.col_cols());
    if (bias.defined()) {
      Eigen::Map<const Eigen::VectorXd> bv(bias.data().data(), g.out_c);
      Y.colwise() += bv;
    }
  }
  return Tensor::make_result({g.batch, g.out_c, g.out_h, g.out_w}, std::move(out), {x, weight, bias},
                             [g, in_plane, out_plane](Node& self) {
                               double* gx = grad_of(self, 0);
                               double* gw = grad_of(self, 1);
                               double* gb = grad_of(self, 2);
                               const auto& xv = value_of(self, 0);
                               ConstMapMat W(value_of(self, 1).data(), g.out_c, g.col_rows());
                               std::vector<double> col(g.pointwise() ? 0 : static_cast<size_t>(g.col_rows() * g.col_cols()));
                               std::vector<double> dcol(col.size());
                               for (int64_t b = 0; b < g.batch; ++b) {
                                 ConstMapMat dY(self.grad.data() + b * out_plane, g.out_c, g.col_cols());
                                 if (gb) {
                                   for (int64_t o = 0; o < g.out_c; ++o) {
                                     const double* row = self.grad.data() + b * out_plane + o * g.col_cols();
                                     double acc = 0.0;
                                     for (int64_t i = 0; i < g.col_cols(); ++i) acc += row[i];
                                     gb[o] += acc;
                                   }
                                 }
                                 const double* img = xv.data() + b * in_plane;
                                 if (gw) {
                                   const double* colp = img;
                                   if (!g.pointwise()) {
                                     im2col(img, g, col.data());
                                     colp = col.data();
                                   }
                                   MapMat dW(gw, g.out_c, g.col_rows());
                                   dW.noalias() += dY * ConstMapMat(colp, g.col_rows(), g.col_cols()).transpose();
                                 }
                                 if (gx) {
                                   if (g.pointwise()) {
                                     MapMat dX(gx + b * in_plane, g.col_rows(), g.col_cols());
                                     dX.noalias() += W.transpose() * dY;
                                   } else {
                                     MapMat dC(dcol.data(), g.col_rows(), g.col_cols());
                                     dC.noalias() = W.transpose() * dY;
                                     col2im_add(dcol.data(), g, gx + b * in_plane);
                                   }
                                 }
                               }
                             });
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("upsample_nearest2x expects [B, C, H, W]");
  const int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> out(static_cast<size_t>(planes * 4 * h * w));
  auto v = x.data();
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < 2 * h; ++y)
      for (int64_t xx = 0; xx < 2 * w; ++xx)
        out[static_cast<size_t>((p * 2 * h + y) * 2 * w + xx)] = v[static_cast<size_t>((p * h + y / 2) * w + xx / 2)];
  return Tensor::make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x}, [planes, h, w](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (int64_t p = 0; p < planes; ++p)
      for (int64_t y = 0; y < 2 * h; ++y)
        for (int64_t xx = 0; xx < 2 * w; ++xx)
          g[(p * h + y / 2) * w + xx / 2] += self.grad[static_cast<size_t>((p * 2 * h + y) * 2 * w + xx)];
  });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps) {
  if (x.rank() < 2) throw std::invalid_argument("group_norm expects [B, C, ...]");
  const int64_t batch = x.dim(0), channels = x.dim(1);
  if (groups < 1 || channels % groups != 0) throw std::invalid_argument("group_norm: groups must divide channels");
  if (gamma.numel() != channels || beta.numel() != channels) throw std::invalid_argument("group_norm: affine shape");
  const int64_t spatial = x.numel() / (batch * channels);
  const int64_t per_group = channels / groups;
  const int64_t count = per_group * spatial;

  auto xv = x.data();
  auto gv = gamma.data(), bv = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(batch * groups));
  std::vector<double> out(xv.size());
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t gi = 0; gi < groups; ++gi) {
      const size_t base = static_cast<size_t>((b * channels + gi * per_group) * spatial);
      double m = 0.0;
      for (int64_t i = 0; i < count; ++i) m += xv[base + i];
      m /= static_cast<double>(count);
      double var = 0.0;
      for (int64_t i = 0; i < count; ++i) var += (xv[base + i] - m) * (xv[base + i] - m);
      var /= static_cast<double>(count);
      const double r = 1.0 / std::sqrt(var + eps);
      (*rstd)[static_cast<size_t>(b * groups + gi)] = r;
      for (int64_t c = 0; c < per_group; ++c) {
        const int64_t ch = gi * per_group + c;
        for (int64_t s = 0; s < spatial; ++s) {
          const size_t idx = base + static_cast<size_t>(c * spatial + s);
          const double h = (xv[idx] - m) * r;
          (*xhat)[idx] = h;
          out[idx] = h * gv[ch] + bv[ch];
        }
      }
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [=](Node& self) {
                               double* gx = grad_of(self, 0);
                               double* gg = grad_of(self, 1);
                               double* gb = grad_of(self, 2);
                               const auto& gam = value_of(self, 1);
                               const auto& dy = self.grad;
                               for (int64_t b = 0; b < batch; ++b) {
                                 for (int64_t gi = 0; gi < groups; ++gi) {
                                   const size_t base = static_cast<size_t>((b * channels + gi * per_group) * spatial);
                                   double sum_d = 0.0, sum_dh = 0.0;
                                   for (int64_t c = 0; c < per_group; ++c) {
                                     const int64_t ch = gi * per_group + c;
                                     for (int64_t s = 0; s < spatial; ++s) {
                                       const size_t idx = base + static_cast<size_t>(c * spatial + s);
                                       const double d = dy[idx] * gam[ch];
                                       sum_d += d;
                                       sum_dh += d * (*xhat)[idx];
                                       if (gg) gg[ch] += dy[idx] * (*xhat)[idx];
                                       if (gb) gb[ch] += dy[idx];
                                     }
                                   }
                                   if (!gx) continue;
                                   const double r = (*rstd)[static_cast<size_t>(b * groups + gi)];
                                   const double inv_n = 1.0 / static_cast<double>(count);
                                   for (int64_t c = 0; c < per_group; ++c) {
                                     const int64_t ch = gi * per_group + c;
                                     for (int64_t s = 0; s < spatial; ++s) {
                                       const size_t idx = base + static_cast<size_t>(c * spatial + s);
                                       const double d = dy[idx] * gam[ch];
                                       gx[idx] += r * (d - inv_n * sum_d - (*xhat)[idx] * inv_n * sum_dh);
                                     }
                                   }
                                 }
                               }
                             });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int64_t width = x.dim(-1);
  if (gamma.numel() != width || beta.numel() != width) throw std::invalid_argument("layer_norm: affine shape");
  const int64_t rows = x.numel() / width;
  auto xv = x.data();
  auto gv = gamma.data(), bv = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  std::vector<double> out(xv.size());
  for (int64_t r = 0; r < rows; ++r) {
    const size_t base = static_cast<size_t>(r * width);
    double m = 0.0;
    for (int64_t i = 0; i < width; ++i) m += xv[base + i];
    m /= static_cast<double>(width);
    double var = 0.0;
    for (int64_t i = 0; i < width; ++i) var += (xv[base + i] - m) * (xv[base + i] - m);
    var /= static_cast<double>(width);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[static_cast<size_t>(r)] = rs;
    for (int64_t i = 0; i < width; ++i) {
      const double h = (xv[base + i] - m) * rs;
      (*xhat)[base + i] = h;
      out[base + i] = h * gv[i] + bv[i];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta}, [=](Node& self) {
    double* gx = grad_of(self, 0);
    double* gg = grad_of(self, 1);
    double* gb = grad_of(self, 2);
    const auto& gam = value_of(self, 1);
    const auto& dy = self.grad;
    const double inv_n = 1.0 / static_cast<double>(width);
    for (int64_t r = 0; r < rows; ++r) {
      const size_t base = static_cast<size_t>(r * width);
      double sum_d = 0.0, sum_dh = 0.0;
      for (int64_t i = 0; i < width; ++i) {
        const double d = dy[base + i] * gam[i];
        sum_d += d;
        sum_dh += d * (*xhat)[base + i];
        if (gg) gg[i] += dy[base + i] * (*xhat)[base + i];
        if (gb) gb[i] += dy[base + i];
      }
      if (!gx) continue;
      const double rs = (*rstd)[static_cast<size_t>(r)];
      for (int64_t i = 0; i < width; ++i) {
        const double d = dy[base + i] * gam[i];
        gx[base + i] += rs * (d - inv_n * sum_d - (*xhat)[base + i] * inv_n * sum_dh);
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  const int64_t width = x.dim(-1);
  const int64_t rows = width ? x.numel() / width : 0;
  auto xv = x.data();
  std::vector<double> out(xv.size());
  // Rows are staged through Eigen-owned (aligned) buffers: vectorized
  // reductions over a mapped row otherwise peel a head whose length depends on
  // the row's address, which changes the summation order between runs.
  Eigen::ArrayXd row(width);
  for (int64_t r = 0; r < rows; ++r) {
    row = Eigen::Map<const Eigen::ArrayXd>(xv.data() + r * width, width);
    row = (row - row.maxCoeff()).exp();
    row /= row.sum();
    Eigen::Map<Eigen::ArrayXd>(out.data() + r * width, width) = row;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [rows, width](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    Eigen::ArrayXd y(width), gy(width);
    for (int64_t r = 0; r < rows; ++r) {
      y = Eigen::Map<const Eigen::ArrayXd>(self.value.data() + r * width, width);
      gy = Eigen::Map<const Eigen::ArrayXd>(self.grad.data() + r * width, width);
      gy = y * (gy - (gy * y).sum());
      double* gx = g + r * width;
      for (int64_t i = 0; i < width; ++i) gx[i] += gy[i];
    }
  });
}

Tensor channel_affine(const Tensor& x, const Tensor& scale_t, const Tensor& shift_t) {
  if (x.rank() < 2) throw std::invalid_argument("channel_affine expects [B, C, ...]");
  const int64_t batch = x.dim(0), channels = x.dim(1);
  const int64_t spatial = x.numel() / (batch * channels);
  for (const Tensor* t : {&scale_t, &shift_t}) {
    if (t->defined() && t->shape() != Shape{batch, channels}) {
      throw std::invalid_argument("channel_affine: modulation shape " + shape_str(t->shape()) + " for input " +
                                  shape_str(x.shape()));
    }
  }
  const bool has_scale = scale_t.defined(), has_shift = shift_t.defined();
  auto xv = x.data();
  std::vector<double> out(xv.begin(), xv.end());
  for (int64_t bc = 0; bc < batch * channels; ++bc) {
    const double m = has_scale ? scale_t.data()[static_cast<size_t>(bc)] : 1.0;
    const double s = has_shift ? shift_t.data()[static_cast<size_t>(bc)] : 0.0;
    double* row = out.data() + bc * spatial;
    if (has_scale)
      for (int64_t i = 0; i < spatial; ++i) row[i] *= m;
    if (has_shift)
      for (int64_t i = 0; i < spatial; ++i) row[i] += s;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, scale_t, shift_t},
                             [=](Node& self) {
                               double* gx = grad_of(self, 0);
                               double* gs = has_scale ? grad_of(self, 1) : nullptr;
                               double* gt = has_shift ? grad_of(self, 2) : nullptr;
                               const auto& xin = value_of(self, 0);
                               for (int64_t bc = 0; bc < batch * channels; ++bc) {
                                 const double* dy = self.grad.data() + bc * spatial;
                                 const double m = has_scale ? value_of(self, 1)[static_cast<size_t>(bc)] : 1.0;
                                 double ds = 0.0, dt = 0.0;
                                 for (int64_t i = 0; i < spatial; ++i) {
                                   if (gx) gx[bc * spatial + i] += dy[i] * m;
                                   ds += dy[i] * xin[static_cast<size_t>(bc * spatial + i)];
                                   dt += dy[i];
                                 }
                                 if (gs) gs[bc] += ds;
                                 if (gt) gt[bc] += dt;
                               }
                             });
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

}  // namespace fsdm::ops
