#include "fsdm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"
#include "fsdm/rng.hpp"

namespace fsdm::nn {

Tensor make_param(ParameterStore& store, uint64_t seed, const std::string& name, Shape shape, Init init, double bound) {
  std::vector<double> values(static_cast<size_t>(numel_of(shape)), 0.0);
  if (init == Init::kFanIn) {
    RngStream rng(seed, "init/" + name);
    for (double& v : values) v = bound * (2.0 * rng.uniform() - 1.0);
  }
  return store.add(name, Tensor(std::move(shape), std::move(values)));
}

Linear::Linear(ParameterStore& store, uint64_t seed, const std::string& name, int in_features, int out_features,
               Init init, bool bias)
    : in_(in_features), out_(out_features) {
  if (in_features < 1 || out_features < 1) throw ConfigError(name + ": feature counts must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight_ = make_param(store, seed, name + ".weight", {out_features, in_features}, init, bound);
  if (bias) bias_ = make_param(store, seed, name + ".bias", {out_features}, init, bound);
}

Tensor Linear::operator()(const Tensor& x) const { return ops::linear(x, weight_, bias_); }

Conv2d::Conv2d(ParameterStore& store, uint64_t seed, const std::string& name, int in_channels, int out_channels,
               int kernel, int stride, int padding, Init init)
    : stride_(stride), padding_(padding < 0 ? kernel / 2 : padding) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1) throw ConfigError(name + ": sizes must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  weight_ = make_param(store, seed, name + ".weight", {out_channels, in_channels, kernel, kernel}, init, bound);
  bias_ = make_param(store, seed, name + ".bias", {out_channels}, init, bound);
}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight_, bias_, stride_, padding_); }

GroupNorm::GroupNorm(ParameterStore& store, const std::string& name, int channels, int groups) {
  groups_ = std::max(1, std::min(groups, channels));
  while (channels % groups_ != 0) --groups_;
  gamma_ = store.add(name + ".gamma", Tensor::full({channels}, 1.0));
  beta_ = store.add(name + ".beta", Tensor::zeros({channels}));
}

Tensor GroupNorm::operator()(const Tensor& x) const { return ops::group_norm(x, gamma_, beta_, groups_); }

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int width) {
  gamma_ = store.add(name + ".gamma", Tensor::full({width}, 1.0));
  beta_ = store.add(name + ".beta", Tensor::zeros({width}));
}

Tensor LayerNorm::operator()(const Tensor& x) const { return ops::layer_norm(x, gamma_, beta_); }

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, uint64_t seed, const std::string& name, int query_dim,
                                       int kv_dim, int heads, int head_dim, Init out_init)
    : heads_(heads), head_dim_(head_dim) {
  if (heads < 1 || head_dim < 1) throw ConfigError(name + ": heads and head_dim must be positive");
  const int inner = heads * head_dim;
  to_q_ = Linear(store, seed, name + ".to_q", query_dim, inner, Init::kFanIn, false);
  to_k_ = Linear(store, seed, name + ".to_k", kv_dim, inner, Init::kFanIn, false);
  to_v_ = Linear(store, seed, name + ".to_v", kv_dim, inner, Init::kFanIn, false);
  to_out_ = Linear(store, seed, name + ".to_out", inner, query_dim, out_init, true);
}

namespace {

// [B, L, H*D] -> [B*H, L, D]
Tensor split_heads(const Tensor& x, int heads, int head_dim) {
  const int64_t b = x.dim(0), l = x.dim(1);
  Tensor h = ops::permute(ops::reshape(x, {b, l, heads, head_dim}), {0, 2, 1, 3});
  return ops::reshape(h, {b * heads, l, head_dim});
}

// [B*H, L, D] -> [B, L, H*D]
Tensor merge_heads(const Tensor& x, int heads) {
  const int64_t bh = x.dim(0), l = x.dim(1), d = x.dim(2);
  Tensor h = ops::permute(ops::reshape(x, {bh / heads, heads, l, d}), {0, 2, 1, 3});
  return ops::reshape(h, {bh / heads, l, heads * d});
}

}  // namespace

Tensor MultiHeadAttention::attend(const Tensor& queries, const Tensor& keys_values) const {
  if (queries.rank() != 3 || keys_values.rank() != 3 || queries.dim(0) != keys_values.dim(0)) {
    throw ContractError("attention expects [B, L, D] queries and keys with equal batch, got " +
                        shape_str(queries.shape()) + " and " + shape_str(keys_values.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  Tensor q = split_heads(ops::scale(to_q_(queries), scale), heads_, head_dim_);
  Tensor k = split_heads(to_k_(keys_values), heads_, head_dim_);
  Tensor v = split_heads(to_v_(keys_values), heads_, head_dim_);
  return merge_heads(ops::matmul(ops::softmax(ops::matmul(q, k, false, true)), v), heads_);
}

Tensor MultiHeadAttention::values(const Tensor& keys_values) const { return to_v_(keys_values); }

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys_values) const {
  return to_out_(attend(queries, keys_values));
}

Tensor sinusoidal_embedding(const std::vector<int>& t, int width) {
  if (width < 1) throw ConfigError("embedding width must be positive");
  const int half = width / 2;
  std::vector<double> out(t.size() * static_cast<size_t>(width), 0.0);
  for (size_t b = 0; b < t.size(); ++b) {
    double* row = out.data() + b * static_cast<size_t>(width);
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = static_cast<double>(t[b]) * freq;
      row[i] = std::sin(arg);
      row[half + i] = std::cos(arg);
    }
  }
  return Tensor({static_cast<int64_t>(t.size()), width}, std::move(out));
}

Tensor to_sequence(const Tensor& x) {
  const int64_t b = x.dim(0), c = x.dim(1);
  return ops::permute(ops::reshape(x, {b, c, x.dim(2) * x.dim(3)}), {0, 2, 1});
}

Tensor from_sequence(const Tensor& seq, int64_t height, int64_t width) {
  const int64_t b = seq.dim(0), c = seq.dim(2);
  return ops::reshape(ops::permute(seq, {0, 2, 1}), {b, c, height, width});
}

}  // namespace fsdm::nn
