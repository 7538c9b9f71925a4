// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsdm/checkpoint.hpp"
#include "fsdm/conditioning.hpp"
#include "fsdm/config.hpp"
#include "fsdm/diffusion.hpp"
#include "fsdm/evalsuite.hpp"
#include "fsdm/model.hpp"
#include "fsdm/runtime.hpp"
#include "fsdm/sampler.hpp"
#include "fsdm/trainer.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace fsdm;
using namespace fsdm::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string sci(double v) { return fmt("%.3g", v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1

Outcome numerics() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, GradCheckReport>> reports;
  auto check = [&](const std::string& block, ParameterStore& store, const std::function<Tensor()>& f,
                   int64_t per_param) {
    randomize(store, 17, 0.3);
    reports.emplace_back(block, grad_check(f, store, 1e-3, per_param, 5));
  };
  const ModelConfig mc = tiny_model_config();
  const EncoderConfig ec = tiny_encoder_config();

  {
    ParameterStore s;
    Film film(s, 1, "film", 8, 4);
    const Tensor u = add_param(s, "u", {2, 4, 4, 4}, 2), c = add_param(s, "c", {2, 8}, 3);
    check("FiLM", s, [&] { return probe(film(u, c)); }, 64);
  }
  {
    ParameterStore s;
    CrossAttention cross(s, 1, "cross", 4, 8, 2, 4, 2);
    const Tensor u = add_param(s, "u", {2, 4, 4, 4}, 2), tok = add_param(s, "tokens", {2, 3, 8}, 3);
    check("cross-attention", s, [&] { return probe(cross(u, tok)); }, 64);
  }
  {
    ParameterStore s;
    ResBlock res(s, 1, "res", 4, 8, 16, 8, 2);
    const Tensor x = add_param(s, "x", {2, 4, 8, 8}, 2), temb = add_param(s, "temb", {2, 16}, 3),
                 c = add_param(s, "c", {2, 8}, 4);
    check("UNet residual block with FiLM", s, [&] { return probe(res(x, temb, c)); }, 32);
  }
  {
    ParameterStore s;
    SelfAttention attn(s, 1, "attn", 8, 2, 2);
    const Tensor x = add_param(s, "x", {2, 8, 4, 4}, 2);
    check("UNet self-attention", s, [&] { return probe(attn(x)); }, 32);
  }
  for (ContextMode mode : {ContextMode::kNone, ContextMode::kVector, ContextMode::kTokens}) {
    ModelConfig c = mc;
    c.context_mode = mode;
    ParameterStore s;
    UNet unet(s, 1, c);
    Tensor ctx;
    if (mode == ContextMode::kVector) ctx = add_param(s, "context", {2, 8}, 5);
    if (mode == ContextMode::kTokens) ctx = add_param(s, "context", {2, 4, 8}, 5);
    const DiffusionState st{random_tensor({2, 1, 8, 8}, 6), {3, 700}};
    const Tensor eps = random_tensor(st.x_t.shape(), 7);
    check("UNet (" + to_string(mode) + ")", s, [&] {
      const Context context{mode, ctx};
      return loss_simple(unet.predict_eps(st, mode == ContextMode::kNone ? nullptr : &context), eps);
    }, 4);
  }
  for (bool timed : {false, true}) {
    ParameterStore s;
    SetEncoder enc(s, 1, "vit", ec, 8, 1, 8, timed);
    const Tensor images = add_param(s, "images", {2, 3, 1, 8, 8}, 2);
    const std::vector<int> t{5, 900};
    if (!timed) check("patch embedding", s, [&] { return probe(enc.patchify_set(images).tokens); }, 32);
    check(std::string("sViT layers") + (timed ? " (time conditioned)" : ""), s,
          [&] { return probe(enc.encode_set(enc.patchify_set(images), timed ? &t : nullptr).tokens); }, 16);
  }
  {
    ModelConfig c = mc;
    ParameterStore s;
    UNetSetEncoder enc(s, 1, "conv_enc", c);
    const Tensor images = add_param(s, "images", {2, 2, 1, 8, 8}, 2);
    check("convolutional set encoder", s, [&] { return probe(enc.encode_mean(images).payload); }, 16);
  }
  {
    FewShotModel model(Variant::kFSDM, mc, ec, 3, 1);
    const Tensor x0 = uniform_tensor({2, 1, 8, 8}, 3, -1, 1), eps = random_tensor({2, 1, 8, 8}, 4);
    const Tensor support = random_tensor({2, 3, 1, 8, 8}, 5);
    const NoiseSchedule sched = linear_betas(1000);
    const DiffusionState st = q_sample(x0, {1, 400}, eps, sched);
    check("FSDM hybrid objective end to end", model.params(),
          [&] { return loss_hybrid(x0, st, eps, model.forward(st, support), sched, 0.5).objective; }, 2);
  }

  double worst = 0.0;
  std::string where;
  int64_t coords = 0;
  for (const auto& [block, r] : reports) {
    coords += r.coordinates;
    if (!(r.max_rel_error <= worst)) {
      worst = r.max_rel_error;
      where = block + " " + r.worst_coordinate;
    }
  }
  const double elapsed = seconds_since(t0);
  return {worst < 1e-3 && elapsed < 300.0,
          std::to_string(reports.size()) + " blocks, " + std::to_string(coords) + " coordinates, max rel error " +
              sci(worst) + " at " + where + ", " + fmt("%.0f s", elapsed)};
}

// ---------------------------------------------------------------- criterion 2

double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * (x - mean) * (x - mean) / var;
}

// Posterior mean and variance of x_{t-1} by quadrature of
// q(x_t | x_{t-1}) q(x_{t-1} | x0) on a uniform grid.
std::pair<double, double> bayes_posterior(double x0, double xt, int t, const NoiseSchedule& s) {
  const double a = s.alpha_at(t), b = s.beta_at(t), ab_prev = s.alpha_bar_at(t - 1);
  const double m1 = std::sqrt(ab_prev) * x0, s1 = std::sqrt(1.0 - ab_prev);
  const double m2 = xt / std::sqrt(a), s2 = std::sqrt(b / a);
  const double narrow = std::min(s1, s2);
  const double lo = std::min(m1, m2) - 14.0 * narrow, hi = std::max(m1, m2) + 14.0 * narrow;
  const double h = narrow / 64.0;
  const auto n = static_cast<int64_t>(std::ceil((hi - lo) / h));
  std::vector<double> logw(static_cast<size_t>(n + 1));
  double top = -INFINITY;
  for (int64_t i = 0; i <= n; ++i) {
    const double x = lo + h * static_cast<double>(i);
    logw[static_cast<size_t>(i)] = log_normal_pdf(xt, std::sqrt(a) * x, b) + log_normal_pdf(x, m1, s1 * s1);
    top = std::max(top, logw[static_cast<size_t>(i)]);
  }
  double z = 0.0, first = 0.0;
  for (int64_t i = 0; i <= n; ++i) {
    const double w = std::exp(logw[static_cast<size_t>(i)] - top);
    z += w;
    first += w * (lo + h * static_cast<double>(i));
  }
  const double mean = first / z;
  double second = 0.0;
  for (int64_t i = 0; i <= n; ++i) {
    const double d = lo + h * static_cast<double>(i) - mean;
    second += std::exp(logw[static_cast<size_t>(i)] - top) * d * d;
  }
  return {mean, second / z};
}

Outcome forward_process() {
  const auto t0 = std::chrono::steady_clock::now();
  const NoiseSchedule s = linear_betas(1000);
  RngStream pick(2024, "acceptance.forward");
  const int n = 100000;
  double worst_z = 0.0;
  bool chain_ok = true;
  std::string cases;
  for (int c = 0; c < 3; ++c) {
    const double x0 = 2.0 * pick.uniform() - 1.0;
    const int t = static_cast<int>(pick.uniform_int(1, 1000));
    RngStream rng(31, "acceptance.chain", static_cast<uint64_t>(c));
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      double x = x0;
      for (int k = 1; k <= t; ++k) x = std::sqrt(s.alpha_at(k)) * x + std::sqrt(s.beta_at(k)) * rng.normal();
      sum += x;
      sum2 += x * x;
    }
    // Closed form through q_sample on a batch of one.
    const Tensor one({1, 1, 1, 1}, {x0});
    const double ab = s.alpha_bar_at(t);
    const double mean_closed = q_sample(one, {t}, Tensor({1, 1, 1, 1}, {0.0}), s).x_t.data()[0];
    const double var_closed = std::pow(q_sample(one, {t}, Tensor({1, 1, 1, 1}, {1.0}), s).x_t.data()[0] - mean_closed, 2);
    const double mean = sum / n, var = (sum2 - n * mean * mean) / (n - 1);
    const double z_mean = std::abs(mean - mean_closed) / std::sqrt(var_closed / n);
    const double z_var = std::abs(var - var_closed) / (var_closed * std::sqrt(2.0 / (n - 1)));
    chain_ok = chain_ok && z_mean < 3.0 && z_var < 3.0 && std::abs(var_closed - (1.0 - ab)) < 1e-12;
    worst_z = std::max({worst_z, z_mean, z_var});
    cases += (c ? ", " : "") + std::string("t=") + std::to_string(t);
  }

  double worst_post = 0.0;
  for (int c = 0; c < 12; ++c) {
    const int t = c < 3 ? std::vector<int>{2, 3, 1000}[static_cast<size_t>(c)] : static_cast<int>(pick.uniform_int(2, 1000));
    const double x0 = 2.0 * pick.uniform() - 1.0;
    const double xt = std::sqrt(s.alpha_bar_at(t)) * x0 + std::sqrt(1.0 - s.alpha_bar_at(t)) * (3.0 * pick.uniform() - 1.5);
    const PosteriorMoments pm = q_posterior(Tensor({1, 1, 1, 1}, {x0}), {Tensor({1, 1, 1, 1}, {xt}), {t}}, s);
    const auto [mean, var] = bayes_posterior(x0, xt, t, s);
    worst_post = std::max({worst_post, std::abs(pm.mean.data()[0] - mean), std::abs(pm.variance[0] - var)});
  }
  const double elapsed = seconds_since(t0);
  return {chain_ok && worst_post < 1e-10 && elapsed < 60.0,
          "chain vs closed form at " + cases + ": worst |z| " + fmt("%.2f", worst_z) +
              "; posterior vs quadrature over 12 cases: max abs diff " + sci(worst_post) + ", " +
              fmt("%.0f s", elapsed)};
}

// ---------------------------------------------------------------- criterion 3

// Fixed closed-form noise predictor, deliberately imperfect.
Tensor toy_eps(const DiffusionState& s, const NoiseSchedule& sched) {
  std::vector<double> out(s.x_t.data().begin(), s.x_t.data().end());
  const size_t width = out.size() / s.t.size();
  for (size_t b = 0; b < s.t.size(); ++b) {
    const double ab = sched.alpha_bar_at(s.t[b]);
    for (size_t i = b * width; i < (b + 1) * width; ++i) {
      const double x = out[i];
      out[i] = (x - std::sqrt(ab) * 0.8 * std::tanh(1.5 * x)) / std::sqrt(1.0 - ab) + 0.05 * std::sin(3.0 * x);
    }
  }
  return Tensor(s.x_t.shape(), std::move(out));
}

// -log of the discretized Gaussian bin probability of one pixel.
double bin_nll(double x, double mean, double sd) {
  const double half = 1.0 / 255.0;
  const double hi = (x - mean + half) / (sd * M_SQRT2), lo = (x - mean - half) / (sd * M_SQRT2);
  double p;
  if (x > 1.0 - 1e-9) {
    p = 0.5 * std::erfc(lo);
  } else if (x < -1.0 + 1e-9) {
    p = 0.5 * std::erfc(-hi);
  } else if (lo > 0.0) {
    p = 0.5 * (std::erfc(lo) - std::erfc(hi));
  } else if (hi < 0.0) {
    p = 0.5 * (std::erfc(-hi) - std::erfc(-lo));
  } else {
    p = 0.5 * (std::erf(hi) - std::erf(lo));
  }
  return -std::log(p);
}

struct MeanSe {
  double mean = 0.0, se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
}

Outcome elbo_decomposition() {
  const auto t0 = std::chrono::steady_clock::now();
  const int T = 5, paths = 100000, pixels = 16;
  const NoiseSchedule s = linear_betas(T, 0.05, 0.6);
  std::vector<double> x0v(pixels);
  for (int i = 0; i < pixels; ++i) x0v[static_cast<size_t>(i)] = -1.0 + 2.0 * ((37 * i) % 256) / 255.0;
  const Tensor x0({1, 1, 4, 4}, x0v);

  // Direct: sample x_{1:T} along the forward chain and average
  // log q(x_{1:T} | x0) - log p(x_{0:T}) with hand-written densities.
  std::vector<double> direct(paths);
  {
    RngStream rng(5, "acceptance.elbo.direct");
    std::vector<std::vector<double>> xs(static_cast<size_t>(T + 1), std::vector<double>(pixels));
    for (int p = 0; p < paths; ++p) {
      xs[0] = x0v;
      double log_q = 0.0, log_p = 0.0;
      for (int t = 1; t <= T; ++t) {
        for (int i = 0; i < pixels; ++i) {
          const double m = std::sqrt(s.alpha_at(t)) * xs[static_cast<size_t>(t - 1)][static_cast<size_t>(i)];
          const double x = m + std::sqrt(s.beta_at(t)) * rng.normal();
          xs[static_cast<size_t>(t)][static_cast<size_t>(i)] = x;
          log_q += log_normal_pdf(x, m, s.beta_at(t));
        }
      }
      for (double x : xs[static_cast<size_t>(T)]) log_p += log_normal_pdf(x, 0.0, 1.0);
      for (int t = T; t >= 1; --t) {
        const Tensor xt({1, 1, 4, 4}, xs[static_cast<size_t>(t)]);
        const Tensor eps_hat = toy_eps({xt, {t}}, s);
        const auto e = eps_hat.data();
        const double ab = s.alpha_bar_at(t), a = s.alpha_at(t), b = s.beta_at(t);
        for (int i = 0; i < pixels; ++i) {
          const double x = xs[static_cast<size_t>(t)][static_cast<size_t>(i)];
          const double mean = (x - b / std::sqrt(1.0 - ab) * e[static_cast<size_t>(i)]) / std::sqrt(a);
          if (t > 1) {
            log_p += log_normal_pdf(xs[static_cast<size_t>(t - 1)][static_cast<size_t>(i)], mean, b);
          } else {
            log_p -= bin_nll(x0v[static_cast<size_t>(i)], mean, std::sqrt(b));
          }
        }
      }
      direct[static_cast<size_t>(p)] = log_q - log_p;
    }
  }
  const MeanSe d = mean_se(direct);

  // Decomposition through the library: L_T + sum_t E_{x_t ~ q(x_t|x0)} L_{t-1}.
  const double l_T = loss_LT(x0, s);
  double sum = l_T, var = 0.0;
  std::string layers;
  for (int t = 1; t <= T; ++t) {
    RngStream rng(6, "acceptance.elbo.layer", static_cast<uint64_t>(t));
    const Tensor batch_x0 = ops::reshape(ops::index0(ops::reshape(x0, {1, pixels}), std::vector<int64_t>(paths, 0)),
                                         {paths, 1, 4, 4});
    const Tensor eps({paths, 1, 4, 4}, rng.normals(static_cast<size_t>(paths) * pixels));
    const DiffusionState st = q_sample(batch_x0, std::vector<int>(paths, t), eps, s);
    const Tensor layer = vlb_terms(batch_x0, st, toy_eps(st, s), s);
    const auto terms = layer.data();
    const MeanSe m = mean_se({terms.begin(), terms.end()});
    sum += m.mean;
    var += m.se * m.se;
    layers += (t > 1 ? " " : "") + fmt("%.4f", m.mean);
  }
  const double se = std::sqrt(var + d.se * d.se);
  const double z = std::abs(sum - d.mean) / se;
  const double elapsed = seconds_since(t0);
  return {z < 3.0 && elapsed < 300.0,
          "decomposition " + fmt("%.5f", sum) + " (L_T " + sci(l_T) + ", layers " + layers + ") vs direct " +
              fmt("%.5f", d.mean) + ", |diff| = " + fmt("%.2f", z) + " SE, " + fmt("%.0f s", elapsed)};
}

// ---------------------------------------------------------------- criterion 4

Outcome neutrality(const RunConfig& desk) {
  const std::vector<Variant> conditional{Variant::kCDDPM, Variant::kSDDPM, Variant::kFSDMStacked, Variant::kFSDM};
  int compared = 0;
  bool ok = true;
  std::string failed;
  struct Setup {
    ModelConfig model;
    EncoderConfig encoder;
    int set_size;
  };
  std::vector<Setup> setups{{tiny_model_config(), tiny_encoder_config(), 3}, {desk.model, desk.encoder, desk.train.set_size}};
  ModelConfig timed = tiny_model_config();
  timed.time_conditioned_encoder = true;
  setups.push_back({timed, tiny_encoder_config(), 2});
  for (const auto& setup : setups) {
    const int size = setup.model.image_size, ch = setup.model.image_channels;
    for (uint64_t seed : {0ull, 7ull}) {
      FewShotModel base(Variant::kDDPM, setup.model, setup.encoder, setup.set_size, seed);
      const DiffusionState st{random_tensor({3, ch, size, size}, seed + 1), {1, 250, 1000}};
      const Tensor support = uniform_tensor({3, setup.set_size, ch, size, size}, seed + 2, -1, 1);
      const Tensor reference = base.predict_eps(st, nullptr);
      for (Variant v : conditional) {
        FewShotModel model(v, setup.model, setup.encoder, setup.set_size, seed);
        const Tensor got = model.forward(st, support);
        ++compared;
        if (!bitwise_equal(got, reference)) {
          ok = false;
          failed += " " + to_string(v);
        }
      }
    }
  }
  return {ok, std::to_string(compared) + " variant/config/seed comparisons bitwise equal to the unconditional backbone" +
                  (ok ? "" : "; mismatches:" + failed)};
}

// ---------------------------------------------------------------- criterion 5

Outcome set_symmetry() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::vector<int64_t>> orders{{4, 3, 2, 1, 0}, {1, 0, 3, 4, 2}, {2, 4, 0, 1, 3}, {0, 2, 1, 4, 3}};
  bool aggregates_ok = true;
  const TokenGrid grid{random_tensor({2, 5, 4, 8}, 3)};
  for (const auto& order : orders) {
    const TokenGrid shuffled{permute_set(grid.tokens, order)};
    aggregates_ok = aggregates_ok && bitwise_equal(aggregate_per_patch(grid).payload, aggregate_per_patch(shuffled).payload) &&
                    bitwise_equal(aggregate_vector(grid).payload, aggregate_vector(shuffled).payload);
  }

  double worst_equiv = 0.0;
  for (bool timed : {false, true}) {
    ParameterStore store;
    SetEncoder enc(store, 4, "vit", tiny_encoder_config(), 8, 1, 8, timed);
    randomize(store, 9, 0.3);
    const Tensor images = random_tensor({2, 5, 1, 8, 8}, 5);
    const std::vector<int> t{3, 800};
    const Tensor base = enc.encode_set(enc.patchify_set(images), timed ? &t : nullptr).tokens;
    for (const auto& order : orders) {
      const Tensor moved = enc.encode_set(enc.patchify_set(permute_set(images, order)), timed ? &t : nullptr).tokens;
      worst_equiv = std::max(worst_equiv, max_abs_diff(moved, permute_set(base, order)) / max_abs(base));
    }
  }

  // Full FSDM prediction with trained-away-from-zero weights.
  double worst_model = 0.0;
  {
    FewShotModel model(Variant::kFSDM, tiny_model_config(), tiny_encoder_config(), 5, 2);
    randomize(model.params(), 3, 0.2);
    const DiffusionState st{random_tensor({2, 1, 8, 8}, 4), {10, 600}};
    const Tensor support = random_tensor({2, 5, 1, 8, 8}, 5);
    const Tensor base = model.forward(st, support);
    for (const auto& order : orders) {
      worst_model = std::max(worst_model, max_abs_diff(model.forward(st, permute_set(support, order)), base) / max_abs(base));
    }
  }

  // Channel stacking keeps the set order, so its encoder sees a different input.
  const Tensor set = random_tensor({1, 5, 1, 8, 8}, 6);
  const Tensor reordered = permute_set(set, orders[1]);
  const bool stacking_sensitive = !bitwise_equal(stack_channels(set, 5), stack_channels(reordered, 5)) &&
                                  bitwise_equal(ops::slice0(ops::permute(stack_channels(set, 5), {2, 0, 1, 3, 4}), 1, 2),
                                                ops::slice0(ops::permute(stack_channels(reordered, 5), {2, 0, 1, 3, 4}), 0, 1));
  FewShotModel stacked(Variant::kFSDMStacked, tiny_model_config(), tiny_encoder_config(), 5, 2);
  randomize(stacked.params(), 3, 0.2);
  const double stacked_change = max_abs_diff(stacked.encode(set)->payload, stacked.encode(reordered)->payload);

  const double elapsed = seconds_since(t0);
  const bool ok = aggregates_ok && worst_equiv <= 1e-6 && worst_model <= 1e-6 && stacking_sensitive &&
                  stacked_change > 0.0 && elapsed < 60.0;
  return {ok, std::string("aggregates ") + (aggregates_ok ? "bitwise invariant" : "NOT invariant") +
                  ", encode_set equivariance rel err " + sci(worst_equiv) + ", FSDM prediction rel err " +
                  sci(worst_model) + ", stacked encoder change under reordering " + sci(stacked_change) + ", " +
                  fmt("%.0f s", elapsed)};
}

// ---------------------------------------------------------------- criterion 6

Outcome sampler_calibration() {
  const auto t0 = std::chrono::steady_clock::now();
  const NoiseSchedule s = linear_betas(1000);
  // Exact noise prediction for pixels uniform on {-1, +1}.
  const EpsFunction exact = [&s](const DiffusionState& st) {
    std::vector<double> out(st.x_t.data().begin(), st.x_t.data().end());
    for (size_t b = 0; b < st.t.size(); ++b) {
      const double ab = s.alpha_bar_at(st.t[b]);
      const double x = out[b];
      out[b] = (x - std::sqrt(ab) * std::tanh(std::sqrt(ab) * x / (1.0 - ab))) / std::sqrt(1.0 - ab);
    }
    return Tensor(st.x_t.shape(), std::move(out));
  };
  SampleRequest r;
  r.count = 10000;
  r.steps = 1000;
  r.seed = 11;
  const Tensor x = sample(r, exact, {1, 1, 1}, s, 2500);
  int positive = 0, off_support = 0;
  for (double v : x.data()) {
    positive += v > 0.0;
    off_support += std::abs(std::abs(v) - 1.0) > 0.05;
  }
  const double p = static_cast<double>(positive) / r.count;
  const double z = std::abs(p - 0.5) / std::sqrt(0.25 / r.count);

  const NoiseSchedule same = respace(s, s.T);
  std::vector<int> ones(static_cast<size_t>(s.T));
  for (int t = 1; t <= s.T; ++t) ones[static_cast<size_t>(t - 1)] = t;
  const bool identity = same.T == s.T && same.beta == s.beta && same.alpha == s.alpha && same.alpha_bar == s.alpha_bar &&
                        same.sigma_sq == s.sigma_sq && same.posterior_coef_x0 == s.posterior_coef_x0 &&
                        same.posterior_coef_xt == s.posterior_coef_xt && same.posterior_var == s.posterior_var &&
                        same.w == s.w && same.timesteps == ones && respace_indices(s.T, s.T) == ones;
  const double elapsed = seconds_since(t0);
  return {z < 3.0 && off_support == 0 && identity && elapsed < 120.0,
          "P(x > 0) = " + fmt("%.4f", p) + " (|z| " + fmt("%.2f", z) + "), " + std::to_string(off_support) +
              " of 10000 samples off {-1, +1}, respace(T) " + (identity ? "identical" : "NOT identical") + ", " +
              fmt("%.0f s", elapsed)};
}

// ------------------------------------------------------------- criteria 7 & 8

struct DeskRun {
  RunConfig config;
  std::unique_ptr<Trainer> trainer;
  std::vector<std::pair<int64_t, double>> curve;  // evaluation L_eps by step
};

std::vector<MetricRecord> read_metrics(const fs::path& path, int64_t up_to) {
  std::vector<MetricRecord> out;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    MetricRecord r{j.at("step").get<int64_t>(), j.at("split").get<std::string>(), j.at("metric").get<std::string>(),
                   j.at("value").get<double>()};
    if (r.step <= up_to) out.push_back(r);
  }
  return out;
}

// Trains one variant, resuming from the newest checkpoint in the work
// directory when its trajectory matches; metrics are kept alongside it.
DeskRun train_desk(Variant variant, RunConfig config, const Dataset& data, const ClassSplit& split,
                   const fs::path& work) {
  config.train.variant = variant;
  config.validate();
  DeskRun run;
  run.config = config;
  run.trainer = std::make_unique<Trainer>(config, data, split);
  const fs::path ckpt = work / ("desk_" + to_string(variant) + ".ckpt");
  const fs::path log = work / ("desk_" + to_string(variant) + ".jsonl");
  if (fs::exists(ckpt)) {
    try {
      run.trainer->load(ckpt.string());
    } catch (const std::exception& e) {
      std::printf("  %s: ignoring stale checkpoint (%s)\n", to_string(variant).c_str(), e.what());
      run.trainer = std::make_unique<Trainer>(config, data, split);
    }
  }
  std::vector<MetricRecord> records = read_metrics(log, run.trainer->step());
  if (run.trainer->step() > 0) {
    std::printf("  %s: resuming at step %lld\n", to_string(variant).c_str(), static_cast<long long>(run.trainer->step()));
  }
  {
    std::ofstream out(log, std::ios::trunc);
    for (const auto& r : records) out << r.to_json() << "\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::ofstream out(log, std::ios::app);
  run.trainer->fit(
      [&](const MetricRecord& r) {
        records.push_back(r);
        out << r.to_json() << "\n";
        if (r.metric == "L_eps") {
          std::printf("  %s step %lld L_eps %.5f (%.0f s)\n", to_string(variant).c_str(), static_cast<long long>(r.step),
                      r.value, seconds_since(t0));
          std::fflush(stdout);
        }
      },
      [&](int64_t) {
        out.flush();
        run.trainer->save(ckpt.string());
      });
  out.flush();
  run.trainer->save(ckpt.string());
  for (const auto& r : records) {
    if (r.metric == "L_eps") run.curve.emplace_back(r.step, r.value);
  }
  return run;
}

struct DeskPair {
  DeskRun ddpm, fsdm;
};

Outcome desk_direction(const DeskPair& runs) {
  const auto& d = runs.ddpm.curve;
  const auto& f = runs.fsdm.curve;
  if (d.empty() || f.empty() || d.back().first != f.back().first) return {false, "missing evaluation curve"};
  const int64_t final_step = d.back().first;
  const double target = d.back().second;
  int64_t reached = -1;
  for (const auto& [step, value] : f) {
    if (value <= target) {
      reached = step;
      break;
    }
  }
  const bool lower = f.back().second <= target;
  const bool faster = reached > 0 && static_cast<double>(reached) <= 0.8 * static_cast<double>(final_step);
  std::string curve;
  for (size_t i = 0; i < d.size(); ++i) {
    if (d[i].first % 1000 == 0 || i + 1 == d.size()) {
      curve += (curve.empty() ? "" : " ") + std::to_string(d[i].first) + ":" + fmt("%.4f", d[i].second) + "/" +
               fmt("%.4f", f[i].second);
    }
  }
  return {lower && faster, "final L_eps FSDM " + fmt("%.5f", f.back().second) + " vs DDPM " + fmt("%.5f", target) +
                               " at step " + std::to_string(final_step) + "; FSDM reaches it at step " +
                               (reached > 0 ? std::to_string(reached) : std::string("never")) + " (limit " +
                               fmt("%.0f", 0.8 * static_cast<double>(final_step)) + "); step:DDPM/FSDM " + curve};
}

Outcome few_shot_direction(const DeskPair& runs, const Dataset& data, const ClassSplit& split) {
  const auto t0 = std::chrono::steady_clock::now();
  const NoiseSchedule& sched = runs.fsdm.trainer->schedule();
  int wins = 0;
  std::string seeds;
  for (uint64_t seed : {0ull, 1ull, 2ull}) {
    SampleQualityOptions o;
    o.split = Split::kTest;
    o.set_size = runs.fsdm.config.train.set_size;
    o.seed = seed;
    const SampleQuality d = eval_samples(runs.ddpm.trainer->model(), data, split, o, sched);
    const SampleQuality f = eval_samples(runs.fsdm.trainer->model(), data, split, o, sched);
    const bool win = f.mmd.unbiased <= d.mmd.unbiased && f.pr.recall >= d.pr.recall;
    wins += win;
    const std::string line = "seed " + std::to_string(seed) + ": MMD " + fmt("%.4f", f.mmd.unbiased) + " vs " +
                             fmt("%.4f", d.mmd.unbiased) + ", recall " + fmt("%.2f", f.pr.recall) + " vs " +
                             fmt("%.2f", d.pr.recall) + (win ? " (FSDM)" : " (DDPM)");
    std::printf("  %s\n", line.c_str());
    std::fflush(stdout);
    seeds += (seed ? "; " : "") + line;
  }
  EpisodeSpec in_spec, out_spec;
  in_spec.set_size = out_spec.set_size = runs.fsdm.config.train.set_size;
  in_spec.include_query = out_spec.include_query = false;
  in_spec.split = Split::kTrain;
  out_spec.split = Split::kTest;
  const LossHistogram h =
      loss_histogram(model_eps_factory(runs.fsdm.trainer->model()), data, split, in_spec, out_spec, 64, sched, 9);
  const double elapsed = seconds_since(t0);
  return {wins >= 2 && h.auroc > 0.5, std::to_string(wins) + "/3 seeds favour FSDM on the test classes (" + seeds +
                                          "); AUROC in vs out " + fmt("%.3f", h.auroc) + " +- " +
                                          fmt("%.3f", h.auroc_se) + ", " + fmt("%.0f s", elapsed)};
}

// ---------------------------------------------------------------- criterion 9

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome reproducibility(const RunConfig& desk, const Dataset& data, const ClassSplit& split, const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  auto config = [&](int64_t iterations) {
    RunConfig c = desk;
    c.train.iterations = iterations;
    c.train.eval_every = 0;
    c.train.checkpoint_every = 0;
    c.train.ema = true;
    c.validate();
    return c;
  };
  auto run = [&](const std::string& name) {
    Trainer t(config(100), data, split);
    t.fit();
    t.save((work / name).string());
  };
  run("repro_a.ckpt");
  run("repro_b.ckpt");
  {
    Trainer first(config(60), data, split);
    first.fit();
    first.save((work / "repro_60.ckpt").string());
    Trainer resumed(config(100), data, split);
    resumed.load((work / "repro_60.ckpt").string());
    resumed.fit();
    resumed.save((work / "repro_resumed.ckpt").string());
  }
  const std::string a = file_bytes(work / "repro_a.ckpt");
  const bool same = a == file_bytes(work / "repro_b.ckpt");
  const bool resumed = a == file_bytes(work / "repro_resumed.ckpt");
  for (const char* f : {"repro_a.ckpt", "repro_b.ckpt", "repro_60.ckpt", "repro_resumed.ckpt"}) fs::remove(work / f);
  return {same && resumed && !a.empty(), "100-step checkpoints (" + std::to_string(a.size()) + " bytes) " +
                                             (same ? "bitwise identical" : "DIFFER") + "; 60 + resume + 40 steps " +
                                             (resumed ? "bitwise identical" : "DIFFERS") + ", " +
                                             fmt("%.0f s", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string work_dir = "acceptance_work";
  std::string config_path = FSDM_DESK_CONFIG;
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "directory for checkpoints and logs");
  app.add_option("--config", config_path, "desk-scale run configuration")->check(CLI::ExistingFile);
  app.add_option("--criteria", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  prefer_heap_allocation();
  fs::create_directories(work_dir);
  const RunConfig desk = load_config(config_path);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int n) { return selected.empty() || selected.count(n) > 0; };

  int failures = 0;
  auto report = [&](int n, const std::string& name, const std::function<Outcome()>& f) {
    if (!wanted(n)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient checks", numerics);
  report(2, "forward process", forward_process);
  report(3, "ELBO decomposition", elbo_decomposition);
  report(4, "conditioning neutrality", [&] { return neutrality(desk); });
  report(5, "set symmetry", set_symmetry);
  report(6, "sampler calibration", sampler_calibration);

  // 40 glyph classes of 40 images, split by the configured fractions.
  std::unique_ptr<Dataset> glyphs;
  auto desk_data = [&]() -> const Dataset& {
    if (!glyphs) glyphs = std::make_unique<Dataset>(synth_glyph_dataset(40, 40, desk.model.image_size, 1));
    return *glyphs;
  };
  auto desk_split = [&] {
    std::vector<int> ids(static_cast<size_t>(desk_data().num_classes()));
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    return make_split(ids, desk.split.fractions, desk.split.seed);
  };

  if (wanted(7) || wanted(8)) {
    const Dataset& data = desk_data();
    const ClassSplit split = desk_split();
    std::printf("  desk runs: %zu train / %zu test classes, %lld steps each\n", split.train.size(), split.test.size(),
                static_cast<long long>(desk.train.iterations));
    std::fflush(stdout);
    DeskPair runs;
    std::string error;
    try {
      runs.ddpm = train_desk(Variant::kDDPM, desk, data, split, work_dir);
      runs.fsdm = train_desk(Variant::kFSDM, desk, data, split, work_dir);
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto guarded = [&](const std::function<Outcome()>& f) {
      return [&, f] { return error.empty() ? f() : Outcome{false, "training failed: " + error}; };
    };
    report(7, "desk-scale L_eps direction", guarded([&] { return desk_direction(runs); }));
    report(8, "few-shot proxy direction", guarded([&] { return few_shot_direction(runs, data, split); }));
  }

  if (wanted(9)) {
    report(9, "reproducibility", [&] { return reproducibility(desk, desk_data(), desk_split(), work_dir); });
  }
  return failures == 0 ? 0 : 1;
}
