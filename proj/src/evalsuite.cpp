#include "fsdm/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"
#include "json.hpp"

namespace fsdm {

EpsFactory model_eps_factory(const FewShotModel& model) {
  return [&model](const Tensor& support) -> EpsFunction {
    if (!model.conditional()) {
      return [&model](const DiffusionState& s) { return model.predict_eps(s, nullptr); };
    }
    if (model.time_conditioned_encoder()) {
      return [&model, support](const DiffusionState& s) { return model.forward(s, support); };
    }
    NoGradGuard no_grad;
    auto context = std::make_shared<Context>(*model.encode(support));
    return [&model, context](const DiffusionState& s) { return model.predict_eps(s, context.get()); };
  };
}

namespace {

// Squared noise error of every episode at every grid timestep.
std::vector<std::vector<double>> episode_losses(const EpsFactory& eps, const Dataset& dataset,
                                                const ClassSplit& split, const EpisodeSpec& spec,
                                                int num_batches, int batch_size, const std::vector<int>& grid,
                                                const NoiseSchedule& schedule, uint64_t seed, const std::string& tag) {
  if (split.classes(spec.split).empty()) throw ConfigError("evaluation split '" + to_string(spec.split) + "' is empty");
  if (grid.empty()) throw ConfigError("evaluation timestep grid is empty");
  for (int t : grid) schedule.check_t(t);
  if (num_batches < 1 || batch_size < 1) throw ConfigError("evaluation needs at least one batch of one episode");
  NoGradGuard no_grad;
  std::vector<std::vector<double>> losses;
  for (int bi = 0; bi < num_batches; ++bi) {
    RngStream rng(seed, tag + ".episode", static_cast<uint64_t>(bi));
    std::vector<Episode> episodes;
    for (int i = 0; i < batch_size; ++i) episodes.push_back(sample_episode(dataset, split, spec, rng));
    const Tensor support = stack_supports(episodes);
    const Tensor x0 = stack_queries(episodes);
    const EpsFunction fn = eps(support);
    const size_t width = static_cast<size_t>(x0.numel() / batch_size);
    std::vector<std::vector<double>> batch(static_cast<size_t>(batch_size), std::vector<double>(grid.size()));
    for (size_t gi = 0; gi < grid.size(); ++gi) {
      RngStream noise_rng(seed, tag + ".noise", static_cast<uint64_t>(bi) * grid.size() + gi);
      const Tensor noise(x0.shape(), noise_rng.normals(static_cast<size_t>(x0.numel())));
      const DiffusionState state = q_sample(x0, std::vector<int>(static_cast<size_t>(batch_size), grid[gi]), noise, schedule);
      const Tensor eps_hat = fn(state);
      auto e = eps_hat.data(), n = noise.data();
      for (size_t b = 0; b < static_cast<size_t>(batch_size); ++b) {
        double acc = 0.0;
        for (size_t i = b * width; i < (b + 1) * width; ++i) acc += (e[i] - n[i]) * (e[i] - n[i]);
        batch[b][gi] = acc / static_cast<double>(width);
      }
    }
    for (auto& row : batch) losses.push_back(std::move(row));
  }
  return losses;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

DenoisingEval eval_denoising(const EpsFactory& eps, const Dataset& dataset, const ClassSplit& split,
                             const DenoisingOptions& options, const NoiseSchedule& schedule) {
  const auto losses = episode_losses(eps, dataset, split, options.episodes, options.num_batches, options.batch_size,
                                     options.grid, schedule, options.seed, "eval");
  DenoisingEval out;
  out.grid = options.grid;
  out.episodes = static_cast<int>(losses.size());
  const double n = static_cast<double>(losses.size());
  for (size_t gi = 0; gi < options.grid.size(); ++gi) {
    double sum = 0.0, sq = 0.0;
    for (const auto& row : losses) sum += row[gi];
    const double mean = sum / n;
    for (const auto& row : losses) sq += (row[gi] - mean) * (row[gi] - mean);
    out.per_layer.push_back(mean);
    out.per_layer_se.push_back(n > 1 ? std::sqrt(sq / (n - 1) / n) : 0.0);
  }
  for (const auto& row : losses) out.per_episode.push_back(mean_of(row));
  out.aggregate = mean_of(out.per_layer);
  return out;
}

RandomFeatures::RandomFeatures(int64_t input_dim, int64_t feature_dim, uint64_t seed)
    : in_(input_dim), out_(feature_dim), seed_(seed) {
  if (input_dim < 1 || feature_dim < 1) throw ConfigError("random features need positive dimensions");
  RngStream rng(seed, "eval.features");
  w_ = rng.normals(static_cast<size_t>(in_ * out_));
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_));
  for (double& v : w_) v *= scale;
  b_ = rng.normals(static_cast<size_t>(out_));
  for (double& v : b_) v *= 0.5;
}

FeatureRows RandomFeatures::operator()(const Tensor& samples) const {
  const int64_t n = samples.rank() == 0 ? 0 : samples.dim(0);
  if (n > 0 && samples.numel() / n != in_) {
    throw ConfigError("random features expect " + std::to_string(in_) + " values per sample, got " +
                      shape_str(samples.shape()));
  }
  FeatureRows rows(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(out_)));
  auto x = samples.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * in_;
    for (int64_t j = 0; j < out_; ++j) {
      const double* wj = w_.data() + j * in_;
      double acc = b_[static_cast<size_t>(j)];
      for (int64_t k = 0; k < in_; ++k) acc += wj[k] * xi[k];
      rows[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::tanh(acc);
    }
  }
  return rows;
}

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc;
}

void check_rows(const FeatureRows& rows, size_t dim, const char* what) {
  for (const auto& r : rows) {
    if (r.size() != dim) throw ConfigError(std::string(what) + ": feature rows differ in width");
  }
}

}  // namespace

MmdResult proxy_mmd(const FeatureRows& a, const FeatureRows& b) {
  if (a.size() < 2 || b.size() < 2) throw ConfigError("proxy_mmd needs at least two samples per set");
  const size_t dim = a.front().size();
  check_rows(a, dim, "proxy_mmd");
  check_rows(b, dim, "proxy_mmd");
  FeatureRows pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<double> dists;
  dists.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (size_t i = 0; i < pooled.size(); ++i) {
    for (size_t j = i + 1; j < pooled.size(); ++j) dists.push_back(std::sqrt(squared_distance(pooled[i], pooled[j])));
  }
  const size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<ptrdiff_t>(mid), dists.end());
  double median = dists[mid];
  if (dists.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(dists.begin(), dists.begin() + static_cast<ptrdiff_t>(mid)));
  }
  if (!(median > 0.0)) throw ConfigError("proxy_mmd: median pairwise distance is zero");
  const double inv_two_s2 = 1.0 / (2.0 * median * median);
  auto kernel = [&](const std::vector<double>& x, const std::vector<double>& y) {
    return std::exp(-squared_distance(x, y) * inv_two_s2);
  };
  auto within = [&](const FeatureRows& s, double& off_diag) {
    std::vector<double> k;
    k.reserve(s.size() * (s.size() - 1) / 2);
    for (size_t i = 0; i < s.size(); ++i) {
      for (size_t j = i + 1; j < s.size(); ++j) k.push_back(kernel(s[i], s[j]));
    }
    off_diag = 2.0 * sorted_sum(k);
  };
  double kaa = 0.0, kbb = 0.0;
  within(a, kaa);
  within(b, kbb);
  std::vector<double> cross;
  cross.reserve(a.size() * b.size());
  for (const auto& x : a) {
    for (const auto& y : b) cross.push_back(kernel(x, y));
  }
  const double kab = sorted_sum(cross);
  const double m = static_cast<double>(a.size()), n = static_cast<double>(b.size());
  MmdResult r;
  r.bandwidth = median;
  r.unbiased = kaa / (m * (m - 1)) + kbb / (n * (n - 1)) - 2.0 * kab / (m * n);
  // The diagonal kernel values are exactly 1.
  r.biased = (kaa + m) / (m * m) + (kbb + n) / (n * n) - 2.0 * kab / (m * n);
  return r;
}

namespace {

// Distance from every member of `set` to its k-th nearest other member.
std::vector<double> knn_radii(const FeatureRows& set, int k) {
  std::vector<double> radii;
  std::vector<double> d;
  for (size_t i = 0; i < set.size(); ++i) {
    d.clear();
    for (size_t j = 0; j < set.size(); ++j) {
      if (j != i) d.push_back(squared_distance(set[i], set[j]));
    }
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    radii.push_back(d[static_cast<size_t>(k - 1)]);
  }
  return radii;
}

double coverage(const FeatureRows& manifold, const std::vector<double>& radii, const FeatureRows& queries) {
  size_t inside = 0;
  for (const auto& q : queries) {
    for (size_t j = 0; j < manifold.size(); ++j) {
      if (squared_distance(q, manifold[j]) <= radii[j]) {
        ++inside;
        break;
      }
    }
  }
  return queries.empty() ? 0.0 : static_cast<double>(inside) / static_cast<double>(queries.size());
}

}  // namespace

PrecisionRecall proxy_precision_recall(const FeatureRows& real, const FeatureRows& generated, int k) {
  if (k < 1) throw ConfigError("k must be positive");
  if (real.size() < static_cast<size_t>(k) + 1 || generated.size() < static_cast<size_t>(k) + 1) {
    throw ConfigError("precision/recall needs at least k + 1 points per set");
  }
  if (!real.empty() && !generated.empty()) {
    check_rows(real, real.front().size(), "proxy_precision_recall");
    check_rows(generated, real.front().size(), "proxy_precision_recall");
  }
  return {coverage(real, knn_radii(real, k), generated), coverage(generated, knn_radii(generated, k), real)};
}

double auroc(const std::vector<double>& negatives, const std::vector<double>& positives) {
  if (negatives.empty() || positives.empty()) throw ConfigError("auroc needs both groups non-empty");
  std::vector<double> neg = negatives;
  std::sort(neg.begin(), neg.end());
  double score = 0.0;
  for (double p : positives) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
    score += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return score / (static_cast<double>(neg.size()) * static_cast<double>(positives.size()));
}

double auroc_standard_error(double auc, size_t negatives, size_t positives) {
  const double q1 = auc / (2.0 - auc), q2 = 2.0 * auc * auc / (1.0 + auc);
  const double n1 = static_cast<double>(positives), n2 = static_cast<double>(negatives);
  const double var = (auc * (1.0 - auc) + (n1 - 1.0) * (q1 - auc * auc) + (n2 - 1.0) * (q2 - auc * auc)) / (n1 * n2);
  return std::sqrt(std::max(var, 0.0));
}

LossHistogram loss_histogram(const EpsFactory& eps, const Dataset& dataset, const ClassSplit& split,
                             const EpisodeSpec& in_spec, const EpisodeSpec& out_spec, int episodes_per_split,
                             const NoiseSchedule& schedule, uint64_t seed, int steps, int bins, int batch_size) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  const std::vector<int> grid = respace_indices(schedule.T, steps);
  const int batches = (episodes_per_split + batch_size - 1) / batch_size;
  auto collect = [&](const EpisodeSpec& spec, const std::string& tag) {
    std::vector<double> v;
    for (const auto& row : episode_losses(eps, dataset, split, spec, batches, batch_size, grid, schedule, seed, tag)) {
      v.push_back(mean_of(row));
    }
    v.resize(static_cast<size_t>(episodes_per_split));
    return v;
  };
  LossHistogram h;
  h.in_values = collect(in_spec, "hist.in");
  h.out_values = collect(out_spec, "hist.out");
  const auto [in_lo, in_hi] = std::minmax_element(h.in_values.begin(), h.in_values.end());
  const auto [out_lo, out_hi] = std::minmax_element(h.out_values.begin(), h.out_values.end());
  const double lo = std::min(*in_lo, *out_lo);
  double hi = std::max(*in_hi, *out_hi);
  if (hi <= lo) hi = lo + 1e-12;
  for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * i / bins);
  auto bin = [&](const std::vector<double>& values) {
    std::vector<int> counts(static_cast<size_t>(bins), 0);
    for (double v : values) {
      const int i = std::clamp(static_cast<int>((v - lo) / (hi - lo) * bins), 0, bins - 1);
      ++counts[static_cast<size_t>(i)];
    }
    return counts;
  };
  h.in_counts = bin(h.in_values);
  h.out_counts = bin(h.out_values);
  h.auroc = auroc(h.in_values, h.out_values);
  h.auroc_se = auroc_standard_error(h.auroc, h.in_values.size(), h.out_values.size());
  return h;
}

SampleQuality eval_samples(const FewShotModel& model, const Dataset& dataset, const ClassSplit& split,
                           const SampleQualityOptions& o, const NoiseSchedule& schedule) {
  std::vector<int> classes = split.classes(o.split);
  if (classes.empty()) throw ConfigError("sample evaluation split is empty");
  RngStream rng(o.seed, "eval.samples.classes");
  for (size_t i = classes.size(); i > 1; --i) {
    std::swap(classes[i - 1], classes[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  }
  classes.resize(std::min(classes.size(), static_cast<size_t>(o.num_classes)));
  const int64_t dim = static_cast<int64_t>(dataset.image_channels) * dataset.image_size * dataset.image_size;
  RandomFeatures features(dim, o.feature_dim, o.feature_seed);

  std::vector<Tensor> real_images;
  FeatureRows generated;
  for (size_t ci = 0; ci < classes.size(); ++ci) {
    const auto& pool = dataset.images.at(static_cast<size_t>(classes[ci]));
    if (pool.size() <= static_cast<size_t>(o.set_size)) {
      throw ConfigError("class " + dataset.class_names[static_cast<size_t>(classes[ci])] + " is too small");
    }
    std::vector<size_t> order(pool.size());
    std::iota(order.begin(), order.end(), size_t{0});
    RngStream pick(o.seed, "eval.samples.support", static_cast<uint64_t>(ci));
    for (size_t i = 0; i < static_cast<size_t>(o.set_size); ++i) {
      std::swap(order[i], order[static_cast<size_t>(pick.uniform_int(static_cast<int64_t>(i),
                                                                     static_cast<int64_t>(pool.size()) - 1))]);
    }
    SupportSet set;
    for (size_t i = 0; i < order.size(); ++i) {
      (i < static_cast<size_t>(o.set_size) ? set.images : real_images).push_back(pool[order[i]]);
    }
    SampleRequest request;
    request.count = o.samples_per_class;
    request.steps = o.steps;
    request.seed = o.seed ^ (0x9E3779B97F4A7C15ULL * (ci + 1));
    if (model.conditional()) request.support = stack_sets({set});
    const auto rows = features(sample(request, model, schedule));
    generated.insert(generated.end(), rows.begin(), rows.end());
  }
  SampleQuality q;
  const FeatureRows real = features(ops::stack0(real_images));
  q.mmd = proxy_mmd(real, generated);
  q.pr = proxy_precision_recall(real, generated, o.k);
  q.sample_count = static_cast<int>(generated.size());
  q.real_count = static_cast<int>(real.size());
  return q;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["variant"] = variant;
  j["split"] = split;
  j["train_step"] = train_step;
  j["seed"] = seed;
  j["L_eps"] = denoising.aggregate;
  j["episodes"] = denoising.episodes;
  j["grid"] = denoising.grid;
  j["per_layer"] = denoising.per_layer;
  j["per_layer_se"] = denoising.per_layer_se;
  j["steps"] = sampling_steps;
  j["sample_count"] = has_samples ? samples.sample_count : 0;
  if (has_samples) {
    j["real_count"] = samples.real_count;
    j["mmd"] = samples.mmd.unbiased;
    j["mmd_bandwidth"] = samples.mmd.bandwidth;
    j["precision"] = samples.pr.precision;
    j["recall"] = samples.pr.recall;
  }
  return j.dump(2);
}

}  // namespace fsdm
