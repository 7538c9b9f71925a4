#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsdm/episodes.hpp"
#include "fsdm/model.hpp"
#include "fsdm/sampler.hpp"
#include "fsdm/schedule.hpp"

namespace fsdm {

// Given a support batch [B, N_s, C, H, W] (undefined for unconditional
// models), returns the noise predictor for that batch.
using EpsFactory = std::function<EpsFunction(const Tensor& support)>;

// Encodes each support batch once, or per call when the encoder is time conditioned.
EpsFactory model_eps_factory(const FewShotModel& model);

struct DenoisingOptions {
  EpisodeSpec episodes;      // split and set size of the evaluation episodes
  int num_batches = 4;
  int batch_size = 16;
  std::vector<int> grid;     // timesteps in [1, T]
  uint64_t seed = 0;
};

struct DenoisingEval {
  std::vector<int> grid;
  std::vector<double> per_layer;     // mean squared noise error per grid timestep
  std::vector<double> per_layer_se;  // its standard error over episodes
  double aggregate = 0.0;            // mean over the grid
  std::vector<double> per_episode;   // grid mean for each episode
  int episodes = 0;
};

// Monte Carlo estimate of the per-layer noise-prediction loss over sampled
// episodes; each episode's query is noised at every grid timestep.
DenoisingEval eval_denoising(const EpsFactory& eps, const Dataset& dataset, const ClassSplit& split,
                             const DenoisingOptions& options, const NoiseSchedule& schedule);

// Fixed random-feature embedding tanh(W x + b) with W ~ N(0, 1/input_dim).
class RandomFeatures {
 public:
  RandomFeatures(int64_t input_dim, int64_t feature_dim, uint64_t seed);
  int64_t input_dim() const { return in_; }
  int64_t feature_dim() const { return out_; }
  uint64_t seed() const { return seed_; }
  // [N, ...] with N rows of input_dim values -> N rows of feature_dim values.
  std::vector<std::vector<double>> operator()(const Tensor& samples) const;

 private:
  int64_t in_, out_;
  uint64_t seed_;
  std::vector<double> w_, b_;
};

using FeatureRows = std::vector<std::vector<double>>;

struct MmdResult {
  double unbiased = 0.0;
  double biased = 0.0;
  double bandwidth = 0.0;
};

// Squared MMD with a Gaussian kernel whose bandwidth is the median pairwise
// distance of the pooled rows. Kernel sums are accumulated in sorted order, so
// the result does not depend on row order.
MmdResult proxy_mmd(const FeatureRows& a, const FeatureRows& b);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// k-NN manifold precision and recall: a point is covered by a set when it lies
// within the k-th-neighbour radius of some member of that set.
PrecisionRecall proxy_precision_recall(const FeatureRows& real, const FeatureRows& generated, int k = 3);

struct LossHistogram {
  std::vector<double> in_values, out_values;  // per-episode grid-mean losses
  std::vector<double> edges;                  // bins + 1 edges
  std::vector<int> in_counts, out_counts;
  double auroc = 0.5;     // P(out > in) + P(out == in) / 2
  double auroc_se = 0.0;  // Hanley-McNeil standard error
};

double auroc(const std::vector<double>& negatives, const std::vector<double>& positives);
double auroc_standard_error(double auc, size_t negatives, size_t positives);

// Per-episode losses on a `steps`-point grid for two splits, binned on shared edges.
LossHistogram loss_histogram(const EpsFactory& eps, const Dataset& dataset, const ClassSplit& split,
                             const EpisodeSpec& in_spec, const EpisodeSpec& out_spec, int episodes_per_split,
                             const NoiseSchedule& schedule, uint64_t seed, int steps = 100, int bins = 30,
                             int batch_size = 16);

struct SampleQuality {
  MmdResult mmd;
  PrecisionRecall pr;
  int sample_count = 0;
  int real_count = 0;
};

struct SampleQualityOptions {
  Split split = Split::kTest;
  int num_classes = 5;       // classes drawn from the split
  int samples_per_class = 20;
  int set_size = 5;
  int steps = 250;
  uint64_t seed = 0;
  int feature_dim = 256;
  uint64_t feature_seed = 1234;
  int k = 3;
};

// For each drawn class a support set is sampled and samples_per_class images
// generated; the pooled samples are compared with the pooled real images of
// those classes (support images excluded) in random-feature space.
SampleQuality eval_samples(const FewShotModel& model, const Dataset& dataset, const ClassSplit& split,
                           const SampleQualityOptions& options, const NoiseSchedule& schedule);

struct EvalReport {
  std::string variant;
  std::string split;
  int64_t train_step = 0;
  uint64_t seed = 0;
  DenoisingEval denoising;
  bool has_samples = false;
  SampleQuality samples;
  int sampling_steps = 0;

  std::string to_json() const;
};

}  // namespace fsdm
