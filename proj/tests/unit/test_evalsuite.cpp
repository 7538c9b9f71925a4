#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fsdm/errors.hpp"
#include "fsdm/evalsuite.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace fsdm;
using namespace fsdm::testing;

namespace {

Dataset noise_dataset(int classes, int per_class, int size, uint64_t seed) {
  Dataset d;
  d.image_size = size;
  d.image_channels = 1;
  for (int c = 0; c < classes; ++c) {
    d.class_names.push_back("c" + std::to_string(c));
    d.images.emplace_back();
    for (int i = 0; i < per_class; ++i) {
      d.images.back().push_back(uniform_tensor({1, size, size}, seed + 1000 * static_cast<uint64_t>(c) + i, -1, 1));
    }
  }
  return d;
}

EpsFactory zero_factory() {
  return [](const Tensor&) -> EpsFunction {
    return [](const DiffusionState& s) { return Tensor::zeros(s.x_t.shape()); };
  };
}

FeatureRows gaussian_rows(size_t n, size_t dim, double mean, uint64_t seed) {
  RngStream rng(seed, "rows");
  FeatureRows rows(n, std::vector<double>(dim));
  for (auto& r : rows) {
    for (double& v : r) v = mean + rng.normal();
  }
  return rows;
}

FeatureRows line(const std::vector<double>& xs) {
  FeatureRows rows;
  for (double x : xs) rows.push_back({x});
  return rows;
}

}  // namespace

TEST_CASE("a zero predictor scores one per layer") {
  const Dataset d = noise_dataset(4, 6, 4, 1);
  const ClassSplit split = explicit_split({0, 1}, {2, 3}, {});
  DenoisingOptions o;
  o.episodes = {3, 1, Split::kVal, false};
  o.num_batches = 4;
  o.batch_size = 16;
  o.grid = {1, 250, 500, 1000};
  const NoiseSchedule s = linear_betas(1000);
  const DenoisingEval e = eval_denoising(zero_factory(), d, split, o, s);
  REQUIRE(e.per_layer.size() == 4);
  CHECK(e.episodes == 64);
  for (size_t i = 0; i < 4; ++i) CHECK(std::abs(e.per_layer[i] - 1.0) < 3.0 * e.per_layer_se[i]);
  const DenoisingEval again = eval_denoising(zero_factory(), d, split, o, s);
  CHECK(again.per_layer == e.per_layer);
  CHECK(again.per_episode == e.per_episode);
  o.episodes.split = Split::kTest;
  CHECK_THROWS_AS(eval_denoising(zero_factory(), d, split, o, s), ConfigError);
}

TEST_CASE("random features are deterministic per seed") {
  const Tensor x = random_tensor({3, 1, 4, 4}, 1);
  const RandomFeatures a(16, 8, 5), b(16, 8, 5), c(16, 8, 6);
  CHECK(a(x) == b(x));
  CHECK(a(x) != c(x));
  CHECK(a(x).size() == 3);
  CHECK(a(x)[0].size() == 8);
  CHECK_THROWS_AS(a(random_tensor({2, 1, 3, 3}, 1)), ConfigError);
}

TEST_CASE("MMD of a set with itself") {
  const FeatureRows a = gaussian_rows(200, 4, 0.0, 1);
  const MmdResult r = proxy_mmd(a, a);
  CHECK(std::abs(r.biased) < 1e-12);
  CHECK(r.unbiased <= 0.0);
  CHECK(r.bandwidth > 0.0);
  CHECK_THROWS_AS(proxy_mmd(line({1.0}), line({1.0, 2.0})), ConfigError);
  CHECK_THROWS_AS(proxy_mmd(line({1.0, 1.0}), line({1.0, 1.0})), ConfigError);
}

TEST_CASE("MMD is order invariant and near zero for matching distributions") {
  FeatureRows a = gaussian_rows(300, 4, 0.0, 1);
  const FeatureRows b = gaussian_rows(300, 4, 0.0, 2);
  const MmdResult r = proxy_mmd(a, b);
  CHECK(std::abs(r.unbiased) < 0.01);
  std::reverse(a.begin(), a.end());
  std::rotate(a.begin(), a.begin() + 17, a.end());
  const MmdResult s = proxy_mmd(a, b);
  CHECK(s.unbiased == r.unbiased);
  CHECK(s.biased == r.biased);
}

TEST_CASE("MMD separates shifted distributions") {
  int wins = 0;
  for (uint64_t rep = 0; rep < 20; ++rep) {
    const FeatureRows a = gaussian_rows(200, 4, 0.0, 10 * rep + 1);
    const FeatureRows a2 = gaussian_rows(200, 4, 0.0, 10 * rep + 2);
    const FeatureRows b = gaussian_rows(200, 4, 5.0, 10 * rep + 3);
    wins += proxy_mmd(a, b).unbiased > proxy_mmd(a, a2).unbiased;
  }
  CHECK(wins == 20);
}

TEST_CASE("precision and recall") {
  const FeatureRows real = gaussian_rows(30, 3, 0.0, 4);
  const PrecisionRecall same = proxy_precision_recall(real, real, 3);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  FeatureRows far = real;
  for (auto& r : far) {
    for (double& v : r) v += 1000.0;
  }
  CHECK(proxy_precision_recall(real, far, 3).precision == 0.0);
  CHECK_THROWS_AS(proxy_precision_recall(line({0, 1, 2}), line({0, 1, 2, 3}), 3), ConfigError);
}

TEST_CASE("precision and recall on a hand-enumerated line") {
  // Third-nearest-neighbour radii: real {-15, 1, 2, 4, 8} -> {19, 7, 6, 4, 7},
  // generated {0.5, 3, 6, 9, 20} -> {8.5, 6, 5.5, 8.5, 17}. The union of real
  // balls is [-34, 15], missing 20; the union of generated balls is [-8, 37],
  // missing -15.
  const PrecisionRecall pr = proxy_precision_recall(line({-15, 1, 2, 4, 8}), line({0.5, 3, 6, 9, 20}), 3);
  CHECK(pr.precision == doctest::Approx(0.8));
  CHECK(pr.recall == doctest::Approx(0.8));
}

TEST_CASE("AUROC with ties") {
  CHECK(auroc({1, 2, 3}, {2, 4}) == doctest::Approx(0.75));
  CHECK(auroc({1, 2}, {3, 4}) == 1.0);
  CHECK(auroc({3, 4}, {1, 2}) == 0.0);
  CHECK(auroc({1, 1}, {1}) == 0.5);
  CHECK_THROWS_AS(auroc({}, {1}), ConfigError);
  CHECK(auroc_standard_error(0.5, 100, 100) == doctest::Approx(std::sqrt((0.25 + 99 * (1.0 / 3 - 0.25) * 2) / 1e4)));
}

TEST_CASE("loss histogram of identical splits is uninformative") {
  const Dataset d = noise_dataset(6, 6, 4, 2);
  const ClassSplit split = explicit_split({0, 1, 2}, {3, 4, 5}, {});
  const NoiseSchedule s = linear_betas(1000);
  const EpisodeSpec spec{3, 1, Split::kTrain, false};
  const LossHistogram h = loss_histogram(zero_factory(), d, split, spec, spec, 60, s, 7, 20, 10, 16);
  CHECK(h.in_values.size() == 60);
  CHECK(h.out_values.size() == 60);
  CHECK(h.edges.size() == 11);
  int total = 0;
  for (int c : h.in_counts) total += c;
  CHECK(total == 60);
  CHECK(std::abs(h.auroc - 0.5) < 3.0 * h.auroc_se);
  const LossHistogram again = loss_histogram(zero_factory(), d, split, spec, spec, 60, s, 7, 20, 10, 16);
  CHECK(again.in_values == h.in_values);
  CHECK(again.auroc == h.auroc);
}

TEST_CASE("sample-quality evaluation on a tiny model") {
  const Dataset d = noise_dataset(4, 8, 8, 3);
  const ClassSplit split = explicit_split({0, 1}, {}, {2, 3});
  FewShotModel model(Variant::kFSDM, tiny_model_config(), tiny_encoder_config(), 2, 1);
  SampleQualityOptions o;
  o.num_classes = 2;
  o.samples_per_class = 4;
  o.set_size = 2;
  o.steps = 5;
  o.feature_dim = 16;
  const NoiseSchedule s = linear_betas(50, 1e-3, 0.1);
  const SampleQuality q = eval_samples(model, d, split, o, s);
  CHECK(q.sample_count == 8);
  CHECK(q.real_count == 12);
  CHECK(std::isfinite(q.mmd.unbiased));
  CHECK(q.pr.precision >= 0.0);
  CHECK(q.pr.recall <= 1.0);
  const SampleQuality again = eval_samples(model, d, split, o, s);
  CHECK(again.mmd.unbiased == q.mmd.unbiased);

  EvalReport report;
  report.variant = "FSDM";
  report.split = "test";
  report.has_samples = true;
  report.samples = q;
  report.sampling_steps = 5;
  const auto j = nlohmann::json::parse(report.to_json());
  CHECK(j.at("sample_count").get<int>() == 8);
  CHECK(j.at("steps").get<int>() == 5);
}
