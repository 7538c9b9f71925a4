#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fsdm/checkpoint.hpp"
#include "fsdm/config.hpp"
#include "fsdm/diffusion.hpp"
#include "fsdm/episodes.hpp"
#include "fsdm/evalsuite.hpp"
#include "fsdm/model.hpp"
#include "fsdm/schedule.hpp"

namespace fsdm {

struct MetricRecord {
  int64_t step = 0;
  std::string split;
  std::string metric;
  double value = 0.0;

  std::string to_json() const;
};

// Raised when a training step produces a non-finite loss; the message lists
// the timesteps and loss components of the failing batch.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(const RunConfig& config, const Dataset& dataset, const ClassSplit& split);

  const RunConfig& config() const { return config_; }
  FewShotModel& model() { return *model_; }
  const FewShotModel& model() const { return *model_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  int64_t step() const { return step_; }

  // The B training episodes of a given step; a pure function of (seed, step).
  std::vector<Episode> episodes_for_step(int64_t step) const;
  // One optimization step on the episodes of the current step.
  LossTerms train_step();
  // One optimization step on explicit episodes; t and eps drawn from streams
  // keyed by the current step.
  LossTerms train_step(const std::vector<Episode>& episodes);

  // Loss and parameter gradients of a batch without updating anything.
  LossTerms compute_loss(const std::vector<Episode>& episodes, int64_t step_key);

  // Validation noise-prediction loss on the configured evaluation split,
  // using EMA weights when enabled.
  DenoisingEval evaluate() const;

  using MetricSink = std::function<void(const MetricRecord&)>;
  using CheckpointHook = std::function<void(int64_t step)>;
  // Trains until config.train.iterations steps have been taken in total.
  void fit(const MetricSink& sink = {}, const CheckpointHook& on_checkpoint = {});

  CheckpointFile to_checkpoint() const;
  void save(const std::string& path) const;
  // Restores parameters, optimizer state, EMA and step. The checkpoint's
  // trajectory hash must match this trainer's configuration.
  void restore(const CheckpointFile& file);
  void load(const std::string& path);

 private:
  // Runs f with EMA weights swapped into the model when EMA is enabled.
  template <typename F>
  auto with_eval_weights(F&& f) const;

  RunConfig config_;
  const Dataset& dataset_;
  ClassSplit split_;
  NoiseSchedule schedule_;
  std::unique_ptr<FewShotModel> model_;
  std::map<std::string, std::vector<double>> ema_;
  int64_t step_ = 0;
};

// Rebuilds the configuration and model stored in a checkpoint.
RunConfig config_from_checkpoint(const CheckpointFile& file);
std::unique_ptr<FewShotModel> model_from_checkpoint(const CheckpointFile& file, bool use_ema = true);
NoiseSchedule schedule_from_config(const RunConfig& config);

}  // namespace fsdm
