#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "fsdm/denoiser.hpp"
#include "fsdm/model.hpp"
#include "fsdm/setenc.hpp"

namespace fsdm {

struct TrainConfig {
  Variant variant = Variant::kFSDM;
  int batch_size = 32;
  double lr = 2e-4;
  int64_t iterations = 0;
  double lambda = 0.001;
  int set_size = 5;
  bool include_query = true;
  uint64_t seed = 0;
  int64_t eval_every = 0;        // 0 disables periodic evaluation
  int64_t checkpoint_every = 0;  // 0 keeps only the final checkpoint
  int64_t log_every = 10;
  double grad_clip = 1.0;        // global-norm threshold; 0 disables clipping
  bool ema = false;
  double ema_decay = 0.999;
  Split eval_split = Split::kVal;
  int eval_batches = 4;
  int eval_batch_size = 16;
  int eval_grid_steps = 20;
};

struct ScheduleConfig {
  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct SplitConfig {
  std::array<double, 3> fractions{0.6, 0.2, 0.2};
  uint64_t seed = 0;
};

// Everything a run needs. Parsed from `key = value` lines; `#` starts a
// comment; unknown keys and malformed values are rejected.
struct RunConfig {
  TrainConfig train;
  ModelConfig model;
  EncoderConfig encoder;
  ScheduleConfig schedule;
  SplitConfig split;

  void validate() const;
  // Every key with its effective value, one per line, in a fixed order.
  std::string echo() const;
  // Hash of the echo without the keys that only change run length or
  // bookkeeping (iterations, eval_every, checkpoint_every, log_every).
  uint64_t trajectory_hash() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

}  // namespace fsdm
