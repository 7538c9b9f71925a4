#pragma once

#include <cstdint>
#include <string>

#include "fsdm/tensor.hpp"

namespace fsdm {

enum class ContextMode { kNone, kVector, kTokens };

std::string to_string(ContextMode mode);
ContextMode context_mode_from_string(const std::string& text);

// Aggregated set representation handed to the denoiser. The payload carries a
// leading batch axis: [B, d] for vector mode, [B, N_p, d] for token mode.
struct Context {
  ContextMode mode = ContextMode::kNone;
  Tensor payload;

  int64_t batch() const { return payload.dim(0); }
  int64_t width() const { return payload.dim(payload.rank() - 1); }
};

// Repeats a batch-1 context along the batch axis.
Context broadcast_context(const Context& context, int64_t batch);

}  // namespace fsdm
