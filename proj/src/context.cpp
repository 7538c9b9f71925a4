#include "fsdm/context.hpp"

#include <vector>

#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"

namespace fsdm {

std::string to_string(ContextMode mode) {
  switch (mode) {
    case ContextMode::kNone:
      return "none";
    case ContextMode::kVector:
      return "vector";
    case ContextMode::kTokens:
      return "tokens";
  }
  return "none";
}

ContextMode context_mode_from_string(const std::string& text) {
  if (text == "none") return ContextMode::kNone;
  if (text == "vector") return ContextMode::kVector;
  if (text == "tokens") return ContextMode::kTokens;
  throw ConfigError("unknown context mode '" + text + "'");
}

Context broadcast_context(const Context& context, int64_t batch) {
  if (context.batch() == batch) return context;
  if (context.batch() != 1) {
    throw ContractError("cannot broadcast a context of batch " + std::to_string(context.batch()) + " to " +
                        std::to_string(batch));
  }
  return {context.mode, ops::index0(context.payload, std::vector<int64_t>(static_cast<size_t>(batch), 0))};
}

}  // namespace fsdm
