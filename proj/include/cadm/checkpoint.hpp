#pragma once

#include <string>

#include "cadm/model.hpp"
#include "cadm/tokenizer.hpp"

namespace cadm {

struct LoadedCheckpoint {
  ModelState state;
  Tokenizer tokenizer;
};

// JSON checkpoint holding the encoder config, all three parameter groups,
// step counters and the fitted vocabulary. Doubles are serialized with
// round-trip precision, so save/load is bit-exact.
void save_checkpoint(const std::string& path, const ModelState& state,
                     const Tokenizer& tokenizer);
LoadedCheckpoint load_checkpoint(const std::string& path);

// Human-readable summary without instantiating the model (works even when an
// external adapter is not registered in this process).
std::string checkpoint_summary(const std::string& path);

}  // namespace cadm
