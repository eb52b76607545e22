#pragma once

#include <cstdint>
#include <string>

#include "core/config.hpp"
#include "core/fields.hpp"
#include "core/optim.hpp"

namespace headsdf {

// Model snapshots live in a single file: a fixed magic + version, a JSON
// header (stage tag, step counter, density parameters, loss weights, full
// config snapshot, identity list, and a directory of named arrays with
// explicit shapes), then the raw array data as little-endian 32-bit floats.
//
// Values are stored as f32, so save_checkpoint first snaps the in-memory
// parameters (and optimizer moments, when given) to f32-representable
// doubles. After that snap, training one more step from memory and training
// one more step after a save/load round-trip are the same computation bit
// for bit, which is what makes resuming exact.
//
// Writes go to a temporary sibling file first and are renamed into place, so
// a crash mid-save never leaves a truncated checkpoint under the real name.
void save_checkpoint(const std::string& path, HeadModel& model,
                     const Config& cfg, int64_t step,
                     AdamState* adam = nullptr);

struct LoadedCheckpoint {
  HeadModel model;
  Config config;       // snapshot taken at save time
  int64_t step = 0;    // training step counter at save time
  AdamState adam;      // meaningful only when has_adam
  bool has_adam = false;
};

// Rebuilds the model from the header's config/identities/stage and overwrites
// every parameter with the stored array. The file's array names must match
// the rebuilt model's parameter names exactly, in both directions.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace headsdf
