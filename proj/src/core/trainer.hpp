#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/dataio.hpp"
#include "core/fields.hpp"
#include "core/optim.hpp"
#include "core/renderer.hpp"
#include "core/rng.hpp"

namespace headsdf {

// Decoded training views: every image is loaded up front so ray sampling is
// a pure array lookup. A positive views_per_identity caps how many views per
// identity are used for training (taken in manifest order); the remaining
// views stay out of the set and serve as held-out novel views.
class TrainingSet {
 public:
  struct View {
    Camera camera;
    Tensor image;  // [H*W, 3] in [0,1]
  };
  struct Identity {
    std::string id;
    std::vector<View> views;
  };

  // identity_ids empty = every identity in the manifest, in manifest order.
  TrainingSet(const DatasetManifest& manifest,
              std::vector<std::string> identity_ids = {},
              int views_per_identity = 0);

  int identity_count() const { return static_cast<int>(identities_.size()); }
  const Identity& identity(int index) const { return identities_.at(index); }
  int identity_index(const std::string& id) const;  // throws on unknown id
  const std::vector<std::string>& identity_ids() const { return ids_; }

 private:
  std::vector<Identity> identities_;
  std::vector<std::string> ids_;
};

// One training ray, addressed by indices into a TrainingSet.
struct RaySample {
  int identity = 0;  // index into the TrainingSet
  int view = 0;
  int pixel = 0;  // row-major pixel index
};

// Uniform over the listed identities, then uniform over that identity's
// views, then uniform over pixels. Three index draws per sample, so the
// stream position depends only on n.
std::vector<RaySample> sample_ray_batch(const TrainingSet& data,
                                        std::span<const std::string> identities,
                                        int n, Rng& rng);

// Losses of one optimization step (values after weighting). `total` is the
// number the stopping and abort logic looks at; when it is non-finite the
// step did not apply a parameter update and `finite` is false.
struct StepStats {
  double lr = 0.0;
  double col = 0.0;
  double def = 0.0;
  double eik = 0.0;
  double dis = 0.0;
  double cod = 0.0;
  double total = 0.0;
  bool finite = true;
};

// One step: sample rays_per_step rays over `identities`, render them in
// fixed ray_chunk chunks accumulating color-loss gradients, add regularizer
// probes per identity present in the batch (half uniform in the scene
// sphere, half resampled from this step's render sample positions), then
// apply one Adam update at the scheduled learning rate. Chunks only bound
// the peak tape size; their gradients sum into the same full-batch totals
// (up to floating-point association inside the BLAS reductions).
StepStats train_step(HeadModel& model, const TrainingSet& data,
                     std::span<const std::string> identities,
                     const Config& cfg, AdamState& adam, int64_t step,
                     int64_t total_steps, Rng& rng);

struct TrainResult {
  int64_t steps = 0;          // completed (finite) steps
  double initial_total = 0.0; // total loss of the first step
  double final_total = 0.0;   // total loss of the last completed step
  bool aborted = false;       // a step went non-finite; model restored to the
                              // state before that step
};

// Stage 1: joint optimization of template, deformation, color network,
// density parameters, and all codes over every identity in `data`.
// Writes a CSV loss log (step,lr,color,deform,eikonal,displacement,code,
// total) when log_path is non-empty and a final checkpoint when
// checkpoint_path is non-empty; on a non-finite step the parameters are
// rolled back to the last good state, that state is checkpointed, and the
// result reports aborted=true.
TrainResult train_stage1(HeadModel& model, const TrainingSet& data,
                         const Config& cfg, Rng& rng,
                         const std::string& checkpoint_path = "",
                         const std::string& log_path = "");

// Stage-1 -> stage-2 surgery with a no-op warning: returns false and prints
// to stderr when the model is already promoted.
bool promote_to_stage2(HeadModel& model);

// Stage 2: per-identity refinement on a promoted model. Only the
// displacement and color networks (plus the density parameters and, by
// default, this identity's codes) train; the shared template and the
// deformation network stay frozen unless the config's stage2_train_* flags
// unfreeze them. Other identities' codes never train here.
TrainResult train_stage2(HeadModel& model, const TrainingSet& data,
                         const std::string& identity, const Config& cfg,
                         Rng& rng, const std::string& checkpoint_path = "",
                         const std::string& log_path = "");

// Fits a new identity against a frozen stage-1 model: registers the id with
// zero codes, then optimizes only the new codes and the deformation network
// on the new views. Every template, color-network, and density parameter is
// bitwise untouched.
TrainResult fit_unseen_identity(HeadModel& model, const TrainingSet& data,
                                const std::string& identity, const Config& cfg,
                                Rng& rng,
                                const std::string& checkpoint_path = "",
                                const std::string& log_path = "");

}  // namespace headsdf
