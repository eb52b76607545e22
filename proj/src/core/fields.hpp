#pragma once

#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/nn.hpp"
#include "core/tape.hpp"

namespace headsdf {

// The full geometry + appearance model: a shared template distance field, a
// per-identity deformation field warping observation space into the template,
// a per-identity displacement field for high-frequency detail (second stage
// only), and a view-dependent color network. Identities are addressed by
// string id; each owns a shape code and a color code.
class HeadModel {
 public:
  static constexpr int kStageOne = 1;
  static constexpr int kStageTwo = 2;

  HeadModel(const ModelConfig& cfg, std::vector<std::string> identity_ids,
            uint64_t seed);

  int stage() const { return stage_; }
  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::string>& identities() const { return ids_; }
  bool has_identity(const std::string& id) const;

  // Registers a new identity with zero codes (the fitting start point).
  void add_identity(const std::string& id);

  // Stage-1 -> stage-2 surgery: widens the color network's input layout (new
  // columns start with zero weights), inserts an identity-initialized skip
  // block, and creates the displacement network with a zero head. Returns
  // false (and changes nothing) if already in stage 2. The promoted model
  // renders bit-identically until training moves it.
  bool promote();

  double alpha() const;
  double beta() const;

  MlpSpec deform_spec() const;
  MlpSpec template_spec() const;
  MlpSpec displacement_spec() const;
  MlpSpec render_spec() const;

  PositionalEncodingSpec pe_deform() const;
  PositionalEncodingSpec pe_template() const;
  PositionalEncodingSpec pe_displacement() const;
  PositionalEncodingSpec pe_render_point() const;
  PositionalEncodingSpec pe_render_view() const;

  static std::string shape_code_name(const std::string& id);
  static std::string color_code_name(const std::string& id);

  // Used by the checkpoint reader, which restores stage/identities directly.
  void restore_stage(int stage) { stage_ = stage; }
  void restore_identities(std::vector<std::string> ids) { ids_ = std::move(ids); }

  ParameterStore params;

 private:
  ModelConfig cfg_;
  int stage_ = kStageOne;
  std::vector<std::string> ids_;
  uint64_t seed_ = 0;
};

// One batch of field evaluations at points X [N,3] for a single identity.
// delta/f_dis/s_hat-specific handles are only valid in stage 2; in stage 1
// s_hat aliases s. Gradient handles are filled on request.
struct FieldEval {
  Var x;           // [N,3] input points
  Var d;           // [N,3] deformation
  Var f_def;       // [N,feat_deform]
  Var y;           // [N,3] template-space points x + d
  Var s;           // [N,1] base signed distance
  Var f_tem;       // [N,feat_template]
  Var delta;       // [N,1] displacement (stage 2)
  Var f_dis;       // [N,feat_displacement] (stage 2)
  Var s_hat;       // [N,1] refined signed distance (s + delta)
  Var grad_s;      // [N,3] d s / d x
  Var grad_s_hat;  // [N,3] d s_hat / d x
};

struct FieldEvalOptions {
  bool base_gradient = false;
  bool final_gradient = false;
  // Cut gradients flowing from the displacement network into its feature
  // inputs (the features still reach the color network directly).
  bool detach_displacement_inputs = false;
};

FieldEval eval_fields(ParamBinding& params, const HeadModel& model,
                      const std::string& identity, Var X,
                      const FieldEvalOptions& opt = {});

// Concatenated per-point feature vector for the color network:
// [f_def | f_tem] in stage 1, [f_def | f_tem | f_dis] in stage 2.
Var assemble_features(const FieldEval& fe, int stage);

// Row-normalized gradient with a degeneracy guard (zero gradients map to the
// zero vector instead of NaN).
Var surface_normal(Var grad);

// View-dependent color in [0,1]^3 for points X with unit view directions V.
Var radiance(ParamBinding& params, const HeadModel& model,
             const std::string& identity, Var X, Var V, Var features,
             Var normals);

}  // namespace headsdf
