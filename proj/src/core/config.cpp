#include "core/config.hpp"

#include "core/tensor.hpp"

namespace headsdf {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError("config: " + what);
}

}  // namespace

void LossWeights::validate() const {
  require(color >= 0.0 && deform_magnitude >= 0.0 && deform_smoothness >= 0.0 &&
              eikonal >= 0.0 && displacement_magnitude >= 0.0 &&
              displacement_smoothness >= 0.0 && code >= 0.0,
          "loss weights must be non-negative");
}

void ModelConfig::validate() const {
  require(code_dim > 0, "code_dim must be positive");
  require(hidden > 0, "hidden must be positive");
  require(feat_deform > 0 && feat_template > 0 && feat_displacement > 0,
          "feature widths must be positive");
  require(deform_layers >= 2 && template_layers >= 2 &&
              displacement_layers >= 2 && render_layers_stage1 >= 2,
          "each network needs at least two layers");
  require(render_layers_stage2 == render_layers_stage1 + 2,
          "stage-2 color network must be exactly two layers deeper than "
          "stage-1 (the promotion inserts an identity block)");
  require(template_skip >= 2 && template_skip <= template_layers - 1,
          "template skip layer must be interior");
  require(render_skip_stage2 >= 2 &&
              render_skip_stage2 <= render_layers_stage2 - 1 &&
              render_skip_stage2 <= render_layers_stage1,
          "stage-2 color skip layer must be interior and within the promoted "
          "prefix");
  require(pe_deform >= 0 && pe_template >= 0 && pe_displacement >= 0,
          "frequency counts must be non-negative");
  require(pe_render_point_stage2 >= pe_render_point_stage1 &&
              pe_render_view_stage2 >= pe_render_view_stage1,
          "stage-2 encodings cannot be narrower than stage-1");
  require(init_alpha > 0.0 && init_beta > 0.0, "density inits must be positive");
  require(init_sphere_radius > 0.0, "init sphere radius must be positive");
}

void RenderConfig::validate() const {
  require(n_coarse >= 2, "need at least two samples per ray");
  require(n_fine >= 0, "fine sample count cannot be negative");
  require(scene_radius > 0.0, "scene radius must be positive");
  for (double b : background) {
    require(b >= 0.0 && b <= 1.0, "background color must be within [0,1]");
  }
  require(eval_ray_chunk > 0, "eval ray chunk must be positive");
}

void TrainConfig::validate() const {
  require(rays_per_step > 0, "rays_per_step must be positive");
  require(stage1_steps >= 0 && stage2_steps >= 0 && unseen_steps >= 0,
          "step counts cannot be negative");
  require(lr0 > 0.0, "lr0 must be positive");
  require(lr_final_factor > 0.0 && lr_final_factor <= 1.0,
          "lr_final_factor must lie in (0,1]");
  require(regularizer_points >= 0, "regularizer point count cannot be negative");
  require(ray_chunk > 0, "ray_chunk must be positive");
  require(log_every > 0, "log_every must be positive");
  require(views_per_identity >= 0, "views_per_identity cannot be negative");
  weights.validate();
}

void EvalConfig::validate() const {
  require(mesh_resolution >= 4, "mesh resolution must be at least 4");
  require(surface_samples > 0 && chamfer_points > 0,
          "sample counts must be positive");
}

void Config::validate() const {
  model.validate();
  render.validate();
  train.validate();
  eval.validate();
}

}  // namespace headsdf
