#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace headsdf {

// Loss term weights. The color term carries the large weight; every
// regularizer shares the small default. The code-magnitude term has its own
// slot so it can be tuned independently of the displacement smoothness term.
struct LossWeights {
  double color = 0.01;
  double deform_magnitude = 0.001;
  double deform_smoothness = 0.001;
  double eikonal = 0.001;
  double displacement_magnitude = 0.001;
  double displacement_smoothness = 0.001;
  double code = 0.001;
  void validate() const;
};

// Network architecture. Defaults are the full-scale configuration; tests and
// the CPU fixture shrink widths and feature sizes through the config file.
struct ModelConfig {
  int code_dim = 128;
  int hidden = 256;
  int feat_deform = 192;
  int feat_template = 64;
  int feat_displacement = 64;
  int deform_layers = 4;
  int template_layers = 8;
  int displacement_layers = 4;
  int render_layers_stage1 = 4;
  int render_layers_stage2 = 6;
  int template_skip = 4;
  int render_skip_stage2 = 3;
  int pe_deform = 6;
  int pe_template = 6;
  int pe_displacement = 8;
  int pe_render_point_stage1 = 6;
  int pe_render_view_stage1 = 4;
  int pe_render_point_stage2 = 8;
  int pe_render_view_stage2 = 6;
  double init_alpha = 10.0;
  double init_beta = 0.1;
  double init_sphere_radius = 0.5;
  void validate() const;
};

struct RenderConfig {
  int n_coarse = 64;
  int n_fine = 64;
  double scene_radius = 1.5;  // rays are clipped to a sphere of this radius
  std::array<double, 3> background = {1.0, 1.0, 1.0};
  bool jitter_training = true;
  int eval_ray_chunk = 1024;  // rays per tape when rendering images
  void validate() const;
};

struct TrainConfig {
  int rays_per_step = 1024;
  int stage1_steps = 2000;
  int stage2_steps = 3000;
  int unseen_steps = 1500;
  double lr0 = 5e-4;
  double lr_final_factor = 0.1;
  int regularizer_points = 512;  // probe count per step for surface terms
  int ray_chunk = 128;           // rays per tape chunk within a step
  int log_every = 50;
  int views_per_identity = 0;  // 0 = use every view
  // Which parts unfreeze during per-identity refinement. The displacement
  // and color networks always train there; the shared template only when
  // explicitly requested.
  bool stage2_train_template = false;
  bool stage2_train_deform = false;
  bool stage2_train_codes = true;
  LossWeights weights;
  void validate() const;
};

struct EvalConfig {
  int mesh_resolution = 128;
  int surface_samples = 30000;
  int chamfer_points = 30000;
  void validate() const;
};

struct Config {
  uint64_t seed = 0;
  ModelConfig model;
  RenderConfig render;
  TrainConfig train;
  EvalConfig eval;
  void validate() const;
};

}  // namespace headsdf
