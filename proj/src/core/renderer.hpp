#pragma once

#include <array>
#include <span>
#include <vector>

#include "core/config.hpp"
#include "core/fields.hpp"
#include "core/rng.hpp"

namespace headsdf {

// Pinhole camera. K is the row-major 3x3 intrinsic matrix; cam2world the
// row-major 4x4 rigid transform mapping camera coordinates (x right, y down,
// z forward) into world coordinates.
struct Camera {
  std::array<double, 9> K{};
  std::array<double, 16> cam2world{};
  int width = 0;
  int height = 0;
  void validate() const;
};

struct Ray {
  std::array<double, 3> origin{};
  std::array<double, 3> dir{};  // unit length, world space
  double tnear = 0.0;
  double tfar = 0.0;
  bool hits = false;  // whether the ray crosses the scene sphere
};

// Decoded density parameters (the model stores their logs).
struct DensityParams {
  double alpha = 10.0;
  double beta = 0.1;
};

// Ray through the center of pixel (row, col), clipped to the scene sphere.
Ray make_ray(const Camera& cam, double row, double col, double scene_radius);

// Rays for every pixel of the camera, row-major.
std::vector<Ray> generate_rays(const Camera& cam, double scene_radius);

// Density profile sigma(s) = alpha * Phi_beta(-s), where Phi is the CDF of a
// zero-mean Laplace distribution with scale beta.
double s_density_profile(double s, double alpha, double beta);
Var s_density(Var s, Var log_alpha, Var log_beta);

// Uniform samples on [near, far]: exact endpoints when jitter is off (n=2
// yields {near, far}), stratified bins when on.
std::vector<double> stratified_ts(double tnear, double tfar, int n, bool jitter,
                                  Rng& rng);

// One round of inverse-CDF importance sampling over the coarse intervals
// (interval mass = weight + 1e-5), merged and sorted with the coarse samples.
std::vector<double> importance_ts(const std::vector<double>& coarse_ts,
                                  const std::vector<double>& weights,
                                  double tfar, int n_fine, Rng& rng);

// Plain-math compositing weights for one ray (used by the importance pass).
// us[i] = ts[i+1]-ts[i], last interval runs to the far clip.
std::vector<double> composite_weights_plain(const std::vector<double>& sigma,
                                            const std::vector<double>& us);

struct RenderOptions {
  int n_coarse = 64;
  int n_fine = 64;
  bool jitter = false;
  std::array<double, 3> background = {1.0, 1.0, 1.0};
  double scene_radius = 1.5;
  FieldEvalOptions field_opt;  // gradient switches for the field evaluation
  // When set, the color network uses this identity's color code while the
  // geometry keeps the rendered identity's shape code (appearance transfer).
  std::string color_identity;
};

// Result of rendering a batch of rays. Plain tensors cover every input ray
// (misses get the background); the taped handles cover only the rays that hit
// the scene sphere, row-compacted in input order.
struct RayBatchRender {
  Tensor color;          // [R,3]
  Tensor opacity;        // [R,1]
  Tensor weights;        // [R,S]
  Tensor transmittance;  // [R,S]
  Tensor ts;             // [R,S]
  int samples_per_ray = 0;

  std::vector<int> hit_rows;
  Var color_var;    // [H,3]
  Var opacity_var;  // [H,1]
  Var weights_var;  // [H,S]
  Var sigma_var;    // [H,S] densities at the sample points
  Tensor us;        // [H,S] interval lengths (plain)
  FieldEval fields;  // over the H*S flattened sample points
};

// Renders rays through the model on the binding's tape. Sample positions are
// treated as constants; sample points are differentiable leaves (normals are
// spatial gradients). The importance pre-pass runs grad-free on a scratch
// tape with current parameter values.
RayBatchRender render_rays(ParamBinding& params, const HeadModel& model,
                           const std::string& identity,
                           std::span<const Ray> rays, const RenderOptions& opt,
                           Rng& rng);

// Convenience single-pixel render (fresh tape, frozen parameters).
std::array<double, 3> render_pixel(const HeadModel& model,
                                   const std::string& identity,
                                   const Camera& cam, int row, int col,
                                   const RenderOptions& opt, Rng& rng);

// Full-image render in memory-bounded chunks; returns [H*W, 3] row-major.
Tensor render_image(const HeadModel& model, const std::string& identity,
                    const Camera& cam, const RenderOptions& opt, Rng& rng);

}  // namespace headsdf
