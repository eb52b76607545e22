#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/renderer.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace headsdf {

// ---------------------------------------------------------------------------
// Images. PNGs are 8-bit RGB with values quantized as round(255*c); the raw
// float format round-trips doubles exactly for loss tests that cannot afford
// quantization error.
// ---------------------------------------------------------------------------

// rgb is [H*W, 3] row-major with channels in [0,1] (clamped on write).
void write_png(const std::string& path, const Tensor& rgb, int width,
               int height);
Tensor read_png(const std::string& path, int* width = nullptr,
                int* height = nullptr);

void write_float_image(const std::string& path, const Tensor& rgb, int width,
                       int height);
Tensor read_float_image(const std::string& path, int* width = nullptr,
                        int* height = nullptr);

// Width/height from the PNG header alone (no pixel decode).
void png_dimensions(const std::string& path, int* width, int* height);

// ---------------------------------------------------------------------------
// Dataset manifest: one JSON file listing per-identity views with relative
// image paths, row-major 3x3 intrinsics, and row-major 4x4 camera-to-world
// transforms. Loading resolves paths against the manifest directory,
// re-orthonormalizes rotations (rejecting anything off by more than 1e-8 or
// with negative determinant), and checks per-identity image dimensions.
// ---------------------------------------------------------------------------

struct ViewEntry {
  std::string image_path;  // absolute after load
  Camera camera;
};

struct IdentityEntry {
  std::string id;
  std::string gt_mesh_path;  // absolute after load; empty when absent
  std::vector<ViewEntry> views;
};

struct DatasetManifest {
  std::string root;  // directory containing the manifest file
  std::string scale_note;
  std::vector<IdentityEntry> identities;

  const IdentityEntry& identity(const std::string& id) const;
  std::vector<std::string> identity_ids() const;
};

DatasetManifest load_dataset(const std::string& manifest_path);

// Decodes a view's image to [H*W, 3] in [0,1].
Tensor load_view_image(const ViewEntry& view);

// ---------------------------------------------------------------------------
// Configuration file: the full Config schema as JSON. Every key is optional
// (defaults apply); unknown keys are rejected so typos cannot silently fall
// back to defaults.
// ---------------------------------------------------------------------------

Config parse_config(const std::string& json_text);
Config load_config(const std::string& path);
std::string config_to_json(const Config& cfg);

// ---------------------------------------------------------------------------
// Analytic scenes: every identity shares one base ellipsoid and differs by a
// smooth low-frequency warp plus a high-frequency sinusoidal bump field. The
// field is divided by its Lipschitz bound so sphere tracing can step by the
// raw value without ever crossing the surface.
// ---------------------------------------------------------------------------

struct IdentityScene {
  std::string id;
  std::array<double, 3> warp_amplitude{};  // per-axis offset amplitudes
  std::array<double, 3> warp_frequency{};
  std::array<double, 3> warp_phase{};
  double bump_amplitude = 0.0;
  double bump_frequency = 0.0;
  std::array<double, 3> bump_phase{};
  std::array<double, 3> albedo_base{};
  std::array<double, 3> albedo_tint{};
  double albedo_frequency = 0.0;
  double albedo_phase = 0.0;
};

struct SceneSpec {
  std::array<double, 3> base_radii = {0.45, 0.55, 0.4};
  std::array<double, 3> background = {1.0, 1.0, 1.0};
  double camera_distance = 2.2;
  double focal_per_pixel = 1.2;  // focal length = this * image size
  double scene_radius = 1.5;
  int gt_mesh_resolution = 64;   // nodes per axis on [-1,1]^3
  bool write_float_images = false;
  std::vector<IdentityScene> identities;

  // Deterministic per-identity parameters drawn from the given seed. The
  // bump amplitude always stays below 0.2 x the smallest base radius.
  static SceneSpec sample(int n_identities, uint64_t seed);
  void validate() const;
};

double scene_sdf(const SceneSpec& spec, const IdentityScene& identity,
                 const std::array<double, 3>& p);
std::array<double, 3> scene_albedo(const IdentityScene& identity,
                                   const std::array<double, 3>& p);

// ---------------------------------------------------------------------------
// Sphere tracing against any 1-Lipschitz scalar field.
// ---------------------------------------------------------------------------

using ScalarField = std::function<double(const std::array<double, 3>&)>;

struct TraceResult {
  bool hit = false;
  double t = 0.0;
  std::array<double, 3> point{};
};

// Marches t += field(origin + t*dir) from tnear until |field| < eps (hit) or
// t exceeds tfar / the step budget (miss). Rays that miss the scene sphere
// miss immediately.
TraceResult sphere_trace(const ScalarField& field, const Ray& ray,
                         int max_steps, double eps);

// ---------------------------------------------------------------------------
// Synthetic dataset generation: views on a frontal arc (+-60 deg azimuth,
// +-15 deg elevation), images rendered by sphere tracing with Lambertian
// shading and per-identity albedo, ground-truth meshes from marching cubes
// on the analytic field, and a manifest tying it together. Returns the
// manifest path. Identical inputs produce bitwise-identical directories.
// ---------------------------------------------------------------------------

std::string generate_synthetic(const SceneSpec& spec, int n_identities,
                               int n_views, int image_size, uint64_t seed,
                               const std::string& out_dir);

// Square camera on the viewing arc: azimuth/elevation in degrees around the
// origin at the given distance, focal length in pixels. Azimuth 0 looks down
// +z from (0,0,-dist); positive elevation raises the eye.
Camera arc_camera(double az_deg, double el_deg, double dist, double focal,
                  int size);

}  // namespace headsdf
