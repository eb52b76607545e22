#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace headsdf {

// Scalar field samples at the nodes of a regular grid with inclusive bounds
// (node i sits at bmin + i * (bmax - bmin) / (n - 1)).
struct VoxelGrid {
  int nx = 0, ny = 0, nz = 0;
  std::array<double, 3> bmin{};
  std::array<double, 3> bmax{};
  std::vector<double> values;  // index (ix*ny + iy)*nz + iz

  void validate() const;
  double at(int ix, int iy, int iz) const {
    return values[(static_cast<size_t>(ix) * ny + iy) * nz + iz];
  }
  std::array<double, 3> node(int ix, int iy, int iz) const;
};

struct TriangleMesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> faces;
  // Set when extraction saw a single-sign grid (no zero crossing anywhere).
  bool no_crossing = false;
};

// Batched scalar field: [N,3] points in, [N,1] values out.
using FieldFn = std::function<Tensor(const Tensor&)>;

VoxelGrid sample_grid(const FieldFn& field, int nx, int ny, int nz,
                      const std::array<double, 3>& bmin,
                      const std::array<double, 3>& bmax,
                      int64_t batch = 8192);

// Zero-level-set triangulation with linear interpolation along cell edges.
// Shared edge vertices are deduplicated; faces wind so normals point toward
// increasing field values.
TriangleMesh marching_cubes(const VoxelGrid& grid, double iso = 0.0);

// Keeps faces whose three vertices all lie inside the closed box; vertices
// are reindexed and unreferenced ones dropped.
TriangleMesh crop_mesh(const TriangleMesh& mesh,
                       const std::array<double, 3>& bmin,
                       const std::array<double, 3>& bmax);

void write_obj(const TriangleMesh& mesh, const std::string& path);
TriangleMesh read_obj(const std::string& path);

}  // namespace headsdf
