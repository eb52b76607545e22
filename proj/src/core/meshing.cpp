#include "core/meshing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace headsdf {

namespace {

#include "core/mc_table.inc"

// Cube corner offsets and the edges between them (corner-pair indices).
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0},
                              {4, 5}, {5, 6}, {6, 7}, {7, 4},
                              {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

void VoxelGrid::validate() const {
  if (nx < 2 || ny < 2 || nz < 2)
    throw UsageError("voxel grid: need at least two nodes per axis");
  for (int k = 0; k < 3; ++k)
    if (!(bmin[k] < bmax[k]))
      throw UsageError("voxel grid: bounds must satisfy min < max");
  if (values.size() != static_cast<size_t>(nx) * ny * nz)
    throw UsageError("voxel grid: value count does not match resolution");
}

std::array<double, 3> VoxelGrid::node(int ix, int iy, int iz) const {
  return {bmin[0] + (bmax[0] - bmin[0]) * ix / (nx - 1),
          bmin[1] + (bmax[1] - bmin[1]) * iy / (ny - 1),
          bmin[2] + (bmax[2] - bmin[2]) * iz / (nz - 1)};
}

VoxelGrid sample_grid(const FieldFn& field, int nx, int ny, int nz,
                      const std::array<double, 3>& bmin,
                      const std::array<double, 3>& bmax, int64_t batch) {
  VoxelGrid grid;
  grid.nx = nx;
  grid.ny = ny;
  grid.nz = nz;
  grid.bmin = bmin;
  grid.bmax = bmax;
  grid.values.assign(static_cast<size_t>(nx) * ny * nz, 0.0);
  grid.validate();
  if (batch < 1) throw UsageError("sample_grid: batch must be positive");

  const int64_t total = static_cast<int64_t>(nx) * ny * nz;
  for (int64_t start = 0; start < total; start += batch) {
    const int64_t count = std::min(batch, total - start);
    Tensor pts = Tensor::zeros(count, 3);
    for (int64_t i = 0; i < count; ++i) {
      const int64_t flat = start + i;
      const int iz = static_cast<int>(flat % nz);
      const int iy = static_cast<int>((flat / nz) % ny);
      const int ix = static_cast<int>(flat / (static_cast<int64_t>(ny) * nz));
      const auto p = grid.node(ix, iy, iz);
      pts.at(i, 0) = p[0];
      pts.at(i, 1) = p[1];
      pts.at(i, 2) = p[2];
    }
    const Tensor vals = field(pts);
    if (vals.rows() != count || vals.cols() != 1)
      throw UsageError("sample_grid: field must return [N,1] values");
    for (int64_t i = 0; i < count; ++i)
      grid.values[start + i] = vals.data[i];
  }
  return grid;
}

TriangleMesh marching_cubes(const VoxelGrid& grid, double iso) {
  grid.validate();
  TriangleMesh mesh;

  bool any_inside = false, any_outside = false;
  for (double v : grid.values) (v < iso ? any_inside : any_outside) = true;
  if (!any_inside || !any_outside) {
    mesh.no_crossing = true;
    return mesh;
  }

  // One canonical key per grid edge: base-node linear index * 3 + axis.
  std::unordered_map<int64_t, int> edge_vertex;
  edge_vertex.reserve(grid.values.size() / 4);

  auto emit_vertex = [&](int ix, int iy, int iz, int e) {
    const int* a = kCorner[kEdge[e][0]];
    const int* b = kCorner[kEdge[e][1]];
    const int bx = ix + std::min(a[0], b[0]);
    const int by = iy + std::min(a[1], b[1]);
    const int bz = iz + std::min(a[2], b[2]);
    int axis = 0;
    for (int k = 0; k < 3; ++k)
      if (a[k] != b[k]) axis = k;
    const int64_t base =
        (static_cast<int64_t>(bx) * grid.ny + by) * grid.nz + bz;
    const int64_t key = base * 3 + axis;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;

    int dx = 0, dy = 0, dz = 0;
    (axis == 0 ? dx : axis == 1 ? dy : dz) = 1;
    const double v0 = grid.at(bx, by, bz);
    const double v1 = grid.at(bx + dx, by + dy, bz + dz);
    double t = v1 == v0 ? 0.5 : (iso - v0) / (v1 - v0);
    t = std::clamp(t, 0.0, 1.0);
    const auto p0 = grid.node(bx, by, bz);
    const auto p1 = grid.node(bx + dx, by + dy, bz + dz);
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back({p0[0] + t * (p1[0] - p0[0]),
                             p0[1] + t * (p1[1] - p0[1]),
                             p0[2] + t * (p1[2] - p0[2])});
    edge_vertex.emplace(key, id);
    return id;
  };

  for (int ix = 0; ix < grid.nx - 1; ++ix) {
    for (int iy = 0; iy < grid.ny - 1; ++iy) {
      for (int iz = 0; iz < grid.nz - 1; ++iz) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          if (grid.at(ix + kCorner[c][0], iy + kCorner[c][1],
                      iz + kCorner[c][2]) < iso)
            cube |= 1 << c;
        }
        const int* row = kMcTriTable[cube];
        for (int t = 0; row[t] != -1; t += 3) {
          const int i0 = emit_vertex(ix, iy, iz, row[t]);
          const int i1 = emit_vertex(ix, iy, iz, row[t + 1]);
          const int i2 = emit_vertex(ix, iy, iz, row[t + 2]);
          // Interpolation can snap two corners of a sliver together; such
          // zero-area faces are dropped.
          if (i0 != i1 && i1 != i2 && i0 != i2)
            mesh.faces.push_back({i0, i1, i2});
        }
      }
    }
  }
  return mesh;
}

TriangleMesh crop_mesh(const TriangleMesh& mesh,
                       const std::array<double, 3>& bmin,
                       const std::array<double, 3>& bmax) {
  for (int k = 0; k < 3; ++k)
    if (!(bmin[k] <= bmax[k])) throw UsageError("crop_mesh: bad box");

  auto inside = [&](const std::array<double, 3>& p) {
    for (int k = 0; k < 3; ++k)
      if (p[k] < bmin[k] || p[k] > bmax[k]) return false;
    return true;
  };

  TriangleMesh out;
  std::vector<int> remap(mesh.vertices.size(), -1);
  for (const auto& f : mesh.faces) {
    if (!inside(mesh.vertices[f[0]]) || !inside(mesh.vertices[f[1]]) ||
        !inside(mesh.vertices[f[2]]))
      continue;
    std::array<int, 3> nf{};
    for (int k = 0; k < 3; ++k) {
      if (remap[f[k]] == -1) {
        remap[f[k]] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[f[k]]);
      }
      nf[k] = remap[f[k]];
    }
    out.faces.push_back(nf);
  }
  return out;
}

void write_obj(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("write_obj: cannot open " + path);
  char line[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(line, sizeof line, "v %.17g %.17g %.17g\n", v[0], v[1],
                  v[2]);
    f << line;
  }
  for (const auto& face : mesh.faces)
    f << "f " << face[0] + 1 << ' ' << face[1] + 1 << ' ' << face[2] + 1
      << '\n';
  if (!f) throw DataError("write_obj: write failed for " + path);
}

TriangleMesh read_obj(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("read_obj: cannot open " + path);
  TriangleMesh mesh;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      std::array<double, 3> v{};
      if (!(ss >> v[0] >> v[1] >> v[2]))
        throw DataError("read_obj: malformed vertex in " + path);
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> idx{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        if (!(ss >> tok)) throw DataError("read_obj: malformed face in " + path);
        idx[k] = std::stoi(tok) - 1;  // ignores /texture/normal suffixes
        if (idx[k] < 0 || idx[k] >= static_cast<int>(mesh.vertices.size()))
          throw DataError("read_obj: face index out of range in " + path);
      }
      std::string extra;
      if (ss >> extra)
        throw DataError("read_obj: only triangle faces supported in " + path);
      mesh.faces.push_back(idx);
    }
  }
  return mesh;
}

}  // namespace headsdf
