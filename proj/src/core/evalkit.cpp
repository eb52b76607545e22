#include "core/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "json.hpp"

namespace headsdf {

namespace {

double face_area(const TriangleMesh& m, const std::array<int, 3>& f) {
  const auto &a = m.vertices[f[0]], &b = m.vertices[f[1]],
             &c = m.vertices[f[2]];
  const double u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const double v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const double n[3] = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                       u[0] * v[1] - u[1] * v[0]};
  return 0.5 * std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
}

double sq_dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

// Uniform hash grid over the target cloud for exact nearest-neighbor queries:
// rings of cells are visited outward until no unvisited cell can beat the
// best hit. Results match a full scan exactly because every candidate uses
// the same sq_dist and min() over a superset that contains the true nearest.
class NeighborGrid {
 public:
  explicit NeighborGrid(const std::vector<std::array<double, 3>>& pts)
      : pts_(pts) {
    for (int k = 0; k < 3; ++k) {
      lo_[k] = std::numeric_limits<double>::infinity();
      hi_[k] = -std::numeric_limits<double>::infinity();
    }
    for (const auto& p : pts)
      for (int k = 0; k < 3; ++k) {
        lo_[k] = std::min(lo_[k], p[k]);
        hi_[k] = std::max(hi_[k], p[k]);
      }
    double extent = 0.0;
    for (int k = 0; k < 3; ++k) extent = std::max(extent, hi_[k] - lo_[k]);
    const double cells = std::cbrt(static_cast<double>(pts.size()));
    h_ = std::max(extent / std::max(cells, 1.0), 1e-12);
    for (size_t i = 0; i < pts.size(); ++i) {
      const std::array<int, 3> c = cell_of(pts[i]);
      for (int k = 0; k < 3; ++k) max_cell_[k] = std::max(max_cell_[k], c[k]);
      cells_[key(c)].push_back(static_cast<int>(i));
    }
  }

  double nearest_sq(const std::array<double, 3>& q) const {
    // Clamp the query cell into the occupied range. A clamped axis only
    // increases real distances, so the ring lower bound below still holds,
    // and it keeps cell indices finite for far-away queries.
    std::array<int, 3> c0 = cell_of(q);
    int max_ring = 0;
    for (int k = 0; k < 3; ++k) {
      c0[k] = std::clamp(c0[k], 0, max_cell_[k]);
      max_ring = std::max({max_ring, c0[k], max_cell_[k] - c0[k]});
    }
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r <= max_ring; ++r) {
      // Any point in a cell at Chebyshev ring r spans at least r-1 whole
      // cells along some axis, so it is at least (r-1)*h away.
      if (r >= 2) {
        const double bound = (r - 1) * h_;
        if (bound * bound > best) break;
      }
      for (int dx = -r; dx <= r; ++dx)
        for (int dy = -r; dy <= r; ++dy)
          for (int dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r)
              continue;
            const auto it =
                cells_.find(key({c0[0] + dx, c0[1] + dy, c0[2] + dz}));
            if (it == cells_.end()) continue;
            for (int idx : it->second)
              best = std::min(best, sq_dist(q, pts_[idx]));
          }
    }
    // Ring max_ring covers every occupied cell, so best is always a real hit.
    return best;
  }

 private:
  std::array<int, 3> cell_of(const std::array<double, 3>& p) const {
    std::array<int, 3> c;
    for (int k = 0; k < 3; ++k) {
      // Clamp before the int cast: far-away queries with a tiny cell size
      // would otherwise overflow. Queries get clamped to the occupied range
      // again in nearest_sq; insertions are always in range.
      const double f = std::floor((p[k] - lo_[k]) / h_);
      c[k] = static_cast<int>(std::clamp(f, -1.0e9, 1.0e9));
    }
    return c;
  }
  static int64_t key(const std::array<int, 3>& c) {
    const int64_t B = 1 << 20;
    return (static_cast<int64_t>(c[0] + (B >> 1)) * B +
            (c[1] + (B >> 1))) * B + (c[2] + (B >> 1));
  }

  const std::vector<std::array<double, 3>>& pts_;
  std::array<double, 3> lo_{}, hi_{};
  std::array<int, 3> max_cell_{0, 0, 0};
  double h_ = 1.0;
  std::unordered_map<int64_t, std::vector<int>> cells_;
};

double directed_mean_sq(const PointCloud& from, const NeighborGrid& grid) {
  double acc = 0.0;
  for (const auto& p : from.points) acc += grid.nearest_sq(p);
  return acc / static_cast<double>(from.points.size());
}

}  // namespace

PointCloud sample_surface_points(const TriangleMesh& mesh, int n, Rng& rng) {
  if (mesh.faces.empty())
    throw UsageError("sample_surface_points: empty mesh");
  if (n < 0) throw UsageError("sample_surface_points: negative sample count");
  PointCloud cloud;
  if (n == 0) return cloud;

  std::vector<double> cum(mesh.faces.size());
  double total = 0.0;
  for (size_t i = 0; i < mesh.faces.size(); ++i) {
    total += face_area(mesh, mesh.faces[i]);
    cum[i] = total;
  }
  if (!(total > 0.0))
    throw UsageError("sample_surface_points: mesh has zero total area");

  cloud.points.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(0.0, total);
    const size_t fi =
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    const auto& f = mesh.faces[std::min(fi, mesh.faces.size() - 1)];
    double a = rng.uniform(), b = rng.uniform();
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    const auto &p0 = mesh.vertices[f[0]], &p1 = mesh.vertices[f[1]],
               &p2 = mesh.vertices[f[2]];
    cloud.points.push_back({p0[0] + a * (p1[0] - p0[0]) + b * (p2[0] - p0[0]),
                            p0[1] + a * (p1[1] - p0[1]) + b * (p2[1] - p0[1]),
                            p0[2] + a * (p1[2] - p0[2]) + b * (p2[2] - p0[2])});
  }
  return cloud;
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.points.empty() || b.points.empty())
    throw UsageError("chamfer_distance: empty point cloud");
  const NeighborGrid ga(a.points), gb(b.points);
  return directed_mean_sq(a, gb) + directed_mean_sq(b, ga);
}

double chamfer_distance_brute(const PointCloud& a, const PointCloud& b) {
  if (a.points.empty() || b.points.empty())
    throw UsageError("chamfer_distance: empty point cloud");
  auto directed = [](const PointCloud& from, const PointCloud& to) {
    double acc = 0.0;
    for (const auto& p : from.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to.points) best = std::min(best, sq_dist(p, q));
      acc += best;
    }
    return acc / static_cast<double>(from.points.size());
  };
  return directed(a, b) + directed(b, a);
}

double psnr(const Tensor& img, const Tensor& gt, const Tensor* mask) {
  if (!img.same_shape(gt) || img.cols() != 3)
    throw UsageError("psnr: images must both be [N,3]");
  if (mask && (mask->rows() != img.rows() || mask->cols() != 1))
    throw UsageError("psnr: mask must be [N,1]");

  double acc = 0.0;
  int64_t kept = 0;
  for (int64_t i = 0; i < img.rows(); ++i) {
    if (mask && mask->data[i] == 0.0) continue;
    ++kept;
    for (int k = 0; k < 3; ++k) {
      const double d = img.at(i, k) - gt.at(i, k);
      acc += d * d;
    }
  }
  if (kept == 0) throw UsageError("psnr: mask selects no pixels");
  const double mse = acc / static_cast<double>(3 * kept);
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

Tensor color_transfer_render(const HeadModel& model,
                             const std::string& geometry_id,
                             const std::string& color_id, const Camera& cam,
                             const RenderOptions& opt, Rng& rng) {
  if (model.stage() != HeadModel::kStageTwo)
    throw UsageError("color_transfer_render: needs a stage-2 model");
  if (!model.has_identity(geometry_id) || !model.has_identity(color_id))
    throw UsageError("color_transfer_render: unknown identity");
  RenderOptions topt = opt;
  topt.color_identity = color_id;
  return render_image(model, geometry_id, cam, topt, rng);
}

MetricsReport aggregate_metrics(std::vector<IdentityMetrics> rows) {
  MetricsReport report;
  report.aggregate.identity = "aggregate";
  for (const auto& r : rows) {
    report.aggregate.views += r.views;
    report.aggregate.chamfer += r.chamfer;
    report.aggregate.psnr_train += r.psnr_train;
    report.aggregate.psnr_novel += r.psnr_novel;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    report.aggregate.chamfer /= n;
    report.aggregate.psnr_train /= n;
    report.aggregate.psnr_novel /= n;
  }
  report.rows = std::move(rows);
  return report;
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  auto row_json = [](const IdentityMetrics& m) {
    return nlohmann::json{{"identity", m.identity},
                          {"views", m.views},
                          {"cd", m.chamfer},
                          {"psnr_train", m.psnr_train},
                          {"psnr_novel", m.psnr_novel}};
  };
  for (const auto& r : report.rows) rows.push_back(row_json(r));
  nlohmann::json doc{{"identities", rows},
                     {"aggregate", row_json(report.aggregate)}};
  return doc.dump(2);
}

TriangleMesh extract_identity_mesh(const HeadModel& model,
                                   const std::string& identity,
                                   int resolution) {
  if (resolution < 2) {
    throw UsageError("evaluation: mesh resolution must be at least 2");
  }
  if (!model.has_identity(identity)) {
    throw UsageError("evaluation: model has no identity \"" + identity + "\"");
  }
  auto& store = const_cast<HeadModel&>(model).params;
  FieldFn field = [&](const Tensor& pts) {
    Tape tape;
    NoGradGuard quiet(tape);
    ParamBinding binding(tape, store, /*frozen_all=*/true);
    Var x = tape.constant(pts);
    FieldEval fe = eval_fields(binding, model, identity, x, {});
    return fe.s_hat.val();
  };
  VoxelGrid grid = sample_grid(field, resolution, resolution, resolution,
                               {-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});
  TriangleMesh mesh = marching_cubes(grid);
  if (mesh.no_crossing) {
    throw NumericError("evaluation: the distance field of \"" + identity +
                       "\" has no zero level set inside the unit cube");
  }
  return mesh;
}

IdentityMetrics evaluate_identity(const HeadModel& model,
                                  const IdentityEntry& entry,
                                  const Config& cfg) {
  IdentityMetrics m;
  m.identity = entry.id;
  m.views = static_cast<int>(entry.views.size());

  TriangleMesh learned =
      extract_identity_mesh(model, entry.id, cfg.eval.mesh_resolution);
  if (entry.gt_mesh_path.empty()) {
    throw DataError("evaluation: no reference mesh listed for \"" + entry.id +
                    "\"");
  }
  TriangleMesh reference = read_obj(entry.gt_mesh_path);
  Rng learned_rng(9001);
  Rng reference_rng(9002);
  PointCloud learned_pts =
      sample_surface_points(learned, cfg.eval.surface_samples, learned_rng);
  PointCloud reference_pts = sample_surface_points(
      reference, cfg.eval.chamfer_points, reference_rng);
  m.chamfer = chamfer_distance(learned_pts, reference_pts);

  RenderOptions opt;
  opt.n_coarse = cfg.render.n_coarse;
  opt.n_fine = cfg.render.n_fine;
  opt.scene_radius = cfg.render.scene_radius;
  opt.background = cfg.render.background;
  opt.jitter = false;
  int train_views = cfg.train.views_per_identity;
  const int total = static_cast<int>(entry.views.size());
  if (train_views <= 0 || train_views > total) train_views = total;
  double train_sum = 0.0, novel_sum = 0.0;
  int novel_count = total - train_views;
  for (int v = 0; v < total; ++v) {
    Rng view_rng(0);  // jitter is off, so this stream is never consulted
    Tensor image =
        render_image(model, entry.id, entry.views[v].camera, opt, view_rng);
    Tensor truth = load_view_image(entry.views[v]);
    const double value = psnr(image, truth);
    if (v < train_views) {
      train_sum += value;
    } else {
      novel_sum += value;
    }
  }
  m.psnr_train = train_views > 0 ? train_sum / train_views : 0.0;
  m.psnr_novel = novel_count > 0 ? novel_sum / novel_count : 0.0;
  return m;
}

MetricsReport evaluate_identities(const HeadModel& model,
                                  const DatasetManifest& manifest,
                                  const std::vector<std::string>& identities,
                                  const Config& cfg) {
  std::vector<std::string> list = identities;
  if (list.empty()) {
    for (const auto& entry : manifest.identities) {
      if (model.has_identity(entry.id)) list.push_back(entry.id);
    }
    if (list.empty()) {
      throw UsageError(
          "evaluation: the model knows none of the dataset identities");
    }
  }
  std::vector<IdentityMetrics> rows;
  rows.reserve(list.size());
  for (const auto& id : list) {
    if (!model.has_identity(id)) {
      throw UsageError("evaluation: model has no identity \"" + id + "\"");
    }
    rows.push_back(evaluate_identity(model, manifest.identity(id), cfg));
  }
  return aggregate_metrics(std::move(rows));
}

}  // namespace headsdf
