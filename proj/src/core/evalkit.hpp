#pragma once

#include <array>
#include <string>
#include <vector>

#include "core/dataio.hpp"
#include "core/meshing.hpp"
#include "core/renderer.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace headsdf {

struct PointCloud {
  std::vector<std::array<double, 3>> points;
};

// Area-weighted uniform surface samples (per-face barycentric draws).
PointCloud sample_surface_points(const TriangleMesh& mesh, int n, Rng& rng);

// Symmetric Chamfer distance: mean squared nearest-neighbor distance from A
// to B plus the reverse term. Grid-accelerated, exactly equal to brute force.
double chamfer_distance(const PointCloud& a, const PointCloud& b);
double chamfer_distance_brute(const PointCloud& a, const PointCloud& b);

// 10*log10(1/MSE) over all channels of the masked pixels; images are [N,3]
// in [0,1]. mask, when given, is [N,1] with nonzero = keep. Capped at 99 dB.
double psnr(const Tensor& img, const Tensor& gt, const Tensor* mask = nullptr);

// Renders geometry_id's shape with color_id's appearance code. Geometry is
// structurally unchanged: the color code never enters the distance fields.
Tensor color_transfer_render(const HeadModel& model,
                             const std::string& geometry_id,
                             const std::string& color_id, const Camera& cam,
                             const RenderOptions& opt, Rng& rng);

struct IdentityMetrics {
  std::string identity;
  int views = 0;
  double chamfer = 0.0;
  double psnr_train = 0.0;
  double psnr_novel = 0.0;
};

struct MetricsReport {
  std::vector<IdentityMetrics> rows;
  IdentityMetrics aggregate;  // identity = "aggregate", means over rows
};

MetricsReport aggregate_metrics(std::vector<IdentityMetrics> rows);
std::string metrics_to_json(const MetricsReport& report);

// Zero level set of one identity's refined distance field, extracted on a
// resolution^3 grid spanning [-1,1]^3. Throws NumericError when the field has
// no sign change anywhere in the volume.
TriangleMesh extract_identity_mesh(const HeadModel& model,
                                   const std::string& identity,
                                   int resolution);

// Metrics for one identity against its dataset entry: chamfer distance
// between the extracted surface and the reference mesh, plus mean PSNR over
// the entry's views. The first cfg.train.views_per_identity views count as
// training views (all of them when that knob is 0); any remaining views are
// held out and averaged into psnr_novel, which stays 0 when nothing is held
// out.
IdentityMetrics evaluate_identity(const HeadModel& model,
                                  const IdentityEntry& entry,
                                  const Config& cfg);

// evaluate_identity over several identities plus the aggregate row. An empty
// identity list means every manifest identity the model knows.
MetricsReport evaluate_identities(const HeadModel& model,
                                  const DatasetManifest& manifest,
                                  const std::vector<std::string>& identities,
                                  const Config& cfg);

}  // namespace headsdf
