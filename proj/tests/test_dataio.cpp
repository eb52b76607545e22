#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "core/dataio.hpp"
#include "core/meshing.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace headsdf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("headsdf_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::map<std::string, std::string> dir_contents(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    files[fs::relative(entry.path(), root).string()] = std::move(bytes);
  }
  return files;
}

Ray straight_ray(const std::array<double, 3>& origin,
                 const std::array<double, 3>& dir, double tfar) {
  Ray r;
  r.origin = origin;
  const double len =
      std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  r.dir = {dir[0] / len, dir[1] / len, dir[2] / len};
  r.tnear = 0.0;
  r.tfar = tfar;
  r.hits = true;
  return r;
}

// Minimal single-view manifest writer for the failure-path tests. The caller
// mutates the returned JSON before saving.
nlohmann::json base_manifest() {
  nlohmann::json view;
  view["image"] = "img.png";
  view["K"] = {4.0, 0.0, 2.0, 0.0, 4.0, 2.0, 0.0, 0.0, 1.0};
  view["cam2world"] = {1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
                       0.0, 0.0, 1.0, -2.2, 0.0, 0.0, 0.0, 1.0};
  nlohmann::json doc;
  doc["identities"] = {{{"id", "a"}, {"views", {view}}}};
  return doc;
}

void save_manifest(const fs::path& dir, const nlohmann::json& doc) {
  std::ofstream out(dir / "manifest.json");
  out << doc.dump(2);
}

std::string load_error(const fs::path& dir) {
  try {
    load_dataset((dir / "manifest.json").string());
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("sphere tracing lands on the surface or reports a miss") {
  const ScalarField unit_sphere = [](const std::array<double, 3>& p) {
    return std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) - 1.0;
  };

  const TraceResult hit =
      sphere_trace(unit_sphere, straight_ray({0, 0, 3}, {0, 0, -1}, 6.0), 64,
                   1e-9);
  REQUIRE(hit.hit);
  CHECK(hit.point[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(hit.point[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(hit.point[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hit.t == doctest::Approx(2.0).epsilon(1e-12));

  const TraceResult miss =
      sphere_trace(unit_sphere, straight_ray({0, 2, 3}, {0, 0, -1}, 6.0), 64,
                   1e-9);
  CHECK(!miss.hit);

  Ray clipped = straight_ray({0, 0, 3}, {0, 0, -1}, 6.0);
  clipped.hits = false;
  CHECK(!sphere_trace(unit_sphere, clipped, 64, 1e-9).hit);

  CHECK_THROWS_AS(
      sphere_trace(unit_sphere, straight_ray({0, 0, 3}, {0, 0, -1}, 6.0), 0,
                   1e-9),
      UsageError);

  // Residual oracle on a bumpy analytic scene: every reported hit point must
  // re-evaluate to |field| < eps.
  const SceneSpec spec = SceneSpec::sample(1, 7);
  const IdentityScene& ident = spec.identities[0];
  const ScalarField field = [&](const std::array<double, 3>& p) {
    return scene_sdf(spec, ident, p);
  };
  Rng rng(123);
  const double eps = 1e-7;
  int hits = 0;
  for (int i = 0; i < 10000; ++i) {
    // Origins on a sphere of radius 3 aimed at a point near the head.
    const double u = rng.uniform(-1.0, 1.0);
    const double az = rng.uniform(0.0, 2.0 * M_PI);
    const double s = std::sqrt(std::max(0.0, 1.0 - u * u));
    const std::array<double, 3> origin = {3.0 * s * std::cos(az), 3.0 * u,
                                          3.0 * s * std::sin(az)};
    const std::array<double, 3> target = {rng.uniform(-0.3, 0.3),
                                          rng.uniform(-0.3, 0.3),
                                          rng.uniform(-0.3, 0.3)};
    const TraceResult tr = sphere_trace(
        field,
        straight_ray(origin,
                     {target[0] - origin[0], target[1] - origin[1],
                      target[2] - origin[2]},
                     8.0),
        512, eps);
    if (!tr.hit) continue;
    ++hits;
    CHECK(std::abs(field(tr.point)) < eps);
  }
  CHECK(hits > 9000);  // aimed near the center, almost everything connects
}

TEST_CASE("analytic scenes respect their stated bounds") {
  const SceneSpec spec = SceneSpec::sample(3, 11);
  spec.validate();
  const double minr =
      std::min({spec.base_radii[0], spec.base_radii[1], spec.base_radii[2]});
  Rng rng(5);
  for (const auto& ident : spec.identities) {
    CHECK(ident.bump_amplitude < 0.2 * minr);
    // Field stays 1-Lipschitz along random segments (sphere-trace safety).
    for (int i = 0; i < 200; ++i) {
      std::array<double, 3> p, q;
      for (int k = 0; k < 3; ++k) {
        p[k] = rng.uniform(-1.2, 1.2);
        q[k] = p[k] + rng.uniform(-0.2, 0.2);
      }
      const double dp = scene_sdf(spec, ident, p);
      const double dq = scene_sdf(spec, ident, q);
      const double step = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) +
                                    (p[1] - q[1]) * (p[1] - q[1]) +
                                    (p[2] - q[2]) * (p[2] - q[2]));
      CHECK(std::abs(dp - dq) <= step * (1.0 + 1e-12) + 1e-12);
    }
    // Albedo stays a valid color everywhere.
    for (int i = 0; i < 100; ++i) {
      const std::array<double, 3> p = {rng.uniform(-1, 1), rng.uniform(-1, 1),
                                       rng.uniform(-1, 1)};
      for (double c : scene_albedo(ident, p)) {
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
      }
    }
  }

  SceneSpec bad = spec;
  bad.identities[0].bump_amplitude = 0.5 * minr;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  SceneSpec dup = spec;
  dup.identities[1].id = dup.identities[0].id;
  CHECK_THROWS_AS(dup.validate(), UsageError);
}

TEST_CASE("png and float images round-trip through disk") {
  const fs::path dir = fresh_dir("imageio");
  const int w = 5, h = 3;
  Tensor img = Tensor::zeros(w * h, 3);
  // Exact byte levels must survive the quantize/decode round trip exactly.
  for (int64_t i = 0; i < img.rows(); ++i)
    for (int k = 0; k < 3; ++k)
      img.at(i, k) = static_cast<double>((7 * i + 3 * k) % 256) / 255.0;

  const std::string png = (dir / "a.png").string();
  write_png(png, img, w, h);
  int rw = 0, rh = 0;
  const Tensor back = read_png(png, &rw, &rh);
  CHECK(rw == w);
  CHECK(rh == h);
  REQUIRE(back.same_shape(img));
  for (int64_t i = 0; i < img.size(); ++i) CHECK(back.data[i] == img.data[i]);

  int pw = 0, ph = 0;
  png_dimensions(png, &pw, &ph);
  CHECK(pw == w);
  CHECK(ph == h);

  // Arbitrary colors land within half a quantization step.
  Rng rng(3);
  Tensor noisy = Tensor::zeros(w * h, 3);
  for (auto& v : noisy.data) v = rng.uniform(0.0, 1.0);
  const std::string png2 = (dir / "b.png").string();
  write_png(png2, noisy, w, h);
  const Tensor noisy_back = read_png(png2);
  for (int64_t i = 0; i < noisy.size(); ++i)
    CHECK(std::abs(noisy_back.data[i] - noisy.data[i]) <= 0.5 / 255.0 + 1e-12);

  // The raw float format is exact.
  const std::string flt = (dir / "a.f64").string();
  write_float_image(flt, noisy, w, h);
  int fw = 0, fh = 0;
  const Tensor fback = read_float_image(flt, &fw, &fh);
  CHECK(fw == w);
  CHECK(fh == h);
  for (int64_t i = 0; i < noisy.size(); ++i)
    CHECK(fback.data[i] == noisy.data[i]);

  CHECK_THROWS_AS(write_png(png, img, w + 1, h), UsageError);
  CHECK_THROWS_AS(read_png((dir / "missing.png").string()), DataError);
  CHECK_THROWS_AS(png_dimensions(flt, &pw, &ph), DataError);
  CHECK_THROWS_AS(read_float_image(png, &fw, &fh), DataError);
  fs::remove_all(dir);
}

TEST_CASE("config json honors defaults and rejects unknown keys") {
  const Config defaults = parse_config("{}");
  const Config reference;
  CHECK(defaults.seed == reference.seed);
  CHECK(defaults.model.hidden == reference.model.hidden);
  CHECK(defaults.train.lr0 == reference.train.lr0);
  CHECK(defaults.eval.mesh_resolution == reference.eval.mesh_resolution);

  Config tweaked;
  tweaked.seed = 42;
  tweaked.model.hidden = 32;
  tweaked.model.code_dim = 16;
  tweaked.model.pe_displacement = 5;
  tweaked.render.n_coarse = 24;
  tweaked.render.background = {0.1, 0.2, 0.3};
  tweaked.render.jitter_training = false;
  tweaked.train.rays_per_step = 256;
  tweaked.train.lr0 = 1e-3;
  tweaked.train.weights.color = 0.5;
  tweaked.train.weights.code = 0.002;
  tweaked.eval.chamfer_points = 1234;
  const Config round = parse_config(config_to_json(tweaked));
  CHECK(round.seed == 42);
  CHECK(round.model.hidden == 32);
  CHECK(round.model.code_dim == 16);
  CHECK(round.model.pe_displacement == 5);
  CHECK(round.render.n_coarse == 24);
  CHECK(round.render.background[2] == 0.3);
  CHECK(round.render.jitter_training == false);
  CHECK(round.train.rays_per_step == 256);
  CHECK(round.train.lr0 == 1e-3);
  CHECK(round.train.weights.color == 0.5);
  CHECK(round.train.weights.code == 0.002);
  CHECK(round.eval.chamfer_points == 1234);

  // Unknown keys are named in the error at every nesting level.
  try {
    parse_config(R"({"model": {"hidden": 32, "hiden": 64}})");
    FAIL("expected rejection");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("model.hiden") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(R"({"speed": 1})"), UsageError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"weights": {"colr": 1}}})"),
                  UsageError);

  // Type and value errors.
  CHECK_THROWS_AS(parse_config(R"({"train": {"lr0": "fast"}})"), UsageError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"hidden": 3.5}})"), UsageError);
  CHECK_THROWS_AS(parse_config(R"({"seed": -4})"), UsageError);
  CHECK_THROWS_AS(parse_config(R"({"render": {"n_coarse": 1}})"), UsageError);
  CHECK_THROWS_AS(parse_config(R"({"render": {"background": [1, 2]}})"),
                  UsageError);
  CHECK_THROWS_AS(parse_config("not json"), UsageError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), DataError);
}

TEST_CASE("synthetic datasets are complete, deterministic, and loadable") {
  const fs::path dir_a = fresh_dir("synth_a");
  const fs::path dir_b = fresh_dir("synth_b");
  SceneSpec spec = SceneSpec::sample(3, 99);
  spec.write_float_images = true;

  const std::string manifest_a =
      generate_synthetic(spec, 3, 8, 64, 99, dir_a.string());
  generate_synthetic(spec, 3, 8, 64, 99, dir_b.string());

  // Counting: 24 images (+ float copies), 3 meshes, one manifest.
  int pngs = 0, floats = 0, objs = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_a)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".png") ++pngs;
    if (ext == ".f64") ++floats;
    if (ext == ".obj") ++objs;
  }
  CHECK(pngs == 24);
  CHECK(floats == 24);
  CHECK(objs == 3);
  CHECK(fs::exists(dir_a / "manifest.json"));

  // Same inputs, same bytes, file for file.
  const auto files_a = dir_contents(dir_a);
  const auto files_b = dir_contents(dir_b);
  REQUIRE(files_a.size() == files_b.size());
  for (const auto& [rel, bytes] : files_a) {
    REQUIRE(files_b.count(rel) == 1);
    CHECK(files_b.at(rel) == bytes);
  }

  // Ground-truth meshes sit on the analytic zero level set: every vertex
  // re-evaluates to less than one voxel of signed distance.
  const double voxel = 2.0 / (spec.gt_mesh_resolution - 1);
  for (const auto& ident : spec.identities) {
    const TriangleMesh mesh =
        read_obj((dir_a / "meshes" / (ident.id + ".obj")).string());
    REQUIRE(!mesh.vertices.empty());
    double worst = 0.0;
    for (const auto& v : mesh.vertices)
      worst = std::max(worst, std::abs(scene_sdf(spec, ident, v)));
    CHECK(worst < voxel);
  }

  // The manifest loads and matches what was generated.
  const DatasetManifest manifest = load_dataset(manifest_a);
  REQUIRE(manifest.identities.size() == 3);
  CHECK(manifest.identity_ids() ==
        std::vector<std::string>{"id00", "id01", "id02"});
  for (const auto& entry : manifest.identities) {
    CHECK(entry.views.size() == 8);
    CHECK(!entry.gt_mesh_path.empty());
    CHECK(fs::exists(entry.gt_mesh_path));
    for (const auto& view : entry.views) {
      CHECK(view.camera.width == 64);
      CHECK(view.camera.height == 64);
      const Tensor img = load_view_image(view);
      CHECK(img.rows() == 64 * 64);
      for (double v : img.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
  CHECK_THROWS_AS(manifest.identity("nobody"), DataError);

  // Quantized PNG and exact float image describe the same picture.
  {
    const ViewEntry& view = manifest.identities[0].views[0];
    const Tensor png = load_view_image(view);
    const std::string flt =
        view.image_path.substr(0, view.image_path.size() - 4) + ".f64";
    const Tensor exact = read_float_image(flt);
    REQUIRE(png.same_shape(exact));
    for (int64_t i = 0; i < png.size(); ++i)
      CHECK(std::abs(png.data[i] - exact.data[i]) <= 0.5 / 255.0 + 1e-12);
  }

  // Convention agreement: sphere-traced hit points reproject onto the very
  // pixel whose ray produced them, well within half a pixel.
  {
    const IdentityScene& ident = spec.identities[0];
    const ViewEntry& view = manifest.identities[0].views[3];
    const Camera& cam = view.camera;
    const std::vector<Ray> rays = generate_rays(cam, spec.scene_radius);
    const ScalarField field = [&](const std::array<double, 3>& p) {
      return scene_sdf(spec, ident, p);
    };
    int traced = 0;
    double worst_px = 0.0;
    for (int row = 0; row < cam.height; ++row)
      for (int col = 0; col < cam.width; ++col) {
        const Ray& ray = rays[row * cam.width + col];
        const TraceResult tr = sphere_trace(field, ray, 512, 1e-7);
        if (!tr.hit) continue;
        ++traced;
        const auto& M = cam.cam2world;
        const double px = tr.point[0] - M[3], py = tr.point[1] - M[7],
                     pz = tr.point[2] - M[11];
        // Rotation transpose maps world back into camera coordinates.
        const double xc = M[0] * px + M[4] * py + M[8] * pz;
        const double yc = M[1] * px + M[5] * py + M[9] * pz;
        const double zc = M[2] * px + M[6] * py + M[10] * pz;
        REQUIRE(zc > 0.0);
        const double u = (cam.K[0] * xc + cam.K[1] * yc) / zc + cam.K[2];
        const double v = cam.K[4] * yc / zc + cam.K[5];
        worst_px = std::max({worst_px, std::abs(u - (col + 0.5)),
                             std::abs(v - (row + 0.5))});
      }
    CHECK(traced > 200);  // the head occupies a real share of a 64x64 frame
    CHECK(worst_px < 0.5);
  }

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("manifest loading rejects broken inputs with the path in the story") {
  const fs::path dir = fresh_dir("manifests");
  Tensor px = Tensor::zeros(4 * 4, 3);
  write_png((dir / "img.png").string(), px, 4, 4);
  Tensor other = Tensor::zeros(6 * 6, 3);
  write_png((dir / "other.png").string(), other, 6, 6);

  // The healthy baseline loads, and its rotation comes back orthonormalized.
  save_manifest(dir, base_manifest());
  const DatasetManifest ok = load_dataset((dir / "manifest.json").string());
  REQUIRE(ok.identities.size() == 1);
  CHECK(ok.identities[0].views.size() == 1);

  // A rotation off by ~1e-10 is accepted and snapped back to orthonormal.
  {
    nlohmann::json doc = base_manifest();
    doc["identities"][0]["views"][0]["cam2world"][0] = 1.0 + 1e-10;
    save_manifest(dir, doc);
    const DatasetManifest snapped =
        load_dataset((dir / "manifest.json").string());
    const auto& M = snapped.identities[0].views[0].camera.cam2world;
    const std::array<double, 9> R = {M[0], M[1], M[2], M[4], M[5],
                                     M[6], M[8], M[9], M[10]};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += R[3 * k + i] * R[3 * k + j];
        CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-12);
      }
  }

  // Mirrored frame: determinant -1.
  {
    nlohmann::json doc = base_manifest();
    doc["identities"][0]["views"][0]["cam2world"][10] = -1.0;
    save_manifest(dir, doc);
    CHECK(load_error(dir).find("determinant") != std::string::npos);
  }

  // Rotation bent far beyond the snap tolerance.
  {
    nlohmann::json doc = base_manifest();
    doc["identities"][0]["views"][0]["cam2world"][1] = 1e-3;
    save_manifest(dir, doc);
    CHECK(load_error(dir).find("orthonormal") != std::string::npos);
  }

  // Missing image: the error names the offending path.
  {
    nlohmann::json doc = base_manifest();
    doc["identities"][0]["views"][0]["image"] = "gone.png";
    save_manifest(dir, doc);
    CHECK(load_error(dir).find("gone.png") != std::string::npos);
  }

  // Mixed image sizes within one identity.
  {
    nlohmann::json doc = base_manifest();
    nlohmann::json second = doc["identities"][0]["views"][0];
    second["image"] = "other.png";
    doc["identities"][0]["views"].push_back(second);
    save_manifest(dir, doc);
    CHECK(load_error(dir).find("dimensions") != std::string::npos);
  }

  // Duplicate identities, unknown keys, malformed matrices.
  {
    nlohmann::json doc = base_manifest();
    doc["identities"].push_back(doc["identities"][0]);
    save_manifest(dir, doc);
    CHECK(load_error(dir).find("duplicate") != std::string::npos);
  }
  {
    nlohmann::json doc = base_manifest();
    doc["identities"][0]["nickname"] = "al";
    save_manifest(dir, doc);
    CHECK(load_error(dir).find("nickname") != std::string::npos);
  }
  {
    nlohmann::json doc = base_manifest();
    doc["identities"][0]["views"][0]["K"] = {1.0, 2.0};
    save_manifest(dir, doc);
    CHECK(load_error(dir).find("K") != std::string::npos);
  }

  // A manifest that is not there at all.
  CHECK_THROWS_AS(load_dataset((dir / "absent.json").string()), DataError);

  fs::remove_all(dir);
}
