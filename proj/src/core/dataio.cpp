#include "core/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "core/meshing.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace headsdf {

namespace {

constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Small 3x3 helpers for the rotation checks.
// ---------------------------------------------------------------------------

double det3(const std::array<double, 9>& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

// Cofactor matrix (not transposed), so inv(M)^T = cof(M) / det(M).
std::array<double, 9> cof3(const std::array<double, 9>& m) {
  return {m[4] * m[8] - m[5] * m[7], -(m[3] * m[8] - m[5] * m[6]),
          m[3] * m[7] - m[4] * m[6], -(m[1] * m[8] - m[2] * m[7]),
          m[0] * m[8] - m[2] * m[6], -(m[0] * m[7] - m[1] * m[6]),
          m[1] * m[5] - m[2] * m[4], -(m[0] * m[5] - m[2] * m[3]),
          m[0] * m[4] - m[1] * m[3]};
}

// Nearest rotation by the polar-decomposition iteration X <- (X + X^-T)/2.
// Requires det > 0; mirrored frames have no nearby rotation at all.
std::array<double, 9> nearest_rotation(const std::array<double, 9>& r,
                                       double* max_diff) {
  std::array<double, 9> x = r;
  for (int iter = 0; iter < 50; ++iter) {
    const double d = det3(x);
    if (!(d > 1e-12)) break;  // stop; caller sees a big diff and rejects
    const std::array<double, 9> c = cof3(x);
    double step = 0.0;
    for (int i = 0; i < 9; ++i) {
      const double next = 0.5 * (x[i] + c[i] / d);
      step = std::max(step, std::abs(next - x[i]));
      x[i] = next;
    }
    if (step < 1e-15) break;
  }
  double diff = 0.0;
  for (int i = 0; i < 9; ++i) diff = std::max(diff, std::abs(x[i] - r[i]));
  *max_diff = diff;
  return x;
}

// ---------------------------------------------------------------------------
// JSON helpers shared by the config and manifest readers. Config problems are
// usage errors (ours to fix), manifest problems are data errors.
// ---------------------------------------------------------------------------

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

[[noreturn]] void fail(bool data_error, const std::string& msg) {
  if (data_error) throw DataError(msg);
  throw UsageError(msg);
}

void check_keys(const Json& obj, const std::string& where,
                std::initializer_list<const char*> allowed, bool data_error,
                const std::string& what) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known)
      fail(data_error, what + ": unknown key \"" +
                           (where.empty() ? it.key() : where + "." + it.key()) +
                           "\"");
  }
}

double get_number(const Json& obj, const std::string& where, const char* key,
                  double dflt, bool data_error, const std::string& what) {
  if (!obj.contains(key)) return dflt;
  const Json& v = obj.at(key);
  if (!v.is_number())
    fail(data_error, what + ": \"" + where + key + "\" must be a number");
  return v.get<double>();
}

int get_int(const Json& obj, const std::string& where, const char* key,
            int dflt) {
  if (!obj.contains(key)) return dflt;
  const Json& v = obj.at(key);
  if (!v.is_number_integer())
    throw UsageError("config: \"" + where + key + "\" must be an integer");
  return v.get<int>();
}

bool get_bool(const Json& obj, const std::string& where, const char* key,
              bool dflt) {
  if (!obj.contains(key)) return dflt;
  const Json& v = obj.at(key);
  if (!v.is_boolean())
    throw UsageError("config: \"" + where + key + "\" must be a boolean");
  return v.get<bool>();
}

std::array<double, 3> get_vec3(const Json& obj, const std::string& where,
                               const char* key,
                               const std::array<double, 3>& dflt) {
  if (!obj.contains(key)) return dflt;
  const Json& v = obj.at(key);
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() ||
      !v[1].is_number() || !v[2].is_number())
    throw UsageError("config: \"" + where + key +
                     "\" must be an array of three numbers");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

std::array<double, 3> ray_point(const Ray& ray, double t) {
  return {ray.origin[0] + t * ray.dir[0], ray.origin[1] + t * ray.dir[1],
          ray.origin[2] + t * ray.dir[2]};
}

// ---------------------------------------------------------------------------
// Analytic scene internals.
// ---------------------------------------------------------------------------

// 1-Lipschitz ellipsoid bound: scaled level of the normalized radius. Zero on
// the surface, negative inside, and never larger than the true distance.
double ellipsoid_bound(const std::array<double, 3>& q,
                       const std::array<double, 3>& radii) {
  const double minr = std::min({radii[0], radii[1], radii[2]});
  const double a = q[0] / radii[0], b = q[1] / radii[1], c = q[2] / radii[2];
  return (std::sqrt(a * a + b * b + c * c) - 1.0) * minr;
}

std::array<double, 3> warp_point(const IdentityScene& s,
                                 const std::array<double, 3>& p) {
  std::array<double, 3> q;
  for (int k = 0; k < 3; ++k)
    q[k] = p[k] + s.warp_amplitude[k] *
                      std::sin(s.warp_frequency[k] * p[(k + 1) % 3] +
                               s.warp_phase[k]);
  return q;
}

double bump_field(const IdentityScene& s, const std::array<double, 3>& p) {
  return s.bump_amplitude *
         std::sin(s.bump_frequency * p[0] + s.bump_phase[0]) *
         std::sin(s.bump_frequency * p[1] + s.bump_phase[1]) *
         std::sin(s.bump_frequency * p[2] + s.bump_phase[2]);
}

// Lipschitz bound of the raw field: the warp is a coordinate permutation of
// per-axis sinusoids (operator norm max_k amp*freq) and the bump gradient is
// bounded per axis by amp*freq.
double lipschitz_bound(const IdentityScene& s) {
  double warp = 0.0;
  for (int k = 0; k < 3; ++k)
    warp = std::max(warp, s.warp_amplitude[k] * s.warp_frequency[k]);
  const double bump =
      s.bump_amplitude * s.bump_frequency * std::sqrt(3.0);
  return 1.0 + warp + bump;
}

std::array<double, 3> scene_normal(const SceneSpec& spec,
                                   const IdentityScene& ident,
                                   const std::array<double, 3>& p) {
  const double h = 1e-4;
  std::array<double, 3> n;
  for (int k = 0; k < 3; ++k) {
    std::array<double, 3> hi = p, lo = p;
    hi[k] += h;
    lo[k] -= h;
    n[k] = scene_sdf(spec, ident, hi) - scene_sdf(spec, ident, lo);
  }
  const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
  if (len > 0.0)
    for (double& v : n) v /= len;
  return n;
}


std::string two_digit_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02d", prefix, i);
  return buf;
}

}  // namespace

Camera arc_camera(double az_deg, double el_deg, double dist, double focal,
                  int size) {
  const double az = az_deg * kPi / 180.0, el = el_deg * kPi / 180.0;
  const std::array<double, 3> eye = {dist * std::sin(az) * std::cos(el),
                                     dist * std::sin(el),
                                     -dist * std::cos(az) * std::cos(el)};
  std::array<double, 3> f = {-eye[0], -eye[1], -eye[2]};
  const double fl = std::sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2]);
  for (double& v : f) v /= fl;
  // Camera axes: x right, y down, z forward (matches ray generation).
  std::array<double, 3> r = {f[2], 0.0, -f[0]};  // cross((0,1,0), f)
  const double rl = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
  for (double& v : r) v /= rl;
  const std::array<double, 3> d = {f[1] * r[2] - f[2] * r[1],
                                   f[2] * r[0] - f[0] * r[2],
                                   f[0] * r[1] - f[1] * r[0]};
  Camera cam;
  cam.width = size;
  cam.height = size;
  const double c = size / 2.0;
  cam.K = {focal, 0.0, c, 0.0, focal, c, 0.0, 0.0, 1.0};
  cam.cam2world = {r[0], d[0], f[0], eye[0], r[1], d[1], f[1], eye[1],
                   r[2], d[2], f[2], eye[2], 0.0,  0.0,  0.0,  1.0};
  cam.validate();
  return cam;
}

// ---------------------------------------------------------------------------
// Images.
// ---------------------------------------------------------------------------

void write_png(const std::string& path, const Tensor& rgb, int width,
               int height) {
  if (width <= 0 || height <= 0 ||
      rgb.rows() != static_cast<int64_t>(width) * height || rgb.cols() != 3)
    throw UsageError("image: pixel tensor must be [width*height, 3]");
  cv::Mat m(height, width, CV_8UC3);
  for (int64_t i = 0; i < rgb.rows(); ++i) {
    auto* px = m.ptr<uint8_t>(static_cast<int>(i / width),
                              static_cast<int>(i % width));
    for (int k = 0; k < 3; ++k) {
      const double c = std::clamp(rgb.at(i, k), 0.0, 1.0);
      px[2 - k] = static_cast<uint8_t>(std::lround(255.0 * c));  // BGR order
    }
  }
  if (!cv::imwrite(path, m))
    throw DataError("image: cannot write " + path);
}

Tensor read_png(const std::string& path, int* width, int* height) {
  const cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw DataError("image: cannot decode " + path);
  Tensor rgb = Tensor::zeros(static_cast<int64_t>(m.rows) * m.cols, 3);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      const auto* px = m.ptr<uint8_t>(r, c);
      const int64_t i = static_cast<int64_t>(r) * m.cols + c;
      for (int k = 0; k < 3; ++k)
        rgb.at(i, k) = static_cast<double>(px[2 - k]) / 255.0;
    }
  if (width) *width = m.cols;
  if (height) *height = m.rows;
  return rgb;
}

void png_dimensions(const std::string& path, int* width, int* height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("image: missing file " + path);
  unsigned char head[24];
  in.read(reinterpret_cast<char*>(head), sizeof(head));
  static const unsigned char kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (in.gcount() != sizeof(head) || !std::equal(kSig, kSig + 8, head) ||
      head[12] != 'I' || head[13] != 'H' || head[14] != 'D' || head[15] != 'R')
    throw DataError("image: not a PNG file: " + path);
  auto be32 = [&](int off) {
    return (static_cast<uint32_t>(head[off]) << 24) |
           (static_cast<uint32_t>(head[off + 1]) << 16) |
           (static_cast<uint32_t>(head[off + 2]) << 8) |
           static_cast<uint32_t>(head[off + 3]);
  };
  if (width) *width = static_cast<int>(be32(16));
  if (height) *height = static_cast<int>(be32(20));
}

void write_float_image(const std::string& path, const Tensor& rgb, int width,
                       int height) {
  if (width <= 0 || height <= 0 ||
      rgb.rows() != static_cast<int64_t>(width) * height || rgb.cols() != 3)
    throw UsageError("image: pixel tensor must be [width*height, 3]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("image: cannot write " + path);
  out.write("HSF1", 4);
  const int64_t dims[3] = {height, width, 3};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(rgb.data.data()),
            static_cast<std::streamsize>(rgb.size() * sizeof(double)));
  if (!out) throw DataError("image: short write to " + path);
}

Tensor read_float_image(const std::string& path, int* width, int* height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("image: missing file " + path);
  char magic[4];
  int64_t dims[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::string(magic, 4) != "HSF1" || dims[0] <= 0 || dims[1] <= 0 ||
      dims[2] != 3)
    throw DataError("image: bad float-image header in " + path);
  Tensor rgb = Tensor::zeros(dims[0] * dims[1], 3);
  in.read(reinterpret_cast<char*>(rgb.data.data()),
          static_cast<std::streamsize>(rgb.size() * sizeof(double)));
  if (!in) throw DataError("image: truncated float image " + path);
  if (width) *width = static_cast<int>(dims[1]);
  if (height) *height = static_cast<int>(dims[0]);
  return rgb;
}

// ---------------------------------------------------------------------------
// Manifest.
// ---------------------------------------------------------------------------

const IdentityEntry& DatasetManifest::identity(const std::string& id) const {
  for (const auto& entry : identities)
    if (entry.id == id) return entry;
  throw DataError("dataset: unknown identity \"" + id + "\"");
}

std::vector<std::string> DatasetManifest::identity_ids() const {
  std::vector<std::string> ids;
  ids.reserve(identities.size());
  for (const auto& entry : identities) ids.push_back(entry.id);
  return ids;
}

DatasetManifest load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("dataset: cannot open manifest " + manifest_path);
  Json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw DataError("dataset: bad JSON in " + manifest_path + ": " + e.what());
  }
  if (!doc.is_object())
    throw DataError("dataset: manifest root must be an object");
  check_keys(doc, "", {"scale_note", "identities"}, true, "dataset");

  DatasetManifest manifest;
  manifest.root = fs::path(manifest_path).parent_path().string();
  if (doc.contains("scale_note")) {
    if (!doc.at("scale_note").is_string())
      throw DataError("dataset: \"scale_note\" must be a string");
    manifest.scale_note = doc.at("scale_note").get<std::string>();
  }
  if (!doc.contains("identities") || !doc.at("identities").is_array() ||
      doc.at("identities").empty())
    throw DataError("dataset: \"identities\" must be a non-empty array");

  std::set<std::string> seen;
  for (const Json& ident : doc.at("identities")) {
    if (!ident.is_object())
      throw DataError("dataset: each identity must be an object");
    check_keys(ident, "identities[]", {"id", "gt_mesh", "views"}, true,
               "dataset");
    IdentityEntry entry;
    if (!ident.contains("id") || !ident.at("id").is_string() ||
        ident.at("id").get<std::string>().empty())
      throw DataError("dataset: identity \"id\" must be a non-empty string");
    entry.id = ident.at("id").get<std::string>();
    if (!seen.insert(entry.id).second)
      throw DataError("dataset: duplicate identity \"" + entry.id + "\"");

    if (ident.contains("gt_mesh")) {
      if (!ident.at("gt_mesh").is_string())
        throw DataError("dataset: \"gt_mesh\" must be a string");
      const fs::path mesh =
          fs::path(manifest.root) / ident.at("gt_mesh").get<std::string>();
      if (!fs::exists(mesh))
        throw DataError("dataset: missing mesh " + mesh.string());
      entry.gt_mesh_path = mesh.string();
    }

    if (!ident.contains("views") || !ident.at("views").is_array() ||
        ident.at("views").empty())
      throw DataError("dataset: identity \"" + entry.id +
                      "\" needs a non-empty \"views\" array");

    int expect_w = -1, expect_h = -1;
    for (const Json& view : ident.at("views")) {
      if (!view.is_object())
        throw DataError("dataset: each view must be an object");
      check_keys(view, "views[]", {"image", "K", "cam2world"}, true,
                 "dataset");
      ViewEntry ve;
      if (!view.contains("image") || !view.at("image").is_string())
        throw DataError("dataset: view \"image\" must be a string");
      const fs::path img =
          fs::path(manifest.root) / view.at("image").get<std::string>();
      if (!fs::exists(img))
        throw DataError("dataset: missing image " + img.string());
      ve.image_path = img.string();

      int w = 0, h = 0;
      png_dimensions(ve.image_path, &w, &h);
      if (expect_w < 0) {
        expect_w = w;
        expect_h = h;
      } else if (w != expect_w || h != expect_h) {
        throw DataError("dataset: image dimensions differ within identity \"" +
                        entry.id + "\": " + img.string());
      }
      ve.camera.width = w;
      ve.camera.height = h;

      auto read_matrix = [&](const char* key, double* out, size_t n) {
        if (!view.contains(key) || !view.at(key).is_array() ||
            view.at(key).size() != n)
          throw DataError("dataset: view \"" + std::string(key) +
                          "\" must be an array of " + std::to_string(n) +
                          " numbers");
        for (size_t i = 0; i < n; ++i) {
          if (!view.at(key)[i].is_number())
            throw DataError("dataset: view \"" + std::string(key) +
                            "\" must contain only numbers");
          out[i] = view.at(key)[i].get<double>();
        }
      };
      read_matrix("K", ve.camera.K.data(), 9);
      read_matrix("cam2world", ve.camera.cam2world.data(), 16);

      const auto& M = ve.camera.cam2world;
      const std::array<double, 9> rot = {M[0], M[1], M[2], M[4], M[5],
                                         M[6], M[8], M[9], M[10]};
      if (!(det3(rot) > 0.0))
        throw DataError("dataset: camera rotation for identity \"" +
                        entry.id + "\" has non-positive determinant");
      double diff = 0.0;
      const std::array<double, 9> ortho = nearest_rotation(rot, &diff);
      if (diff > 1e-8)
        throw DataError("dataset: camera rotation for identity \"" +
                        entry.id + "\" is not orthonormal (off by " +
                        std::to_string(diff) + ")");
      ve.camera.cam2world[0] = ortho[0];
      ve.camera.cam2world[1] = ortho[1];
      ve.camera.cam2world[2] = ortho[2];
      ve.camera.cam2world[4] = ortho[3];
      ve.camera.cam2world[5] = ortho[4];
      ve.camera.cam2world[6] = ortho[5];
      ve.camera.cam2world[8] = ortho[6];
      ve.camera.cam2world[9] = ortho[7];
      ve.camera.cam2world[10] = ortho[8];

      try {
        ve.camera.validate();
      } catch (const UsageError& e) {
        throw DataError(std::string("dataset: ") + e.what());
      }
      entry.views.push_back(std::move(ve));
    }
    manifest.identities.push_back(std::move(entry));
  }
  return manifest;
}

Tensor load_view_image(const ViewEntry& view) {
  int w = 0, h = 0;
  Tensor img = read_png(view.image_path, &w, &h);
  if (w != view.camera.width || h != view.camera.height)
    throw DataError("dataset: image changed size on disk: " + view.image_path);
  return img;
}

// ---------------------------------------------------------------------------
// Config.
// ---------------------------------------------------------------------------

Config parse_config(const std::string& json_text) {
  Json doc;
  try {
    doc = Json::parse(json_text);
  } catch (const std::exception& e) {
    throw UsageError(std::string("config: bad JSON: ") + e.what());
  }
  if (!doc.is_object()) throw UsageError("config: root must be an object");
  check_keys(doc, "", {"seed", "model", "render", "train", "eval"}, false,
             "config");

  Config cfg;
  if (doc.contains("seed")) {
    const Json& s = doc.at("seed");
    const bool negative =
        !s.is_number_unsigned() && s.is_number_integer() && s.get<int64_t>() < 0;
    if ((!s.is_number_unsigned() && !s.is_number_integer()) || negative)
      throw UsageError("config: \"seed\" must be a non-negative integer");
    cfg.seed = s.get<uint64_t>();
  }

  if (doc.contains("model")) {
    const Json& m = doc.at("model");
    if (!m.is_object()) throw UsageError("config: \"model\" must be an object");
    check_keys(m, "model",
               {"code_dim", "hidden", "feat_deform", "feat_template",
                "feat_displacement", "deform_layers", "template_layers",
                "displacement_layers", "render_layers_stage1",
                "render_layers_stage2", "template_skip", "render_skip_stage2",
                "pe_deform", "pe_template", "pe_displacement",
                "pe_render_point_stage1", "pe_render_view_stage1",
                "pe_render_point_stage2", "pe_render_view_stage2",
                "init_alpha", "init_beta", "init_sphere_radius"},
               false, "config");
    ModelConfig& mc = cfg.model;
    mc.code_dim = get_int(m, "model.", "code_dim", mc.code_dim);
    mc.hidden = get_int(m, "model.", "hidden", mc.hidden);
    mc.feat_deform = get_int(m, "model.", "feat_deform", mc.feat_deform);
    mc.feat_template = get_int(m, "model.", "feat_template", mc.feat_template);
    mc.feat_displacement =
        get_int(m, "model.", "feat_displacement", mc.feat_displacement);
    mc.deform_layers = get_int(m, "model.", "deform_layers", mc.deform_layers);
    mc.template_layers =
        get_int(m, "model.", "template_layers", mc.template_layers);
    mc.displacement_layers =
        get_int(m, "model.", "displacement_layers", mc.displacement_layers);
    mc.render_layers_stage1 =
        get_int(m, "model.", "render_layers_stage1", mc.render_layers_stage1);
    mc.render_layers_stage2 =
        get_int(m, "model.", "render_layers_stage2", mc.render_layers_stage2);
    mc.template_skip = get_int(m, "model.", "template_skip", mc.template_skip);
    mc.render_skip_stage2 =
        get_int(m, "model.", "render_skip_stage2", mc.render_skip_stage2);
    mc.pe_deform = get_int(m, "model.", "pe_deform", mc.pe_deform);
    mc.pe_template = get_int(m, "model.", "pe_template", mc.pe_template);
    mc.pe_displacement =
        get_int(m, "model.", "pe_displacement", mc.pe_displacement);
    mc.pe_render_point_stage1 = get_int(m, "model.", "pe_render_point_stage1",
                                        mc.pe_render_point_stage1);
    mc.pe_render_view_stage1 = get_int(m, "model.", "pe_render_view_stage1",
                                       mc.pe_render_view_stage1);
    mc.pe_render_point_stage2 = get_int(m, "model.", "pe_render_point_stage2",
                                        mc.pe_render_point_stage2);
    mc.pe_render_view_stage2 = get_int(m, "model.", "pe_render_view_stage2",
                                       mc.pe_render_view_stage2);
    mc.init_alpha =
        get_number(m, "model.", "init_alpha", mc.init_alpha, false, "config");
    mc.init_beta =
        get_number(m, "model.", "init_beta", mc.init_beta, false, "config");
    mc.init_sphere_radius = get_number(m, "model.", "init_sphere_radius",
                                       mc.init_sphere_radius, false, "config");
  }

  if (doc.contains("render")) {
    const Json& r = doc.at("render");
    if (!r.is_object())
      throw UsageError("config: \"render\" must be an object");
    check_keys(r, "render",
               {"n_coarse", "n_fine", "scene_radius", "background",
                "jitter_training", "eval_ray_chunk"},
               false, "config");
    RenderConfig& rc = cfg.render;
    rc.n_coarse = get_int(r, "render.", "n_coarse", rc.n_coarse);
    rc.n_fine = get_int(r, "render.", "n_fine", rc.n_fine);
    rc.scene_radius = get_number(r, "render.", "scene_radius", rc.scene_radius,
                                 false, "config");
    rc.background = get_vec3(r, "render.", "background", rc.background);
    rc.jitter_training =
        get_bool(r, "render.", "jitter_training", rc.jitter_training);
    rc.eval_ray_chunk =
        get_int(r, "render.", "eval_ray_chunk", rc.eval_ray_chunk);
  }

  if (doc.contains("train")) {
    const Json& t = doc.at("train");
    if (!t.is_object()) throw UsageError("config: \"train\" must be an object");
    check_keys(t, "train",
               {"rays_per_step", "stage1_steps", "stage2_steps",
                "unseen_steps", "lr0", "lr_final_factor", "regularizer_points",
                "ray_chunk", "log_every", "views_per_identity",
                "stage2_train_template", "stage2_train_deform",
                "stage2_train_codes", "weights"},
               false, "config");
    TrainConfig& tc = cfg.train;
    tc.rays_per_step = get_int(t, "train.", "rays_per_step", tc.rays_per_step);
    tc.stage1_steps = get_int(t, "train.", "stage1_steps", tc.stage1_steps);
    tc.stage2_steps = get_int(t, "train.", "stage2_steps", tc.stage2_steps);
    tc.unseen_steps = get_int(t, "train.", "unseen_steps", tc.unseen_steps);
    tc.lr0 = get_number(t, "train.", "lr0", tc.lr0, false, "config");
    tc.lr_final_factor = get_number(t, "train.", "lr_final_factor",
                                    tc.lr_final_factor, false, "config");
    tc.regularizer_points =
        get_int(t, "train.", "regularizer_points", tc.regularizer_points);
    tc.ray_chunk = get_int(t, "train.", "ray_chunk", tc.ray_chunk);
    tc.log_every = get_int(t, "train.", "log_every", tc.log_every);
    tc.views_per_identity =
        get_int(t, "train.", "views_per_identity", tc.views_per_identity);
    tc.stage2_train_template = get_bool(t, "train.", "stage2_train_template",
                                        tc.stage2_train_template);
    tc.stage2_train_deform =
        get_bool(t, "train.", "stage2_train_deform", tc.stage2_train_deform);
    tc.stage2_train_codes =
        get_bool(t, "train.", "stage2_train_codes", tc.stage2_train_codes);
    if (t.contains("weights")) {
      const Json& w = t.at("weights");
      if (!w.is_object())
        throw UsageError("config: \"train.weights\" must be an object");
      check_keys(w, "train.weights",
                 {"color", "deform_magnitude", "deform_smoothness", "eikonal",
                  "displacement_magnitude", "displacement_smoothness", "code"},
                 false, "config");
      LossWeights& lw = tc.weights;
      const std::string p = "train.weights.";
      lw.color = get_number(w, p, "color", lw.color, false, "config");
      lw.deform_magnitude = get_number(w, p, "deform_magnitude",
                                       lw.deform_magnitude, false, "config");
      lw.deform_smoothness = get_number(w, p, "deform_smoothness",
                                        lw.deform_smoothness, false, "config");
      lw.eikonal = get_number(w, p, "eikonal", lw.eikonal, false, "config");
      lw.displacement_magnitude =
          get_number(w, p, "displacement_magnitude", lw.displacement_magnitude,
                     false, "config");
      lw.displacement_smoothness =
          get_number(w, p, "displacement_smoothness",
                     lw.displacement_smoothness, false, "config");
      lw.code = get_number(w, p, "code", lw.code, false, "config");
    }
  }

  if (doc.contains("eval")) {
    const Json& e = doc.at("eval");
    if (!e.is_object()) throw UsageError("config: \"eval\" must be an object");
    check_keys(e, "eval",
               {"mesh_resolution", "surface_samples", "chamfer_points"}, false,
               "config");
    EvalConfig& ec = cfg.eval;
    ec.mesh_resolution =
        get_int(e, "eval.", "mesh_resolution", ec.mesh_resolution);
    ec.surface_samples =
        get_int(e, "eval.", "surface_samples", ec.surface_samples);
    ec.chamfer_points =
        get_int(e, "eval.", "chamfer_points", ec.chamfer_points);
  }

  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string config_to_json(const Config& cfg) {
  OrderedJson doc;
  doc["seed"] = cfg.seed;
  OrderedJson& m = doc["model"];
  m["code_dim"] = cfg.model.code_dim;
  m["hidden"] = cfg.model.hidden;
  m["feat_deform"] = cfg.model.feat_deform;
  m["feat_template"] = cfg.model.feat_template;
  m["feat_displacement"] = cfg.model.feat_displacement;
  m["deform_layers"] = cfg.model.deform_layers;
  m["template_layers"] = cfg.model.template_layers;
  m["displacement_layers"] = cfg.model.displacement_layers;
  m["render_layers_stage1"] = cfg.model.render_layers_stage1;
  m["render_layers_stage2"] = cfg.model.render_layers_stage2;
  m["template_skip"] = cfg.model.template_skip;
  m["render_skip_stage2"] = cfg.model.render_skip_stage2;
  m["pe_deform"] = cfg.model.pe_deform;
  m["pe_template"] = cfg.model.pe_template;
  m["pe_displacement"] = cfg.model.pe_displacement;
  m["pe_render_point_stage1"] = cfg.model.pe_render_point_stage1;
  m["pe_render_view_stage1"] = cfg.model.pe_render_view_stage1;
  m["pe_render_point_stage2"] = cfg.model.pe_render_point_stage2;
  m["pe_render_view_stage2"] = cfg.model.pe_render_view_stage2;
  m["init_alpha"] = cfg.model.init_alpha;
  m["init_beta"] = cfg.model.init_beta;
  m["init_sphere_radius"] = cfg.model.init_sphere_radius;
  OrderedJson& r = doc["render"];
  r["n_coarse"] = cfg.render.n_coarse;
  r["n_fine"] = cfg.render.n_fine;
  r["scene_radius"] = cfg.render.scene_radius;
  r["background"] = cfg.render.background;
  r["jitter_training"] = cfg.render.jitter_training;
  r["eval_ray_chunk"] = cfg.render.eval_ray_chunk;
  OrderedJson& t = doc["train"];
  t["rays_per_step"] = cfg.train.rays_per_step;
  t["stage1_steps"] = cfg.train.stage1_steps;
  t["stage2_steps"] = cfg.train.stage2_steps;
  t["unseen_steps"] = cfg.train.unseen_steps;
  t["lr0"] = cfg.train.lr0;
  t["lr_final_factor"] = cfg.train.lr_final_factor;
  t["regularizer_points"] = cfg.train.regularizer_points;
  t["ray_chunk"] = cfg.train.ray_chunk;
  t["log_every"] = cfg.train.log_every;
  t["views_per_identity"] = cfg.train.views_per_identity;
  t["stage2_train_template"] = cfg.train.stage2_train_template;
  t["stage2_train_deform"] = cfg.train.stage2_train_deform;
  t["stage2_train_codes"] = cfg.train.stage2_train_codes;
  OrderedJson& w = t["weights"];
  w["color"] = cfg.train.weights.color;
  w["deform_magnitude"] = cfg.train.weights.deform_magnitude;
  w["deform_smoothness"] = cfg.train.weights.deform_smoothness;
  w["eikonal"] = cfg.train.weights.eikonal;
  w["displacement_magnitude"] = cfg.train.weights.displacement_magnitude;
  w["displacement_smoothness"] = cfg.train.weights.displacement_smoothness;
  w["code"] = cfg.train.weights.code;
  OrderedJson& e = doc["eval"];
  e["mesh_resolution"] = cfg.eval.mesh_resolution;
  e["surface_samples"] = cfg.eval.surface_samples;
  e["chamfer_points"] = cfg.eval.chamfer_points;
  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Analytic scene.
// ---------------------------------------------------------------------------

SceneSpec SceneSpec::sample(int n_identities, uint64_t seed) {
  if (n_identities <= 0)
    throw UsageError("scene: identity count must be positive");
  SceneSpec spec;
  Rng rng(seed);
  for (int i = 0; i < n_identities; ++i) {
    IdentityScene s;
    s.id = two_digit_name("id", i);
    for (int k = 0; k < 3; ++k) {
      s.warp_amplitude[k] = rng.uniform(0.02, 0.06);
      s.warp_frequency[k] = rng.uniform(2.0, 4.0);
      s.warp_phase[k] = rng.uniform(0.0, 2.0 * kPi);
    }
    s.bump_amplitude = rng.uniform(0.025, 0.055);
    s.bump_frequency = rng.uniform(7.0, 11.0);
    for (int k = 0; k < 3; ++k) s.bump_phase[k] = rng.uniform(0.0, 2.0 * kPi);
    for (int k = 0; k < 3; ++k) {
      s.albedo_base[k] = rng.uniform(0.25, 0.8);
      s.albedo_tint[k] = rng.uniform(0.05, 0.2);
    }
    s.albedo_frequency = rng.uniform(2.0, 5.0);
    s.albedo_phase = rng.uniform(0.0, 2.0 * kPi);
    spec.identities.push_back(std::move(s));
  }
  return spec;
}

void SceneSpec::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("scene: " + what);
  };
  for (double r : base_radii) require(r > 0.0, "radii must be positive");
  for (double b : background)
    require(b >= 0.0 && b <= 1.0, "background must lie in [0,1]");
  require(scene_radius > 0.0, "scene radius must be positive");
  require(camera_distance > scene_radius,
          "cameras must sit outside the scene sphere");
  require(focal_per_pixel > 0.0, "focal scale must be positive");
  require(gt_mesh_resolution >= 8, "mesh resolution must be at least 8");
  require(!identities.empty(), "need at least one identity");

  const double minr = std::min({base_radii[0], base_radii[1], base_radii[2]});
  const double maxr = std::max({base_radii[0], base_radii[1], base_radii[2]});
  std::set<std::string> seen;
  for (const auto& s : identities) {
    require(!s.id.empty(), "identity ids cannot be empty");
    require(seen.insert(s.id).second, "duplicate identity id \"" + s.id + "\"");
    double warp_norm_sq = 0.0;
    for (int k = 0; k < 3; ++k) {
      require(s.warp_amplitude[k] >= 0.0 && s.warp_frequency[k] >= 0.0,
              "warp parameters cannot be negative");
      warp_norm_sq += s.warp_amplitude[k] * s.warp_amplitude[k];
    }
    require(s.bump_amplitude >= 0.0 && s.bump_frequency >= 0.0,
            "bump parameters cannot be negative");
    require(s.bump_amplitude < 0.2 * minr,
            "bump amplitude must stay below 0.2 x min radius for \"" + s.id +
                "\"");
    // The whole surface must fit inside both the scene sphere and the
    // ground-truth meshing box [-1,1]^3.
    const double reach = maxr * (1.0 + s.bump_amplitude / minr) +
                         std::sqrt(warp_norm_sq);
    require(reach <= 0.95 * std::min(scene_radius, 1.0),
            "surface of \"" + s.id + "\" can leave the scene bounds");
    for (int k = 0; k < 3; ++k) {
      require(s.albedo_base[k] >= 0.0 && s.albedo_base[k] <= 1.0,
              "albedo base must lie in [0,1]");
      require(s.albedo_tint[k] >= 0.0, "albedo tint cannot be negative");
    }
    require(s.albedo_frequency >= 0.0, "albedo frequency cannot be negative");
  }
}

double scene_sdf(const SceneSpec& spec, const IdentityScene& identity,
                 const std::array<double, 3>& p) {
  const double raw = ellipsoid_bound(warp_point(identity, p), spec.base_radii) +
                     bump_field(identity, p);
  return raw / lipschitz_bound(identity);
}

std::array<double, 3> scene_albedo(const IdentityScene& identity,
                                   const std::array<double, 3>& p) {
  std::array<double, 3> c;
  const double sum = p[0] + p[1] + p[2];
  for (int k = 0; k < 3; ++k) {
    const double wave = std::sin(identity.albedo_frequency * sum +
                                 identity.albedo_phase + k * 2.0 * kPi / 3.0);
    c[k] = std::clamp(identity.albedo_base[k] + identity.albedo_tint[k] * wave,
                      0.0, 1.0);
  }
  return c;
}

TraceResult sphere_trace(const ScalarField& field, const Ray& ray,
                         int max_steps, double eps) {
  if (max_steps <= 0) throw UsageError("sphere_trace: need a step budget");
  if (!(eps > 0.0)) throw UsageError("sphere_trace: eps must be positive");
  TraceResult res;
  if (!ray.hits) return res;
  double t = ray.tnear;
  for (int i = 0; i < max_steps && t <= ray.tfar; ++i) {
    const std::array<double, 3> p = ray_point(ray, t);
    const double d = field(p);
    if (std::abs(d) < eps) {
      res.hit = true;
      res.t = t;
      res.point = p;
      return res;
    }
    t += d;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation.
// ---------------------------------------------------------------------------

std::string generate_synthetic(const SceneSpec& spec_in, int n_identities,
                               int n_views, int image_size, uint64_t seed,
                               const std::string& out_dir) {
  if (n_identities <= 0 || n_views <= 0 || image_size <= 0)
    throw UsageError("generate_synthetic: counts and size must be positive");
  SceneSpec spec = spec_in;
  if (spec.identities.empty()) {
    spec.identities = SceneSpec::sample(n_identities, seed).identities;
  } else if (static_cast<int>(spec.identities.size()) != n_identities) {
    throw UsageError("generate_synthetic: spec carries " +
                     std::to_string(spec.identities.size()) +
                     " identities but " + std::to_string(n_identities) +
                     " were requested");
  }
  spec.validate();

  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "meshes");

  // Shared cameras on the frontal arc: evenly spaced azimuth, cycling
  // elevation. Deterministic in the view index.
  static const double kElevations[5] = {0.0, 10.0, -10.0, 15.0, -15.0};
  std::vector<Camera> cams;
  for (int j = 0; j < n_views; ++j) {
    const double az =
        n_views == 1 ? 0.0 : -60.0 + 120.0 * j / (n_views - 1.0);
    const double el = kElevations[j % 5];
    cams.push_back(arc_camera(az, el, spec.camera_distance,
                              spec.focal_per_pixel * image_size, image_size));
  }

  OrderedJson manifest;
  manifest["scale_note"] =
      "synthetic desk-scale heads: world units, surfaces inside the unit "
      "box, scene sphere radius " +
      std::to_string(spec.scene_radius);
  manifest["identities"] = OrderedJson::array();

  for (const IdentityScene& ident : spec.identities) {
    OrderedJson ident_json;
    ident_json["id"] = ident.id;
    const std::string mesh_rel = "meshes/" + ident.id + ".obj";
    ident_json["gt_mesh"] = mesh_rel;
    ident_json["views"] = OrderedJson::array();

    auto sdf = [&](const std::array<double, 3>& p) {
      return scene_sdf(spec, ident, p);
    };

    for (int j = 0; j < n_views; ++j) {
      const Camera& cam = cams[j];
      const std::vector<Ray> rays = generate_rays(cam, spec.scene_radius);
      Tensor img = Tensor::zeros(static_cast<int64_t>(image_size) * image_size,
                                 3);
      for (size_t pix = 0; pix < rays.size(); ++pix) {
        const TraceResult hit = sphere_trace(sdf, rays[pix], 512, 1e-6);
        std::array<double, 3> c = spec.background;
        if (hit.hit) {
          const std::array<double, 3> n = scene_normal(spec, ident, hit.point);
          const std::array<double, 3> albedo = scene_albedo(ident, hit.point);
          const double facing = -(n[0] * rays[pix].dir[0] +
                                  n[1] * rays[pix].dir[1] +
                                  n[2] * rays[pix].dir[2]);
          const double light = 0.2 + 0.8 * std::max(0.0, facing);
          for (int k = 0; k < 3; ++k)
            c[k] = std::clamp(albedo[k] * light, 0.0, 1.0);
        }
        for (int k = 0; k < 3; ++k) img.at(pix, k) = c[k];
      }

      const std::string img_rel =
          "images/" + ident.id + "_" + two_digit_name("view", j) + ".png";
      write_png((root / img_rel).string(), img, image_size, image_size);
      if (spec.write_float_images) {
        const std::string flt_rel =
            "images/" + ident.id + "_" + two_digit_name("view", j) + ".f64";
        write_float_image((root / flt_rel).string(), img, image_size,
                          image_size);
      }

      OrderedJson view_json;
      view_json["image"] = img_rel;
      view_json["K"] = cam.K;
      view_json["cam2world"] = cam.cam2world;
      ident_json["views"].push_back(std::move(view_json));
    }

    // Ground-truth surface from the analytic field.
    const int res = spec.gt_mesh_resolution;
    const FieldFn field = [&](const Tensor& pts) {
      Tensor out = Tensor::zeros(pts.rows(), 1);
      for (int64_t i = 0; i < pts.rows(); ++i)
        out.data[i] = sdf({pts.at(i, 0), pts.at(i, 1), pts.at(i, 2)});
      return out;
    };
    const VoxelGrid grid =
        sample_grid(field, res, res, res, {-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});
    const TriangleMesh mesh = marching_cubes(grid, 0.0);
    write_obj(mesh, (root / mesh_rel).string());

    manifest["identities"].push_back(std::move(ident_json));
  }

  const std::string manifest_path = (root / "manifest.json").string();
  std::ofstream out(manifest_path);
  if (!out) throw DataError("dataset: cannot write " + manifest_path);
  out << manifest.dump(2) << "\n";
  if (!out) throw DataError("dataset: short write to " + manifest_path);
  return manifest_path;
}

}  // namespace headsdf
