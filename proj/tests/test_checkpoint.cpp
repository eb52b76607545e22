#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "core/checkpoint.hpp"
#include "core/dataio.hpp"
#include "core/renderer.hpp"
#include "core/trainer.hpp"
#include "doctest.h"

using namespace headsdf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("headsdf_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

Config tiny_config() {
  Config cfg;
  cfg.model.code_dim = 6;
  cfg.model.hidden = 12;
  cfg.model.feat_deform = 4;
  cfg.model.feat_template = 4;
  cfg.model.feat_displacement = 3;
  cfg.model.deform_layers = 2;
  cfg.model.template_layers = 3;
  cfg.model.displacement_layers = 2;
  cfg.model.render_layers_stage1 = 3;
  cfg.model.render_layers_stage2 = 5;
  cfg.model.template_skip = 2;
  cfg.model.render_skip_stage2 = 2;
  cfg.model.pe_deform = 1;
  cfg.model.pe_template = 1;
  cfg.model.pe_displacement = 2;
  cfg.model.pe_render_point_stage1 = 1;
  cfg.model.pe_render_view_stage1 = 1;
  cfg.model.pe_render_point_stage2 = 2;
  cfg.model.pe_render_view_stage2 = 2;
  cfg.render.n_coarse = 6;
  cfg.render.n_fine = 4;
  cfg.train.rays_per_step = 24;
  cfg.train.ray_chunk = 16;
  cfg.train.regularizer_points = 12;
  cfg.train.lr0 = 1e-3;
  return cfg;
}

void perturb_params(ParameterStore& store, uint64_t seed) {
  Rng rng(seed);
  for (const std::string& name : store.names())
    for (double& v : store.value(name).data) v += 0.05 * rng.normal();
}

bool params_equal(const ParameterStore& a, const ParameterStore& b) {
  std::vector<std::string> an, bn;
  for (const auto& [name, entry] : a) an.push_back(name);
  for (const auto& [name, entry] : b) bn.push_back(name);
  if (an != bn) return false;
  for (const auto& [name, entry] : a) {
    const Tensor& av = entry.value;
    const Tensor& bv = b.value(name);
    if (!av.same_shape(bv)) return false;
    for (size_t i = 0; i < av.data.size(); ++i) {
      // Bitwise comparison; NaNs compare equal to themselves here so a
      // poisoned parameter round-trips as "unchanged".
      if (std::memcmp(&av.data[i], &bv.data[i], sizeof(double)) != 0)
        return false;
    }
  }
  return true;
}

Camera front_camera(int size, double dist) {
  Camera cam;
  cam.width = size;
  cam.height = size;
  const double c = size / 2.0;
  const double f = 1.2 * size;
  cam.K = {f, 0.0, c, 0.0, f, c, 0.0, 0.0, 1.0};
  cam.cam2world = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, -dist, 0, 0, 0, 1};
  return cam;
}

}  // namespace

TEST_CASE("checkpoints round-trip every parameter bitwise") {
  const fs::path dir = fresh_dir("ckpt_roundtrip");
  Config cfg = tiny_config();
  HeadModel model(cfg.model, {"a", "b"}, 3);
  perturb_params(model.params, 17);

  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(path, model, cfg, 42);
  CHECK(fs::exists(path));
  CHECK_FALSE(fs::exists(path + ".tmp"));

  LoadedCheckpoint lc = load_checkpoint(path);
  CHECK(lc.step == 42);
  CHECK(lc.model.stage() == HeadModel::kStageOne);
  CHECK(lc.model.identities() == std::vector<std::string>{"a", "b"});
  CHECK_FALSE(lc.has_adam);
  // save_checkpoint snapped the live model to f32 values, so the reloaded
  // copy must match it exactly.
  CHECK(params_equal(model.params, lc.model.params));
  CHECK(config_to_json(lc.config) == config_to_json(cfg));

  // The writer is deterministic: saving the (already snapped) model again
  // produces identical bytes.
  const std::string path2 = (dir / "model2.ckpt").string();
  save_checkpoint(path2, model, cfg, 42);
  CHECK(file_bytes(path) == file_bytes(path2));

  CHECK_THROWS_AS(save_checkpoint("", model, cfg, 0), UsageError);
}

TEST_CASE("stage tags and parameter layouts follow promotion") {
  const fs::path dir = fresh_dir("ckpt_stages");
  Config cfg = tiny_config();
  HeadModel model(cfg.model, {"p"}, 11);
  perturb_params(model.params, 5);

  const std::string s1_path = (dir / "stage1.ckpt").string();
  save_checkpoint(s1_path, model, cfg, 10);
  LoadedCheckpoint s1 = load_checkpoint(s1_path);
  CHECK(s1.model.stage() == HeadModel::kStageOne);
  for (const std::string& name : s1.model.params.names())
    CHECK(name.rfind("displace/", 0) != 0);

  REQUIRE(model.promote());
  const std::string s2_path = (dir / "stage2.ckpt").string();
  save_checkpoint(s2_path, model, cfg, 20);
  LoadedCheckpoint s2 = load_checkpoint(s2_path);
  CHECK(s2.model.stage() == HeadModel::kStageTwo);
  bool has_displacement = false;
  for (const std::string& name : s2.model.params.names())
    if (name.rfind("displace/", 0) == 0) has_displacement = true;
  CHECK(has_displacement);
  CHECK(params_equal(model.params, s2.model.params));

  // End to end: the reloaded stage-2 model renders the same pixel as the
  // in-memory one, bit for bit.
  const Camera cam = front_camera(8, 2.2);
  RenderOptions ro;
  ro.n_coarse = 6;
  ro.n_fine = 4;
  Rng r1(9), r2(9);
  const std::array<double, 3> live = render_pixel(model, "p", cam, 4, 4, ro, r1);
  const std::array<double, 3> loaded =
      render_pixel(s2.model, "p", cam, 4, 4, ro, r2);
  CHECK(live == loaded);
}

TEST_CASE("optimizer state rides along and restores exactly") {
  const fs::path dir = fresh_dir("ckpt_adam");
  Config cfg = tiny_config();
  HeadModel model(cfg.model, {"a"}, 7);

  AdamState adam;
  adam.step_count = 7;
  Rng rng(21);
  for (const std::string& name : model.params.names()) {
    const Tensor& value = model.params.value(name);
    Tensor m(value.rows(), value.cols());
    Tensor v(value.rows(), value.cols());
    for (double& x : m.data) x = 0.01 * rng.normal();
    for (double& x : v.data) x = rng.uniform() * 1e-4;
    adam.m[name] = std::move(m);
    adam.v[name] = std::move(v);
  }

  const std::string path = (dir / "with_adam.ckpt").string();
  save_checkpoint(path, model, cfg, 7, &adam);
  LoadedCheckpoint lc = load_checkpoint(path);
  REQUIRE(lc.has_adam);
  CHECK(lc.adam.step_count == 7);
  CHECK(lc.adam.beta1 == adam.beta1);
  CHECK(lc.adam.beta2 == adam.beta2);
  CHECK(lc.adam.eps == adam.eps);
  REQUIRE(lc.adam.m.size() == adam.m.size());
  REQUIRE(lc.adam.v.size() == adam.v.size());
  for (const auto& [name, t] : adam.m) {
    REQUIRE(lc.adam.m.count(name) == 1);
    CHECK(lc.adam.m.at(name).data == t.data);  // both f32-snapped at save
  }
  for (const auto& [name, t] : adam.v) {
    REQUIRE(lc.adam.v.count(name) == 1);
    CHECK(lc.adam.v.at(name).data == t.data);
  }
}

TEST_CASE("save then load then one more step matches training straight through") {
  const fs::path dir = fresh_dir("ckpt_resume");
  SceneSpec spec = SceneSpec::sample(1, 31);
  spec.gt_mesh_resolution = 8;
  const std::string manifest_path =
      generate_synthetic(spec, 1, 2, 12, 31, (dir / "data").string());
  const DatasetManifest manifest = load_dataset(manifest_path);
  const TrainingSet data(manifest);
  const std::vector<std::string> ids = {"id00"};

  Config cfg = tiny_config();
  HeadModel model(cfg.model, ids, 5);
  AdamState adam;
  Rng stream(11);
  for (int64_t k = 0; k < 3; ++k)
    train_step(model, data, ids, cfg, adam, k, 10, stream);

  const std::string path = (dir / "resume.ckpt").string();
  save_checkpoint(path, model, cfg, 3, &adam);

  // Branch A keeps training the in-memory model (which save just snapped to
  // f32 values); branch B reloads from disk. Both take one step with the
  // same fresh seed stream and must agree on every parameter bit.
  HeadModel mem_model = model;
  AdamState mem_adam = adam;
  Rng mem_rng(777);
  const StepStats mem_stats =
      train_step(mem_model, data, ids, cfg, mem_adam, 3, 10, mem_rng);

  LoadedCheckpoint lc = load_checkpoint(path);
  REQUIRE(lc.has_adam);
  CHECK(params_equal(model.params, lc.model.params));
  Rng disk_rng(777);
  const StepStats disk_stats =
      train_step(lc.model, data, ids, cfg, lc.adam, 3, 10, disk_rng);

  CHECK(mem_stats.finite);
  CHECK(mem_stats.total == disk_stats.total);
  CHECK(params_equal(mem_model.params, lc.model.params));
  CHECK(mem_adam.step_count == lc.adam.step_count);
  for (const auto& [name, t] : mem_adam.m)
    CHECK(lc.adam.m.at(name).data == t.data);
  for (const auto& [name, t] : mem_adam.v)
    CHECK(lc.adam.v.at(name).data == t.data);
}

TEST_CASE("corrupt or missing checkpoints are rejected") {
  const fs::path dir = fresh_dir("ckpt_corrupt");
  CHECK_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string()), DataError);

  const fs::path garbage = dir / "garbage.ckpt";
  {
    std::ofstream out(garbage, std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(garbage.string()), DataError);

  Config cfg = tiny_config();
  HeadModel model(cfg.model, {"a"}, 1);
  const std::string good = (dir / "good.ckpt").string();
  save_checkpoint(good, model, cfg, 1);
  const std::string bytes = file_bytes(good);

  const fs::path truncated = dir / "truncated.ckpt";
  {
    std::ofstream out(truncated, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
  }
  CHECK_THROWS_AS(load_checkpoint(truncated.string()), DataError);

  const fs::path header_cut = dir / "header_cut.ckpt";
  {
    std::ofstream out(header_cut, std::ios::binary);
    out.write(bytes.data(), 20);
  }
  CHECK_THROWS_AS(load_checkpoint(header_cut.string()), DataError);
}
