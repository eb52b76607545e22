#include "headsdf/headsdf.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "core/checkpoint.hpp"
#include "core/config.hpp"
#include "core/dataio.hpp"
#include "core/evalkit.hpp"
#include "core/gradcheck.hpp"
#include "core/meshing.hpp"
#include "core/renderer.hpp"
#include "core/trainer.hpp"

namespace fs = std::filesystem;

using namespace headsdf;

struct hs_session {
  Config config;
  bool config_loaded = false;  // false -> checkpoint configs win
  uint64_t seed = 0;
  std::string error;
};

namespace {

// Runs one operation, translating the library's exception taxonomy into
// status codes and stashing the message for hs_last_error.
template <typename Fn>
hs_status guarded(hs_session* session, Fn&& fn) {
  if (session == nullptr) return HS_USAGE;
  session->error.clear();
  try {
    fn();
    return HS_OK;
  } catch (const UsageError& e) {
    session->error = e.what();
    return HS_USAGE;
  } catch (const NumericError& e) {
    session->error = e.what();
    return HS_NUMERIC;
  } catch (const DataError& e) {
    session->error = e.what();
    return HS_DATA;
  } catch (const std::exception& e) {
    session->error = e.what();
    return HS_DATA;
  }
}

std::string require_arg(const char* value, const char* name) {
  if (value == nullptr || *value == '\0') {
    throw UsageError(std::string("missing required argument: ") + name);
  }
  return value;
}

// Config governing an operation that starts from a checkpoint: an explicitly
// loaded session config wins, otherwise the snapshot the checkpoint carries.
Config operating_config(const hs_session* session,
                        const LoadedCheckpoint& loaded) {
  return session->config_loaded ? session->config : loaded.config;
}

RenderOptions eval_render_options(const Config& cfg) {
  RenderOptions opt;
  opt.n_coarse = cfg.render.n_coarse;
  opt.n_fine = cfg.render.n_fine;
  opt.scene_radius = cfg.render.scene_radius;
  opt.background = cfg.render.background;
  opt.jitter = false;
  return opt;
}

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text_file(const std::string& path, const std::string& text) {
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path);
}

std::vector<std::string> split_csv(const char* csv) {
  std::vector<std::string> out;
  if (csv == nullptr) return out;
  std::stringstream stream{std::string(csv)};
  std::string item;
  while (std::getline(stream, item, ',')) {
    size_t begin = item.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    size_t end = item.find_last_not_of(" \t");
    out.push_back(item.substr(begin, end - begin + 1));
  }
  return out;
}

void check_finished(const TrainResult& result, const std::string& phase) {
  if (result.aborted) {
    throw NumericError(phase +
                       " hit a non-finite loss; the last finite state was "
                       "checkpointed");
  }
}

}  // namespace

extern "C" {

const char* hs_version(void) { return "0.1.0"; }

hs_session* hs_session_create(void) { return new (std::nothrow) hs_session; }

void hs_session_destroy(hs_session* session) { delete session; }

const char* hs_last_error(const hs_session* session) {
  return session ? session->error.c_str() : "";
}

hs_status hs_load_config(hs_session* session, const char* config_path) {
  return guarded(session, [&] {
    const std::string path = require_arg(config_path, "config_path");
    session->config = load_config(path);
    session->config_loaded = true;
    session->seed = session->config.seed;
  });
}

hs_status hs_set_seed(hs_session* session, uint64_t seed) {
  return guarded(session, [&] { session->seed = seed; });
}

hs_status hs_synth(hs_session* session, int n_identities, int n_views,
                   int image_size, const char* out_dir) {
  return guarded(session, [&] {
    const std::string dir = require_arg(out_dir, "out_dir");
    if (n_identities < 1) throw UsageError("need at least one identity");
    if (n_views < 1) throw UsageError("need at least one view per identity");
    if (image_size < 4) throw UsageError("image size must be at least 4");
    SceneSpec spec = SceneSpec::sample(n_identities, session->seed);
    generate_synthetic(spec, n_identities, n_views, image_size, session->seed,
                       dir);
  });
}

hs_status hs_train_template(hs_session* session, const char* manifest_path,
                            const char* out_dir) {
  return guarded(session, [&] {
    const std::string manifest = require_arg(manifest_path, "manifest_path");
    const std::string dir = require_arg(out_dir, "out_dir");
    const Config& cfg = session->config;
    DatasetManifest data = load_dataset(manifest);
    TrainingSet training(data, {}, cfg.train.views_per_identity);
    HeadModel model(cfg.model, data.identity_ids(), session->seed);
    fs::create_directories(dir);
    Rng root(session->seed);
    Rng rng = root.fork("train/stage1");
    TrainResult result = train_stage1(
        model, training, cfg, rng, (fs::path(dir) / "stage1.ckpt").string(),
        (fs::path(dir) / "stage1_loss.csv").string());
    check_finished(result, "template training");
  });
}

hs_status hs_refine(hs_session* session, const char* checkpoint_path,
                    const char* manifest_path, const char* identity,
                    const char* out_dir) {
  return guarded(session, [&] {
    const std::string ckpt = require_arg(checkpoint_path, "checkpoint_path");
    const std::string manifest = require_arg(manifest_path, "manifest_path");
    const std::string dir = require_arg(out_dir, "out_dir");
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Config cfg = operating_config(session, loaded);
    if (loaded.model.stage() == 1) loaded.model.promote();
    std::vector<std::string> targets;
    if (identity != nullptr && *identity != '\0') {
      targets.emplace_back(identity);
    } else {
      targets = loaded.model.identities();
    }
    DatasetManifest data = load_dataset(manifest);
    TrainingSet training(data, {}, cfg.train.views_per_identity);
    fs::create_directories(dir);
    Rng root(session->seed);
    for (const std::string& id : targets) {
      HeadModel branch = loaded.model;
      Rng rng = root.fork("train/refine/" + id);
      TrainResult result = train_stage2(
          branch, training, id, cfg, rng,
          (fs::path(dir) / ("refined_" + id + ".ckpt")).string(),
          (fs::path(dir) / ("refine_" + id + "_loss.csv")).string());
      check_finished(result, "refinement of \"" + id + "\"");
    }
  });
}

hs_status hs_fit_unseen(hs_session* session, const char* checkpoint_path,
                        const char* manifest_path, const char* identity,
                        const char* out_dir) {
  return guarded(session, [&] {
    const std::string ckpt = require_arg(checkpoint_path, "checkpoint_path");
    const std::string manifest = require_arg(manifest_path, "manifest_path");
    const std::string id = require_arg(identity, "identity");
    const std::string dir = require_arg(out_dir, "out_dir");
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Config cfg = operating_config(session, loaded);
    DatasetManifest data = load_dataset(manifest);
    TrainingSet training(data, {}, cfg.train.views_per_identity);
    fs::create_directories(dir);
    Rng root(session->seed);
    Rng rng = root.fork("train/unseen/" + id);
    TrainResult result = fit_unseen_identity(
        loaded.model, training, id, cfg, rng,
        (fs::path(dir) / ("unseen_" + id + ".ckpt")).string(),
        (fs::path(dir) / ("unseen_" + id + "_loss.csv")).string());
    check_finished(result, "unseen-identity fitting of \"" + id + "\"");
  });
}

hs_status hs_extract_mesh(hs_session* session, const char* checkpoint_path,
                          const char* identity, int resolution,
                          const char* out_obj) {
  return guarded(session, [&] {
    const std::string ckpt = require_arg(checkpoint_path, "checkpoint_path");
    const std::string id = require_arg(identity, "identity");
    const std::string path = require_arg(out_obj, "out_obj");
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Config cfg = operating_config(session, loaded);
    const int res = resolution > 0 ? resolution : cfg.eval.mesh_resolution;
    TriangleMesh mesh = extract_identity_mesh(loaded.model, id, res);
    ensure_parent_dir(path);
    write_obj(mesh, path);
  });
}

hs_status hs_render_view(hs_session* session, const char* checkpoint_path,
                         const char* manifest_path, const char* identity,
                         int view_index, const char* out_png) {
  return guarded(session, [&] {
    const std::string ckpt = require_arg(checkpoint_path, "checkpoint_path");
    const std::string manifest = require_arg(manifest_path, "manifest_path");
    const std::string id = require_arg(identity, "identity");
    const std::string path = require_arg(out_png, "out_png");
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    if (!loaded.model.has_identity(id)) {
      throw UsageError("model has no identity \"" + id + "\"");
    }
    const Config cfg = operating_config(session, loaded);
    DatasetManifest data = load_dataset(manifest);
    const IdentityEntry& entry = data.identity(id);
    if (view_index < 0 || view_index >= static_cast<int>(entry.views.size())) {
      throw UsageError("view index out of range for \"" + id + "\"");
    }
    const Camera& cam = entry.views[view_index].camera;
    Rng rng(session->seed);
    Tensor image =
        render_image(loaded.model, id, cam, eval_render_options(cfg), rng);
    ensure_parent_dir(path);
    write_png(path, image, cam.width, cam.height);
  });
}

hs_status hs_render_pose(hs_session* session, const char* checkpoint_path,
                         const char* identity, double azimuth_deg,
                         double elevation_deg, double distance,
                         int image_size, const char* out_png) {
  return guarded(session, [&] {
    const std::string ckpt = require_arg(checkpoint_path, "checkpoint_path");
    const std::string id = require_arg(identity, "identity");
    const std::string path = require_arg(out_png, "out_png");
    if (image_size < 4) throw UsageError("image size must be at least 4");
    if (distance <= 0.0) throw UsageError("camera distance must be positive");
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    if (!loaded.model.has_identity(id)) {
      throw UsageError("model has no identity \"" + id + "\"");
    }
    const Config cfg = operating_config(session, loaded);
    Camera cam = arc_camera(azimuth_deg, elevation_deg, distance,
                            1.2 * image_size, image_size);
    Rng rng(session->seed);
    Tensor image =
        render_image(loaded.model, id, cam, eval_render_options(cfg), rng);
    ensure_parent_dir(path);
    write_png(path, image, cam.width, cam.height);
  });
}

hs_status hs_transfer_color(hs_session* session, const char* checkpoint_path,
                            const char* geometry_identity,
                            const char* color_identity, double azimuth_deg,
                            double elevation_deg, double distance,
                            int image_size, const char* out_png) {
  return guarded(session, [&] {
    const std::string ckpt = require_arg(checkpoint_path, "checkpoint_path");
    const std::string geo = require_arg(geometry_identity, "geometry_identity");
    const std::string col = require_arg(color_identity, "color_identity");
    const std::string path = require_arg(out_png, "out_png");
    if (image_size < 4) throw UsageError("image size must be at least 4");
    if (distance <= 0.0) throw UsageError("camera distance must be positive");
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Config cfg = operating_config(session, loaded);
    Camera cam = arc_camera(azimuth_deg, elevation_deg, distance,
                            1.2 * image_size, image_size);
    Rng rng(session->seed);
    Tensor image = color_transfer_render(loaded.model, geo, col, cam,
                                         eval_render_options(cfg), rng);
    ensure_parent_dir(path);
    write_png(path, image, cam.width, cam.height);
  });
}

hs_status hs_eval(hs_session* session, const char* checkpoint_path,
                  const char* manifest_path, const char* identities,
                  const char* out_json) {
  return guarded(session, [&] {
    const std::string ckpt = require_arg(checkpoint_path, "checkpoint_path");
    const std::string manifest = require_arg(manifest_path, "manifest_path");
    const std::string path = require_arg(out_json, "out_json");
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Config cfg = operating_config(session, loaded);
    DatasetManifest data = load_dataset(manifest);
    MetricsReport report =
        evaluate_identities(loaded.model, data, split_csv(identities), cfg);
    write_text_file(path, metrics_to_json(report) + "\n");
  });
}

hs_status hs_checkpoint_info(hs_session* session, const char* checkpoint_path,
                             int* stage, int64_t* step, char* identities,
                             int identities_capacity) {
  return guarded(session, [&] {
    const std::string ckpt = require_arg(checkpoint_path, "checkpoint_path");
    if (identities != nullptr && identities_capacity < 1) {
      throw UsageError("identities buffer has no room for a terminator");
    }
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    if (stage != nullptr) *stage = loaded.model.stage();
    if (step != nullptr) *step = loaded.step;
    if (identities != nullptr) {
      std::string csv;
      for (const std::string& id : loaded.model.identities()) {
        if (!csv.empty()) csv += ',';
        csv += id;
      }
      const size_t n =
          std::min(csv.size(), static_cast<size_t>(identities_capacity) - 1);
      csv.copy(identities, n);
      identities[n] = '\0';
    }
  });
}

hs_status hs_gradcheck(hs_session* session, const char* out_report) {
  return guarded(session, [&] {
    GradCheckReport report = run_gradient_checks(session->seed);
    if (out_report != nullptr && *out_report != '\0') {
      write_text_file(out_report, report.text);
    }
    if (!report.pass) {
      throw NumericError("gradient audit failed:\n" + report.text);
    }
  });
}

}  // extern "C"
