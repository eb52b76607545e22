// headsdf — command-line front end over the shared library.
//
// Every subcommand goes through the C interface only: this file is also the
// reference for driving the library from other languages. Exit codes mirror
// hs_status: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "headsdf/headsdf.h"

namespace {

struct SessionDeleter {
  void operator()(hs_session* s) const { hs_session_destroy(s); }
};
using Session = std::unique_ptr<hs_session, SessionDeleter>;

// Options shared by most subcommands.
struct Common {
  std::string config;
  std::string out;
  uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, Common& common, bool needs_out) {
  cmd->add_option("--config", common.config, "Config file (JSON)")
      ->check(CLI::ExistingFile);
  auto* out =
      cmd->add_option("--out", common.out, "Directory for all outputs");
  if (needs_out) out->required();
  cmd->add_option("--seed", common.seed, "Override the random seed")
      ->each([&common](const std::string&) { common.seed_set = true; });
}

hs_status apply_common(hs_session* s, const Common& common) {
  if (!common.config.empty()) {
    const hs_status rc = hs_load_config(s, common.config.c_str());
    if (rc != HS_OK) return rc;
  }
  if (common.seed_set) return hs_set_seed(s, common.seed);
  return HS_OK;
}

// Requires a checkpoint of the given stage when the user asked for one.
hs_status check_stage(hs_session* s, const std::string& ckpt, int wanted) {
  if (wanted == 0) return HS_OK;
  int stage = 0;
  const hs_status rc =
      hs_checkpoint_info(s, ckpt.c_str(), &stage, nullptr, nullptr, 0);
  if (rc != HS_OK) return rc;
  if (stage != wanted) {
    std::fprintf(stderr, "error: %s is a stage-%d checkpoint, expected %d\n",
                 ckpt.c_str(), stage, wanted);
    return HS_USAGE;
  }
  return HS_OK;
}

std::string join_path(const std::string& dir, const std::string& name) {
  if (dir.empty()) return name;
  return dir.back() == '/' ? dir + name : dir + "/" + name;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural head reconstruction: shared template, per-identity "
               "deformation and detail fields, trained from posed images"};
  app.require_subcommand(1);
  app.set_version_flag("--version", [] { return std::string(hs_version()); });

  Session session(hs_session_create());
  if (!session) {
    std::fprintf(stderr, "error: out of memory\n");
    return 2;
  }
  hs_session* s = session.get();

  // Each subcommand parses into plain locals and queues one action.
  std::function<hs_status()> action;

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand(
      "synth", "Generate a synthetic multi-view dataset with reference meshes");
  Common synth_common;
  add_common(synth, synth_common, /*needs_out=*/true);
  int synth_count = 3, synth_views = 8, synth_size = 64;
  synth->add_option("--count", synth_count, "Identities to generate")
      ->check(CLI::PositiveNumber);
  synth->add_option("--views", synth_views, "Views per identity")
      ->check(CLI::PositiveNumber);
  synth->add_option("--resolution", synth_size, "Image size in pixels")
      ->check(CLI::PositiveNumber);
  synth->callback([&] {
    action = [&]() -> hs_status {
      hs_status rc = apply_common(s, synth_common);
      if (rc != HS_OK) return rc;
      rc = hs_synth(s, synth_count, synth_views, synth_size,
                    synth_common.out.c_str());
      if (rc == HS_OK) {
        std::printf("wrote %s\n",
                    join_path(synth_common.out, "manifest.json").c_str());
      }
      return rc;
    };
  });

  // train-template -----------------------------------------------------------
  auto* train = app.add_subcommand(
      "train-template",
      "Fit the shared template, deformations, and appearance to a dataset");
  Common train_common;
  add_common(train, train_common, true);
  std::string train_manifest;
  train->add_option("manifest", train_manifest, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  train->callback([&] {
    action = [&]() -> hs_status {
      hs_status rc = apply_common(s, train_common);
      if (rc != HS_OK) return rc;
      rc = hs_train_template(s, train_manifest.c_str(),
                             train_common.out.c_str());
      if (rc == HS_OK) {
        std::printf("wrote %s\n",
                    join_path(train_common.out, "stage1.ckpt").c_str());
      }
      return rc;
    };
  });

  // refine -------------------------------------------------------------------
  auto* refine = app.add_subcommand(
      "refine", "Add detail fields and refine identities from a checkpoint");
  Common refine_common;
  add_common(refine, refine_common, true);
  std::string refine_ckpt, refine_manifest, refine_id;
  refine->add_option("checkpoint", refine_ckpt, "Starting checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  refine->add_option("manifest", refine_manifest, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  refine->add_option("identity", refine_id,
                     "Identity to refine (default: every model identity)");
  refine->callback([&] {
    action = [&]() -> hs_status {
      hs_status rc = apply_common(s, refine_common);
      if (rc != HS_OK) return rc;
      rc = hs_refine(s, refine_ckpt.c_str(), refine_manifest.c_str(),
                     refine_id.empty() ? nullptr : refine_id.c_str(),
                     refine_common.out.c_str());
      if (rc == HS_OK) std::printf("refined checkpoints in %s\n",
                                   refine_common.out.c_str());
      return rc;
    };
  });

  // fit-unseen ---------------------------------------------------------------
  auto* unseen = app.add_subcommand(
      "fit-unseen",
      "Fit a new identity's deformation and codes against a frozen template");
  Common unseen_common;
  add_common(unseen, unseen_common, true);
  std::string unseen_ckpt, unseen_manifest, unseen_id;
  unseen->add_option("checkpoint", unseen_ckpt, "Stage-1 checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  unseen->add_option("manifest", unseen_manifest, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  unseen->add_option("identity", unseen_id, "Identity to fit")->required();
  unseen->callback([&] {
    action = [&]() -> hs_status {
      hs_status rc = apply_common(s, unseen_common);
      if (rc != HS_OK) return rc;
      rc = hs_fit_unseen(s, unseen_ckpt.c_str(), unseen_manifest.c_str(),
                         unseen_id.c_str(), unseen_common.out.c_str());
      if (rc == HS_OK) {
        std::printf("wrote %s\n",
                    join_path(unseen_common.out,
                              "unseen_" + unseen_id + ".ckpt")
                        .c_str());
      }
      return rc;
    };
  });

  // extract-mesh ---------------------------------------------------------
  auto* mesh = app.add_subcommand(
      "extract-mesh", "Extract an identity's surface as an OBJ mesh");
  Common mesh_common;
  add_common(mesh, mesh_common, true);
  std::string mesh_ckpt, mesh_id;
  int mesh_res = 0, mesh_stage = 0;
  mesh->add_option("checkpoint", mesh_ckpt, "Checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  mesh->add_option("identity", mesh_id, "Identity")->required();
  mesh->add_option("--resolution", mesh_res,
                   "Grid nodes per axis (default: config value)");
  mesh->add_option("--stage", mesh_stage, "Require this checkpoint stage")
      ->check(CLI::Range(1, 2));
  mesh->callback([&] {
    action = [&]() -> hs_status {
      hs_status rc = apply_common(s, mesh_common);
      if (rc != HS_OK) return rc;
      rc = check_stage(s, mesh_ckpt, mesh_stage);
      if (rc != HS_OK) return rc;
      const std::string out = join_path(mesh_common.out, mesh_id + ".obj");
      rc = hs_extract_mesh(s, mesh_ckpt.c_str(), mesh_id.c_str(), mesh_res,
                           out.c_str());
      if (rc == HS_OK) std::printf("wrote %s\n", out.c_str());
      return rc;
    };
  });

  // render ---------------------------------------------------------------
  auto* render = app.add_subcommand(
      "render", "Render an identity: a dataset view or a free arc pose");
  Common render_common;
  add_common(render, render_common, true);
  std::string render_ckpt, render_id, render_manifest;
  int render_view = -1, render_size = 128, render_stage = 0;
  double render_az = 0.0, render_el = 0.0, render_dist = 2.2;
  render->add_option("checkpoint", render_ckpt, "Checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  render->add_option("identity", render_id, "Identity")->required();
  auto* view_opt = render->add_option(
      "--view", render_view, "Dataset view index (needs --data)");
  auto* data_opt = render->add_option("--data", render_manifest,
                                      "Dataset manifest for --view")
                       ->check(CLI::ExistingFile);
  view_opt->needs(data_opt);
  render->add_option("--az", render_az, "Pose azimuth in degrees");
  render->add_option("--el", render_el, "Pose elevation in degrees");
  render->add_option("--dist", render_dist, "Pose camera distance");
  render->add_option("--resolution", render_size, "Pose image size")
      ->check(CLI::PositiveNumber);
  render->add_option("--stage", render_stage, "Require this checkpoint stage")
      ->check(CLI::Range(1, 2));
  render->callback([&] {
    action = [&]() -> hs_status {
      hs_status rc = apply_common(s, render_common);
      if (rc != HS_OK) return rc;
      rc = check_stage(s, render_ckpt, render_stage);
      if (rc != HS_OK) return rc;
      std::string out;
      if (render_view >= 0) {
        out = join_path(render_common.out,
                        render_id + "_view" + std::to_string(render_view) +
                            ".png");
        rc = hs_render_view(s, render_ckpt.c_str(), render_manifest.c_str(),
                            render_id.c_str(), render_view, out.c_str());
      } else {
        out = join_path(render_common.out, render_id + "_pose.png");
        rc = hs_render_pose(s, render_ckpt.c_str(), render_id.c_str(),
                            render_az, render_el, render_dist, render_size,
                            out.c_str());
      }
      if (rc == HS_OK) std::printf("wrote %s\n", out.c_str());
      return rc;
    };
  });

  // transfer-color ---------------------------------------------------------
  auto* transfer = app.add_subcommand(
      "transfer-color",
      "Render one identity's shape with another identity's appearance");
  Common transfer_common;
  add_common(transfer, transfer_common, true);
  std::string transfer_ckpt, transfer_geo, transfer_col;
  int transfer_size = 128;
  double transfer_az = 0.0, transfer_el = 0.0, transfer_dist = 2.2;
  transfer->add_option("checkpoint", transfer_ckpt, "Stage-2 checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  transfer->add_option("geometry", transfer_geo, "Identity providing shape")
      ->required();
  transfer->add_option("color", transfer_col, "Identity providing appearance")
      ->required();
  transfer->add_option("--az", transfer_az, "Azimuth in degrees");
  transfer->add_option("--el", transfer_el, "Elevation in degrees");
  transfer->add_option("--dist", transfer_dist, "Camera distance");
  transfer->add_option("--resolution", transfer_size, "Image size")
      ->check(CLI::PositiveNumber);
  transfer->callback([&] {
    action = [&]() -> hs_status {
      hs_status rc = apply_common(s, transfer_common);
      if (rc != HS_OK) return rc;
      const std::string out =
          join_path(transfer_common.out,
                    "transfer_" + transfer_geo + "_" + transfer_col + ".png");
      rc = hs_transfer_color(s, transfer_ckpt.c_str(), transfer_geo.c_str(),
                             transfer_col.c_str(), transfer_az, transfer_el,
                             transfer_dist, transfer_size, out.c_str());
      if (rc == HS_OK) std::printf("wrote %s\n", out.c_str());
      return rc;
    };
  });

  // eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand(
      "eval", "Chamfer distance and train/novel PSNR per identity, as JSON");
  Common eval_common;
  add_common(eval, eval_common, true);
  std::string eval_ckpt, eval_manifest, eval_ids;
  int eval_stage = 0;
  eval->add_option("checkpoint", eval_ckpt, "Checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("manifest", eval_manifest, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--identities", eval_ids,
                   "Comma-separated identities (default: all the model knows)");
  eval->add_option("--stage", eval_stage, "Require this checkpoint stage")
      ->check(CLI::Range(1, 2));
  eval->callback([&] {
    action = [&]() -> hs_status {
      hs_status rc = apply_common(s, eval_common);
      if (rc != HS_OK) return rc;
      rc = check_stage(s, eval_ckpt, eval_stage);
      if (rc != HS_OK) return rc;
      const std::string out = join_path(eval_common.out, "metrics.json");
      rc = hs_eval(s, eval_ckpt.c_str(), eval_manifest.c_str(),
                   eval_ids.empty() ? nullptr : eval_ids.c_str(), out.c_str());
      if (rc == HS_OK) std::printf("wrote %s\n", out.c_str());
      return rc;
    };
  });

  // info -------------------------------------------------------------------
  auto* info =
      app.add_subcommand("info", "Describe a checkpoint: stage, step, identities");
  Common info_common;
  add_common(info, info_common, false);
  std::string info_ckpt;
  info->add_option("checkpoint", info_ckpt, "Checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  info->callback([&] {
    action = [&]() -> hs_status {
      int stage = 0;
      int64_t step = 0;
      char ids[4096] = {0};
      const hs_status rc = hs_checkpoint_info(s, info_ckpt.c_str(), &stage,
                                              &step, ids, sizeof ids);
      if (rc == HS_OK) {
        std::printf("stage: %d\nstep: %" PRId64 "\nidentities: %s\n", stage,
                    step, ids);
      }
      return rc;
    };
  });

  // gradcheck ----------------------------------------------------------------
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Audit analytic gradients against finite differences");
  Common gradcheck_common;
  add_common(gradcheck, gradcheck_common, false);
  gradcheck->callback([&] {
    action = [&]() -> hs_status {
      hs_status rc = apply_common(s, gradcheck_common);
      if (rc != HS_OK) return rc;
      std::string report;
      if (!gradcheck_common.out.empty()) {
        report = join_path(gradcheck_common.out, "gradcheck.txt");
      }
      rc = hs_gradcheck(s, report.empty() ? nullptr : report.c_str());
      if (rc == HS_OK) {
        std::printf("gradient audit passed%s%s\n",
                    report.empty() ? "" : "; wrote ", report.c_str());
      }
      return rc;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems exit 1, --help/--version 0
  }

  const hs_status rc = action();
  if (rc != HS_OK) {
    // check_stage prints its own message and leaves the session error empty.
    const char* message = hs_last_error(s);
    if (message != nullptr && *message != '\0') {
      std::fprintf(stderr, "error: %s\n", message);
    }
  }
  return static_cast<int>(rc);
}
