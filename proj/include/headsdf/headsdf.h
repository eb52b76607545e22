/* headsdf — C interface to the head-reconstruction library.
 *
 * The library learns a shared head template as a neural signed distance
 * field, bends it into individual identities with per-identity deformation
 * and detail fields, and fits everything to posed multi-view images through
 * a volume renderer. This header exposes the whole pipeline — synthetic data
 * generation, the two training phases, unseen-identity fitting, mesh
 * extraction, rendering, appearance transfer, and metrics — behind an opaque
 * session handle.
 *
 * Conventions:
 *   - Every operation returns hs_status; HS_OK is 0, failures are nonzero
 *     and leave a human-readable message in hs_last_error().
 *   - The session carries a config (defaults unless hs_load_config is
 *     called) and a seed. Operations that resume from a checkpoint fall back
 *     to the config stored inside that checkpoint when the session has not
 *     loaded one, so a pipeline driven with a single config file behaves the
 *     same whether options come from the session or the checkpoint.
 *   - Paths are UTF-8, NUL-terminated. Output directories are created on
 *     demand.
 *   - A session is not thread-safe; use one per thread.
 */

#ifndef HEADSDF_H
#define HEADSDF_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct hs_session hs_session;

typedef enum hs_status {
  HS_OK = 0,      /* success */
  HS_USAGE = 1,   /* caller error: bad arguments, wrong model stage, ... */
  HS_DATA = 2,    /* unreadable/invalid files: configs, datasets, ... */
  HS_NUMERIC = 3  /* numerical failure: non-finite loss, empty level set */
} hs_status;

/* Library version as "major.minor.patch". */
const char* hs_version(void);

/* Create a session with default config and seed 0. Returns NULL only on
 * allocation failure. Destroy with hs_session_destroy (NULL is ignored). */
hs_session* hs_session_create(void);
void hs_session_destroy(hs_session* session);

/* Message from the session's most recent failing call, or "" after a
 * success. The pointer stays valid until the next call on the session. */
const char* hs_last_error(const hs_session* session);

/* Replace the session config with the JSON file at config_path. */
hs_status hs_load_config(hs_session* session, const char* config_path);

/* Seed for everything downstream: model init, ray sampling, jitter. */
hs_status hs_set_seed(hs_session* session, uint64_t seed);

/* Generate a synthetic dataset: n_identities procedural heads, n_views
 * posed renders each at image_size^2, plus reference meshes and a manifest
 * (manifest.json) under out_dir. */
hs_status hs_synth(hs_session* session, int n_identities, int n_views,
                   int image_size, const char* out_dir);

/* Phase one: fit the shared template, deformations, and appearance to every
 * identity in the dataset. Writes stage1.ckpt and stage1_loss.csv under
 * out_dir. */
hs_status hs_train_template(hs_session* session, const char* manifest_path,
                            const char* out_dir);

/* Phase two: add detail fields and refine one identity (or each model
 * identity when identity is NULL), starting from checkpoint_path. Writes
 * refined_<id>.ckpt and refine_<id>_loss.csv per identity under out_dir. */
hs_status hs_refine(hs_session* session, const char* checkpoint_path,
                    const char* manifest_path, const char* identity,
                    const char* out_dir);

/* Fit a new identity's deformation and codes against a frozen phase-one
 * model. The identity must exist in the dataset but not in the checkpoint.
 * Writes unseen_<id>.ckpt and unseen_<id>_loss.csv under out_dir. */
hs_status hs_fit_unseen(hs_session* session, const char* checkpoint_path,
                        const char* manifest_path, const char* identity,
                        const char* out_dir);

/* Extract one identity's surface as an OBJ triangle mesh. resolution <= 0
 * means the config's mesh resolution. */
hs_status hs_extract_mesh(hs_session* session, const char* checkpoint_path,
                          const char* identity, int resolution,
                          const char* out_obj);

/* Render a dataset view of an identity to a PNG. */
hs_status hs_render_view(hs_session* session, const char* checkpoint_path,
                         const char* manifest_path, const char* identity,
                         int view_index, const char* out_png);

/* Render an identity from a camera on the viewing arc: azimuth/elevation in
 * degrees, distance in scene units, square image_size. */
hs_status hs_render_pose(hs_session* session, const char* checkpoint_path,
                         const char* identity, double azimuth_deg,
                         double elevation_deg, double distance,
                         int image_size, const char* out_png);

/* Render geometry_identity's shape shaded with color_identity's appearance
 * from an arc camera. Requires a phase-two checkpoint. */
hs_status hs_transfer_color(hs_session* session, const char* checkpoint_path,
                            const char* geometry_identity,
                            const char* color_identity, double azimuth_deg,
                            double elevation_deg, double distance,
                            int image_size, const char* out_png);

/* Compute chamfer distance and train/novel PSNR per identity and write the
 * report as JSON. identities is a comma-separated list; NULL or "" means
 * every dataset identity the model knows. */
hs_status hs_eval(hs_session* session, const char* checkpoint_path,
                  const char* manifest_path, const char* identities,
                  const char* out_json);

/* Audit analytic gradients of every loss term against finite differences on
 * a small model. Writes the per-term report to out_report when non-NULL.
 * Returns HS_NUMERIC if any term is out of tolerance. */
hs_status hs_gradcheck(hs_session* session, const char* out_report);

/* Describe a checkpoint without training anything. Any output may be NULL:
 * stage receives 1 or 2, step the training step it was saved at, identities
 * a comma-separated id list (NUL-terminated, truncated to fit
 * identities_capacity). */
hs_status hs_checkpoint_info(hs_session* session, const char* checkpoint_path,
                             int* stage, int64_t* step, char* identities,
                             int identities_capacity);

#ifdef __cplusplus
}  /* extern "C" */
#endif

#endif  /* HEADSDF_H */
